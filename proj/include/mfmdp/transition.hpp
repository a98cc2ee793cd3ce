#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfmdp/core.hpp"

namespace mfmdp {

// Configuration of the macro state-transition model and its training.
// paper_scale() carries the published hyperparameters; desk_scale() is the
// default small architecture used throughout the tests.
struct TransitionConfig {
  int d_model = 32;
  int layers = 2;
  int heads = 2;
  int d_ff = 64;
  double dropout = 0.0;        // residual dropout, training only
  double learning_rate = 3e-3;
  int batch_size = 4;          // events per optimizer step
  int max_epochs = 20;
  double weight_decay = 0.0;
  double grad_clip = 1.0;      // global norm
  int rollout_horizon = 30;    // K
  double rollout_weight = 1.0; // alpha on the rollout-consistency term
  int rollout_stride = 1;      // subsample rollout starts during training
  int text_dims = 64;
  int persona_dims = 64;
  int max_seq = 4096;          // upper bound on training sequence length
  int attn_window = 64;        // causal attention span
  std::uint64_t hash_seed = 7;
  std::uint64_t seed = 1;

  static TransitionConfig desk_scale();
  static TransitionConfig paper_scale();

  void validate() const;
  int context_width(std::size_t n_states) const;
};

// Fixed-width encoded context x_t = (r_{t-1}, m_{t-1}, pooled personas, c_t).
struct TransitionContext {
  std::vector<double> values;
  std::size_t m_offset = 0;
  std::size_t m_size = 0;
};

class ContextEncoder {
 public:
  ContextEncoder(StateSpace states, int text_dims, int persona_dims, std::uint64_t hash_seed);

  int width() const { return width_; }
  std::size_t m_offset() const { return m_offset_; }
  const StateSpace& states() const { return states_; }

  TransitionContext encode(const Synopsis& synopsis, const MeanField& mean_field,
                           std::span<const AgentPersona> active_personas,
                           const std::optional<ExogenousSignal>& signal) const;

 private:
  StateSpace states_;
  int text_dims_;
  int persona_dims_;
  std::uint64_t hash_seed_;
  int width_;
  std::size_t m_offset_;
};

namespace detail {

// Offsets of every named tensor inside the flat parameter vector.
struct ParamLayout {
  int d_in = 0, d = 0, dff = 0, n_states = 0, layers = 0, heads = 0;
  std::size_t total = 0;

  std::size_t w_in = 0, b_in = 0;
  struct Layer {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    std::size_t ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
  };
  std::vector<Layer> layer;
  std::size_t lnf_g = 0, lnf_b = 0, w_head = 0, b_head = 0;

  static ParamLayout build(int d_in, int d, int dff, int n_states, int layers, int heads);
};

// Activations of one forward pass over a sequence; grown append-style so
// rollouts can extend a shared prefix.
struct SeqTrace {
  int len = 0;
  int d_in = 0, d = 0, dff = 0, S = 0, heads = 0, window = 0, layers = 0;
  std::size_t m_offset = 0;  // m-block offset inside each context row
  std::vector<double> x;     // len x d_in
  struct LayerActs {
    std::vector<double> ln1, ln1_mu, ln1_rstd;
    std::vector<double> q, k, v;
    std::vector<double> attp;  // len x heads x window
    std::vector<double> att, proj, res1;
    std::vector<double> ln2, ln2_mu, ln2_rstd;
    std::vector<double> ffp, ffa, res2;
    std::vector<double> drop1, drop2;  // scale factors, training only
  };
  std::vector<double> e;
  std::vector<LayerActs> layer;
  std::vector<double> lnf, lnf_mu, lnf_rstd;
  std::vector<double> logits, probs;

  SeqTrace prefix_copy(int new_len) const;
};

}  // namespace detail

class RngStream;

// Event-level causal sequence model f_psi: context history -> predicted
// mean field on the simplex (softmax head). Forward/backward are written
// out by hand; gradients are exact, including through rollout recursions.
class TransitionModel {
 public:
  TransitionModel(TransitionConfig config, std::size_t n_states);

  const TransitionConfig& config() const { return config_; }
  std::size_t n_states() const { return n_states_; }
  int context_width() const { return layout_.d_in; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const detail::ParamLayout& layout() const { return layout_; }

  // Forward over a whole history; returns the prediction at the last
  // position. Throws ShapeError on width mismatch.
  MeanField predict(std::span<const TransitionContext> history) const;

  // Predictions at every position of the history (one causal pass).
  std::vector<MeanField> predict_all(std::span<const TransitionContext> history) const;

  // --- incremental inference ------------------------------------------------
  // Ring-buffered keys/values; clones are cheap, used for candidate rollouts.
  struct InferenceState {
    int filled = 0;
    int next_slot = 0;
    std::size_t pos = 0;  // absolute position count
    std::vector<double> k, v;  // layers x window x d
  };
  InferenceState make_state() const;
  MeanField predict_next(InferenceState& state, const TransitionContext& context) const;

  // --- training internals (used by the loss/gradient code) -------------------
  void forward_append(detail::SeqTrace& trace, const TransitionContext& context, bool train_mode,
                      RngStream* dropout_rng) const;
  detail::SeqTrace make_trace() const;
  // Backward for upstream gradients on the probability outputs at selected
  // positions. Accumulates into param_grads (nullable) and, when requested,
  // into m-slice context gradients (len x S, nullable).
  void backward(const detail::SeqTrace& trace, int upto_len,
                std::span<const std::pair<int, std::vector<double>>> upstream_dprobs,
                std::vector<double>* param_grads, std::vector<double>* m_slice_grads) const;

 private:
  TransitionConfig config_;
  std::size_t n_states_;
  detail::ParamLayout layout_;
  std::vector<double> params_;
};

// K-step rollout by recursively feeding the model its own predictions. The
// m-block of future context k is overwritten with the previous prediction
// (the first one with `start`). `prefix` seeds the attention history.
std::vector<MeanField> rollout(const TransitionModel& model, const MeanField& start,
                               std::span<const TransitionContext> future_contexts, int horizon,
                               std::span<const TransitionContext> prefix = {});

// Same recursion against any one-step predictor (used by tests).
std::vector<MeanField> rollout(
    const std::function<MeanField(const TransitionContext&)>& predict_next, const MeanField& start,
    std::span<const TransitionContext> future_contexts, int horizon);

struct TransitionLoss {
  double seq = 0.0;
  double roll = 0.0;
  double total = 0.0;  // seq + alpha * roll
};

// Encoded training view of one event: contexts x_1..x_T built from the
// replayed synopsis channel plus targets m*_1..m*_T.
struct EventTensors {
  std::vector<TransitionContext> contexts;
  std::vector<MeanField> targets;
  std::string event_id;
};

EventTensors prepare_event(const EventTimeline& event, const ContextEncoder& encoder,
                           const ActionSpace& actions, std::size_t synopsis_budget = 128);

// L_seq + alpha * L_roll per the rollout recursion; stride subsamples the
// rollout starts (1 = the full sum).
TransitionLoss transition_loss(const TransitionModel& model, const EventTensors& event,
                               const TransitionConfig& config, int rollout_stride = 1);
TransitionLoss transition_loss(const TransitionModel& model, const EventTimeline& event,
                               const TransitionConfig& config);

// Loss plus exact parameter gradients (including the rollout recursion).
TransitionLoss transition_loss_grad(const TransitionModel& model, const EventTensors& event,
                                    const TransitionConfig& config, std::vector<double>& grads,
                                    bool train_mode, RngStream* dropout_rng, int rollout_stride);

// AdamW with decoupled weight decay, reimplemented from the published
// update equations; gradient clipping by global norm happens in step().
class AdamW {
 public:
  AdamW(std::size_t n_params, double lr, double weight_decay, double grad_clip);
  void step(std::vector<double>& params, std::vector<double>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  double weight_decay_, grad_clip_;
  long step_count_ = 0;
  std::vector<double> m_, v_;
};

struct TrainCurvePoint {
  int epoch = 0;
  double seq = 0.0, roll = 0.0, total = 0.0;
};

struct TransitionTrainResult {
  std::vector<TrainCurvePoint> curve;
};

TransitionTrainResult train_transition(TransitionModel& model,
                                       std::span<const EventTimeline> dataset,
                                       const ContextEncoder& encoder, const ActionSpace& actions,
                                       const TransitionConfig& config);
TransitionTrainResult train_transition_prepared(TransitionModel& model,
                                                std::span<const EventTensors> dataset,
                                                const TransitionConfig& config);

std::string loss_curve_csv(const TransitionTrainResult& result);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t params_checked = 0;
  bool pass = false;
};

// Central finite differences against the analytic gradient of L_trans over
// a random parameter subset. Dropout is disabled during the check.
GradCheckReport gradient_check(const TransitionModel& model, const EventTensors& event,
                               const TransitionConfig& config, double h, double tolerance,
                               std::size_t sample_params, std::uint64_t seed,
                               double corrupt_scale = 1.0);

std::string transition_checkpoint_json(const TransitionModel& model);
TransitionModel transition_from_checkpoint_json(const std::string& text);
void save_transition_checkpoint(const TransitionModel& model, const std::string& path);
TransitionModel load_transition_checkpoint(const std::string& path);

}  // namespace mfmdp
