#include "mfmdp/transition.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mfmdp/features.hpp"
#include "mfmdp/metrics.hpp"
#include "mfmdp/rng.hpp"
#include "mfmdp/summarizer.hpp"

namespace mfmdp {

using detail::ParamLayout;
using detail::SeqTrace;

TransitionConfig TransitionConfig::desk_scale() { return TransitionConfig{}; }

TransitionConfig TransitionConfig::paper_scale() {
  TransitionConfig c;
  c.d_model = 256;
  c.layers = 3;
  c.heads = 8;
  c.d_ff = 1024;
  c.dropout = 0.1;
  c.learning_rate = 2e-5;
  c.batch_size = 4;
  c.max_epochs = 20;
  c.weight_decay = 1e-5;
  c.grad_clip = 1.0;
  c.max_seq = 4096;
  c.rollout_horizon = 30;
  c.rollout_weight = 1.0;
  return c;
}

void TransitionConfig::validate() const {
  if (d_model <= 0 || layers <= 0 || heads <= 0 || d_ff <= 0) {
    throw ValidationError("transition config: dimensions must be positive");
  }
  if (d_model % heads != 0) throw ValidationError("transition config: heads must divide d_model");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ValidationError("transition config: dropout must be in [0, 1)");
  }
  if (learning_rate < 0.0 || weight_decay < 0.0 || grad_clip <= 0.0) {
    throw ValidationError("transition config: bad optimizer setting");
  }
  if (batch_size <= 0 || max_epochs < 0) throw ValidationError("transition config: bad schedule");
  if (rollout_horizon < 0 || rollout_stride <= 0) {
    throw ValidationError("transition config: bad rollout setting");
  }
  if (rollout_weight < 0.0) throw ValidationError("transition config: alpha must be >= 0");
  if (text_dims <= 0 || persona_dims <= 0) throw ValidationError("transition config: bad encoder dims");
  if (max_seq <= 0 || max_seq > 4096) {
    throw ValidationError("transition config: max_seq must be in (0, 4096]");
  }
  if (attn_window <= 0) throw ValidationError("transition config: attention window must be positive");
}

int TransitionConfig::context_width(std::size_t n_states) const {
  return 2 * text_dims + persona_dims + static_cast<int>(n_states);
}

// ---------------------------------------------------------------------------
// Context encoding

ContextEncoder::ContextEncoder(StateSpace states, int text_dims, int persona_dims,
                               std::uint64_t hash_seed)
    : states_(std::move(states)),
      text_dims_(text_dims),
      persona_dims_(persona_dims),
      hash_seed_(hash_seed) {
  if (text_dims_ <= 0 || persona_dims_ <= 0) throw ValidationError("encoder dims must be positive");
  width_ = 2 * text_dims_ + persona_dims_ + static_cast<int>(states_.size());
  m_offset_ = static_cast<std::size_t>(text_dims_);
}

TransitionContext ContextEncoder::encode(const Synopsis& synopsis, const MeanField& mean_field,
                                         std::span<const AgentPersona> active_personas,
                                         const std::optional<ExogenousSignal>& signal) const {
  if (mean_field.size() != states_.size()) {
    throw ShapeError("encode_context: mean field does not match the state space");
  }
  TransitionContext ctx;
  ctx.values.assign(static_cast<std::size_t>(width_), 0.0);
  ctx.m_offset = m_offset_;
  ctx.m_size = states_.size();
  double* base = ctx.values.data();
  hash_text_into({base, static_cast<std::size_t>(text_dims_)}, synopsis.text, hash_seed_);
  for (std::size_t s = 0; s < states_.size(); ++s) base[m_offset_ + s] = mean_field[s];
  // Mean of hashed persona profiles over the active set: order- and
  // size-invariant pooling.
  std::size_t persona_off = m_offset_ + states_.size();
  if (!active_personas.empty()) {
    std::vector<double> block(static_cast<std::size_t>(persona_dims_));
    for (const auto& p : active_personas) {
      hash_text_into(block, p.profile, hash_seed_ ^ 0x70657273ULL);
      for (int i = 0; i < persona_dims_; ++i) base[persona_off + i] += block[i];
    }
    for (int i = 0; i < persona_dims_; ++i) {
      base[persona_off + i] /= static_cast<double>(active_personas.size());
    }
  }
  std::size_t signal_off = persona_off + static_cast<std::size_t>(persona_dims_);
  hash_text_into({base + signal_off, static_cast<std::size_t>(text_dims_)},
                 signal ? signal->text : std::string(), hash_seed_ ^ 0x7369676eULL);
  return ctx;
}

// ---------------------------------------------------------------------------
// Parameter layout

ParamLayout ParamLayout::build(int d_in, int d, int dff, int n_states, int layers, int heads) {
  ParamLayout lay;
  lay.d_in = d_in;
  lay.d = d;
  lay.dff = dff;
  lay.n_states = n_states;
  lay.layers = layers;
  lay.heads = heads;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    std::size_t at = off;
    off += n;
    return at;
  };
  lay.w_in = take(static_cast<std::size_t>(d) * d_in);
  lay.b_in = take(d);
  lay.layer.resize(layers);
  for (auto& l : lay.layer) {
    l.ln1_g = take(d);
    l.ln1_b = take(d);
    l.w_qkv = take(static_cast<std::size_t>(3 * d) * d);
    l.b_qkv = take(3 * d);
    l.w_o = take(static_cast<std::size_t>(d) * d);
    l.b_o = take(d);
    l.ln2_g = take(d);
    l.ln2_b = take(d);
    l.w_ff1 = take(static_cast<std::size_t>(dff) * d);
    l.b_ff1 = take(dff);
    l.w_ff2 = take(static_cast<std::size_t>(d) * dff);
    l.b_ff2 = take(d);
  }
  lay.lnf_g = take(d);
  lay.lnf_b = take(d);
  lay.w_head = take(static_cast<std::size_t>(n_states) * d);
  lay.b_head = take(n_states);
  lay.total = off;
  return lay;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline void matvec(const double* W, const double* x, const double* b, double* y, int rows,
                   int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* w = W + static_cast<std::size_t>(r) * cols;
    double acc = b ? b[r] : 0.0;
    for (int c = 0; c < cols; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
}

// y = W^T dy accumulated into dx; dW += dy (outer) x; db += dy.
inline void matvec_backward(const double* W, const double* x, const double* dy, double* dx,
                            double* dW, double* db, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* w = W + static_cast<std::size_t>(r) * cols;
    if (dW) {
      double* gw = dW + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) gw[c] += g * x[c];
    }
    if (db) db[r] += g;
    if (dx) {
      for (int c = 0; c < cols; ++c) dx[c] += g * w[c];
    }
  }
}

inline void layer_norm(const double* x, const double* g, const double* b, double* y, double* mu_out,
                       double* rstd_out, int d) {
  double mu = 0.0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < d; ++i) y[i] = g[i] * (x[i] - mu) * rstd + b[i];
  *mu_out = mu;
  *rstd_out = rstd;
}

inline void layer_norm_backward(const double* dy, const double* x, double mu, double rstd,
                                const double* g, double* dx, double* dg, double* db, int d) {
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (int i = 0; i < d; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    const double dxhat = dy[i] * g[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
    if (dg) dg[i] += dy[i] * xhat;
    if (db) db[i] += dy[i];
  }
  const double inv_d = 1.0 / d;
  for (int i = 0; i < d; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    const double dxhat = dy[i] * g[i];
    dx[i] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
  }
}

inline double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

inline void softmax_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

// KL(target || probs) with the metric module's smoothing; fills d/dprobs.
double kl_value_dprobs(const MeanField& target, const double* probs, int n, double* dprobs) {
  const double denom = 1.0 + n * kKlSmoothing;
  double val = 0.0;
  for (int i = 0; i < n; ++i) {
    dprobs[i] = 0.0;
    const double p = target[static_cast<std::size_t>(i)];
    if (p <= 0.0) continue;
    const double q = (probs[i] + kKlSmoothing) / denom;
    val += p * std::log(p / q);
    dprobs[i] = -p / q / denom;
  }
  return std::max(val, 0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

TransitionModel::TransitionModel(TransitionConfig config, std::size_t n_states)
    : config_(std::move(config)), n_states_(n_states) {
  config_.validate();
  if (n_states_ == 0) throw ValidationError("transition model needs a non-empty state space");
  layout_ = ParamLayout::build(config_.context_width(n_states_), config_.d_model, config_.d_ff,
                               static_cast<int>(n_states_), config_.layers, config_.heads);
  params_.assign(layout_.total, 0.0);
  RngStream rng = RngStream::fork(config_.seed, "transition.init");
  auto init_normal = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = 0.02 * rng.next_normal();
  };
  auto init_ones = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = 1.0;
  };
  init_normal(layout_.w_in, static_cast<std::size_t>(layout_.d) * layout_.d_in);
  for (const auto& l : layout_.layer) {
    init_ones(l.ln1_g, layout_.d);
    init_normal(l.w_qkv, static_cast<std::size_t>(3 * layout_.d) * layout_.d);
    init_normal(l.w_o, static_cast<std::size_t>(layout_.d) * layout_.d);
    init_ones(l.ln2_g, layout_.d);
    init_normal(l.w_ff1, static_cast<std::size_t>(layout_.dff) * layout_.d);
    init_normal(l.w_ff2, static_cast<std::size_t>(layout_.d) * layout_.dff);
  }
  init_ones(layout_.lnf_g, layout_.d);
  init_normal(layout_.w_head, static_cast<std::size_t>(layout_.n_states) * layout_.d);
}

SeqTrace TransitionModel::make_trace() const {
  SeqTrace t;
  t.d_in = layout_.d_in;
  t.d = layout_.d;
  t.dff = layout_.dff;
  t.S = layout_.n_states;
  t.heads = layout_.heads;
  t.window = std::min(config_.attn_window, config_.max_seq);
  t.layers = layout_.layers;
  t.layer.resize(layout_.layers);
  return t;
}

SeqTrace SeqTrace::prefix_copy(int new_len) const {
  SeqTrace out = *this;
  out.len = new_len;
  auto cut = [new_len](std::vector<double>& v, int row) {
    v.resize(static_cast<std::size_t>(new_len) * row);
  };
  cut(out.x, d_in);
  cut(out.e, d);
  for (auto& l : out.layer) {
    cut(l.ln1, d);
    cut(l.ln1_mu, 1);
    cut(l.ln1_rstd, 1);
    cut(l.q, d);
    cut(l.k, d);
    cut(l.v, d);
    cut(l.attp, heads * window);
    cut(l.att, d);
    cut(l.proj, d);
    cut(l.res1, d);
    cut(l.ln2, d);
    cut(l.ln2_mu, 1);
    cut(l.ln2_rstd, 1);
    cut(l.ffp, dff);
    cut(l.ffa, dff);
    cut(l.res2, d);
    if (!l.drop1.empty()) cut(l.drop1, d);
    if (!l.drop2.empty()) cut(l.drop2, d);
  }
  cut(out.lnf, d);
  cut(out.lnf_mu, 1);
  cut(out.lnf_rstd, 1);
  cut(out.logits, S);
  cut(out.probs, S);
  return out;
}

void TransitionModel::forward_append(SeqTrace& trace, const TransitionContext& context,
                                     bool train_mode, RngStream* dropout_rng) const {
  if (static_cast<int>(context.values.size()) != layout_.d_in) {
    throw ShapeError("context width " + std::to_string(context.values.size()) +
                     " does not match model width " + std::to_string(layout_.d_in));
  }
  if (trace.len >= config_.max_seq) throw HorizonError("sequence exceeds max_seq");
  const int p = trace.len;
  const int d = layout_.d;
  const int dff = layout_.dff;
  const int S = layout_.n_states;
  const int H = layout_.heads;
  const int dh = d / H;
  const int W = trace.window;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* P = params_.data();

  auto grow = [](std::vector<double>& v, int row) {
    v.resize(v.size() + static_cast<std::size_t>(row), 0.0);
  };

  if (trace.len == 0) {
    trace.m_offset = context.m_offset;
  } else if (trace.m_offset != context.m_offset) {
    throw ShapeError("context m-block offset changed mid-sequence");
  }
  grow(trace.x, layout_.d_in);
  std::memcpy(trace.x.data() + static_cast<std::size_t>(p) * layout_.d_in, context.values.data(),
              sizeof(double) * layout_.d_in);

  grow(trace.e, d);
  double* e = trace.e.data() + static_cast<std::size_t>(p) * d;
  matvec(P + layout_.w_in, context.values.data(), P + layout_.b_in, e, d, layout_.d_in);

  std::vector<double> h(e, e + d);
  const bool use_dropout = train_mode && config_.dropout > 0.0;
  for (int li = 0; li < layout_.layers; ++li) {
    auto& L = trace.layer[li];
    const auto& lp = layout_.layer[li];
    grow(L.ln1, d);
    grow(L.ln1_mu, 1);
    grow(L.ln1_rstd, 1);
    double* ln1 = L.ln1.data() + static_cast<std::size_t>(p) * d;
    layer_norm(h.data(), P + lp.ln1_g, P + lp.ln1_b, ln1, &L.ln1_mu[p], &L.ln1_rstd[p], d);

    grow(L.q, d);
    grow(L.k, d);
    grow(L.v, d);
    double* q = L.q.data() + static_cast<std::size_t>(p) * d;
    double* k = L.k.data() + static_cast<std::size_t>(p) * d;
    double* v = L.v.data() + static_cast<std::size_t>(p) * d;
    matvec(P + lp.w_qkv, ln1, P + lp.b_qkv, q, d, d);
    matvec(P + lp.w_qkv + static_cast<std::size_t>(d) * d, ln1, P + lp.b_qkv + d, k, d, d);
    matvec(P + lp.w_qkv + 2 * static_cast<std::size_t>(d) * d, ln1, P + lp.b_qkv + 2 * d, v, d, d);

    grow(L.attp, H * W);
    grow(L.att, d);
    double* attp = L.attp.data() + static_cast<std::size_t>(p) * H * W;
    double* att = L.att.data() + static_cast<std::size_t>(p) * d;
    const int ws = std::max(0, p + 1 - W);
    const int span = p + 1 - ws;
    for (int hd = 0; hd < H; ++hd) {
      double* probs = attp + static_cast<std::size_t>(hd) * W;
      const double* qh = q + hd * dh;
      for (int j = 0; j < span; ++j) {
        const double* kj = L.k.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += qh[c] * kj[c];
        probs[j] = s * inv_sqrt_dh;
      }
      softmax_inplace(probs, span);
      double* ah = att + hd * dh;
      for (int c = 0; c < dh; ++c) ah[c] = 0.0;
      for (int j = 0; j < span; ++j) {
        const double* vj = L.v.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
        const double w = probs[j];
        for (int c = 0; c < dh; ++c) ah[c] += w * vj[c];
      }
    }

    grow(L.proj, d);
    double* proj = L.proj.data() + static_cast<std::size_t>(p) * d;
    matvec(P + lp.w_o, att, P + lp.b_o, proj, d, d);

    if (use_dropout) {
      grow(L.drop1, d);
      double* mask = L.drop1.data() + static_cast<std::size_t>(p) * d;
      const double scale = 1.0 / (1.0 - config_.dropout);
      for (int i = 0; i < d; ++i) {
        mask[i] = dropout_rng->next_bernoulli(config_.dropout) ? 0.0 : scale;
      }
    }
    grow(L.res1, d);
    double* res1 = L.res1.data() + static_cast<std::size_t>(p) * d;
    for (int i = 0; i < d; ++i) {
      const double m = use_dropout ? L.drop1[static_cast<std::size_t>(p) * d + i] : 1.0;
      res1[i] = h[i] + m * proj[i];
    }

    grow(L.ln2, d);
    grow(L.ln2_mu, 1);
    grow(L.ln2_rstd, 1);
    double* ln2 = L.ln2.data() + static_cast<std::size_t>(p) * d;
    layer_norm(res1, P + lp.ln2_g, P + lp.ln2_b, ln2, &L.ln2_mu[p], &L.ln2_rstd[p], d);

    grow(L.ffp, dff);
    grow(L.ffa, dff);
    double* ffp = L.ffp.data() + static_cast<std::size_t>(p) * dff;
    double* ffa = L.ffa.data() + static_cast<std::size_t>(p) * dff;
    matvec(P + lp.w_ff1, ln2, P + lp.b_ff1, ffp, dff, d);
    for (int i = 0; i < dff; ++i) ffa[i] = gelu(ffp[i]);

    std::vector<double> ffo(d);
    matvec(P + lp.w_ff2, ffa, P + lp.b_ff2, ffo.data(), d, dff);

    if (use_dropout) {
      grow(L.drop2, d);
      double* mask = L.drop2.data() + static_cast<std::size_t>(p) * d;
      const double scale = 1.0 / (1.0 - config_.dropout);
      for (int i = 0; i < d; ++i) {
        mask[i] = dropout_rng->next_bernoulli(config_.dropout) ? 0.0 : scale;
      }
    }
    grow(L.res2, d);
    double* res2 = L.res2.data() + static_cast<std::size_t>(p) * d;
    for (int i = 0; i < d; ++i) {
      const double m = use_dropout ? L.drop2[static_cast<std::size_t>(p) * d + i] : 1.0;
      res2[i] = res1[i] + m * ffo[i];
    }
    std::copy(res2, res2 + d, h.begin());
  }

  grow(trace.lnf, d);
  grow(trace.lnf_mu, 1);
  grow(trace.lnf_rstd, 1);
  double* lnf = trace.lnf.data() + static_cast<std::size_t>(p) * d;
  layer_norm(h.data(), P + layout_.lnf_g, P + layout_.lnf_b, lnf, &trace.lnf_mu[p],
             &trace.lnf_rstd[p], d);

  grow(trace.logits, S);
  grow(trace.probs, S);
  double* logits = trace.logits.data() + static_cast<std::size_t>(p) * S;
  double* probs = trace.probs.data() + static_cast<std::size_t>(p) * S;
  matvec(P + layout_.w_head, lnf, P + layout_.b_head, logits, S, d);
  std::copy(logits, logits + S, probs);
  softmax_inplace(probs, S);

  trace.len = p + 1;
}

void TransitionModel::backward(const SeqTrace& trace, int upto_len,
                               std::span<const std::pair<int, std::vector<double>>> upstream_dprobs,
                               std::vector<double>* param_grads,
                               std::vector<double>* m_slice_grads) const {
  const int L = upto_len;
  const int d = layout_.d;
  const int dff = layout_.dff;
  const int S = layout_.n_states;
  const int H = layout_.heads;
  const int dh = d / H;
  const int W = trace.window;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* P = params_.data();
  double* G = param_grads ? param_grads->data() : nullptr;

  std::vector<double> dres(static_cast<std::size_t>(L) * d, 0.0);
  std::vector<char> active(L, 0);

  // Head + final layer norm backward, only at positions carrying upstream.
  std::vector<double> dlnf(d);
  for (const auto& [pos, dprobs] : upstream_dprobs) {
    if (pos < 0 || pos >= L) throw ShapeError("upstream position outside the trace");
    const double* probs = trace.probs.data() + static_cast<std::size_t>(pos) * S;
    double dot = 0.0;
    for (int i = 0; i < S; ++i) dot += probs[i] * dprobs[i];
    std::vector<double> dlogits(S);
    for (int i = 0; i < S; ++i) dlogits[i] = probs[i] * (dprobs[i] - dot);

    std::fill(dlnf.begin(), dlnf.end(), 0.0);
    const double* lnf = trace.lnf.data() + static_cast<std::size_t>(pos) * d;
    matvec_backward(P + layout_.w_head, lnf, dlogits.data(), dlnf.data(),
                    G ? G + layout_.w_head : nullptr, G ? G + layout_.b_head : nullptr, S, d);
    const double* x = (layout_.layers > 0)
                          ? trace.layer.back().res2.data() + static_cast<std::size_t>(pos) * d
                          : trace.e.data() + static_cast<std::size_t>(pos) * d;
    layer_norm_backward(dlnf.data(), x, trace.lnf_mu[pos], trace.lnf_rstd[pos], P + layout_.lnf_g,
                        dres.data() + static_cast<std::size_t>(pos) * d,
                        G ? G + layout_.lnf_g : nullptr, G ? G + layout_.lnf_b : nullptr, d);
    active[pos] = 1;
  }

  std::vector<double> dres1(static_cast<std::size_t>(L) * d);
  std::vector<double> dq(static_cast<std::size_t>(L) * d);
  std::vector<double> dk(static_cast<std::size_t>(L) * d);
  std::vector<double> dv(static_cast<std::size_t>(L) * d);
  std::vector<double> scratch_dff(dff);
  std::vector<double> scratch_d(d);

  for (int li = layout_.layers - 1; li >= 0; --li) {
    const auto& La = trace.layer[li];
    const auto& lp = layout_.layer[li];
    const double* in_l = li == 0 ? trace.e.data() : trace.layer[li - 1].res2.data();

    std::fill(dres1.begin(), dres1.end(), 0.0);
    // FFN sub-block.
    for (int pos = 0; pos < L; ++pos) {
      if (!active[pos]) continue;
      const double* drow = dres.data() + static_cast<std::size_t>(pos) * d;
      double* d1 = dres1.data() + static_cast<std::size_t>(pos) * d;
      // Residual pass-through.
      for (int i = 0; i < d; ++i) d1[i] = drow[i];
      // Branch: dropout -> W2 -> gelu -> W1 -> LN2.
      std::vector<double>& dffo = scratch_d;
      for (int i = 0; i < d; ++i) {
        const double m = La.drop2.empty() ? 1.0 : La.drop2[static_cast<std::size_t>(pos) * d + i];
        dffo[i] = drow[i] * m;
      }
      std::fill(scratch_dff.begin(), scratch_dff.end(), 0.0);
      matvec_backward(P + lp.w_ff2, La.ffa.data() + static_cast<std::size_t>(pos) * dff,
                      dffo.data(), scratch_dff.data(), G ? G + lp.w_ff2 : nullptr,
                      G ? G + lp.b_ff2 : nullptr, d, dff);
      const double* ffp = La.ffp.data() + static_cast<std::size_t>(pos) * dff;
      for (int i = 0; i < dff; ++i) scratch_dff[i] *= gelu_grad(ffp[i]);
      std::vector<double> dln2(d, 0.0);
      matvec_backward(P + lp.w_ff1, La.ln2.data() + static_cast<std::size_t>(pos) * d,
                      scratch_dff.data(), dln2.data(), G ? G + lp.w_ff1 : nullptr,
                      G ? G + lp.b_ff1 : nullptr, dff, d);
      layer_norm_backward(dln2.data(), La.res1.data() + static_cast<std::size_t>(pos) * d,
                          La.ln2_mu[pos], La.ln2_rstd[pos], P + lp.ln2_g, d1,
                          G ? G + lp.ln2_g : nullptr, G ? G + lp.ln2_b : nullptr, d);
    }

    // Attention sub-block.
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int pos = 0; pos < L; ++pos) {
      if (!active[pos]) continue;
      std::vector<double>& dproj = scratch_d;
      const double* d1 = dres1.data() + static_cast<std::size_t>(pos) * d;
      for (int i = 0; i < d; ++i) {
        const double m = La.drop1.empty() ? 1.0 : La.drop1[static_cast<std::size_t>(pos) * d + i];
        dproj[i] = d1[i] * m;
      }
      std::vector<double> datt(d, 0.0);
      matvec_backward(P + lp.w_o, La.att.data() + static_cast<std::size_t>(pos) * d, dproj.data(),
                      datt.data(), G ? G + lp.w_o : nullptr, G ? G + lp.b_o : nullptr, d, d);
      const int ws = std::max(0, pos + 1 - W);
      const int span = pos + 1 - ws;
      for (int hd = 0; hd < H; ++hd) {
        const double* probs = La.attp.data() + (static_cast<std::size_t>(pos) * H + hd) * W;
        const double* datt_h = datt.data() + hd * dh;
        double sum_pd = 0.0;
        std::vector<double> dp(span);
        for (int j = 0; j < span; ++j) {
          const double* vj = La.v.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) acc += datt_h[c] * vj[c];
          dp[j] = acc;
          sum_pd += probs[j] * acc;
        }
        const double* qh = La.q.data() + static_cast<std::size_t>(pos) * d + hd * dh;
        double* dqh = dq.data() + static_cast<std::size_t>(pos) * d + hd * dh;
        for (int j = 0; j < span; ++j) {
          const double ds = probs[j] * (dp[j] - sum_pd);
          const double* kj = La.k.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
          double* dkj = dk.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
          double* dvj = dv.data() + static_cast<std::size_t>(ws + j) * d + hd * dh;
          const double w = probs[j];
          for (int c = 0; c < dh; ++c) {
            dqh[c] += ds * kj[c] * inv_sqrt_dh;
            dkj[c] += ds * qh[c] * inv_sqrt_dh;
            dvj[c] += w * datt_h[c];
          }
          active[ws + j] = 1;
        }
      }
    }

    // QKV projection + LN1; new dres = residual + attention branch.
    for (int pos = 0; pos < L; ++pos) {
      if (!active[pos]) continue;
      std::vector<double> dln1(d, 0.0);
      const double* ln1 = La.ln1.data() + static_cast<std::size_t>(pos) * d;
      matvec_backward(P + lp.w_qkv, ln1, dq.data() + static_cast<std::size_t>(pos) * d,
                      dln1.data(), G ? G + lp.w_qkv : nullptr, G ? G + lp.b_qkv : nullptr, d, d);
      matvec_backward(P + lp.w_qkv + static_cast<std::size_t>(d) * d, ln1,
                      dk.data() + static_cast<std::size_t>(pos) * d, dln1.data(),
                      G ? G + lp.w_qkv + static_cast<std::size_t>(d) * d : nullptr,
                      G ? G + lp.b_qkv + d : nullptr, d, d);
      matvec_backward(P + lp.w_qkv + 2 * static_cast<std::size_t>(d) * d, ln1,
                      dv.data() + static_cast<std::size_t>(pos) * d, dln1.data(),
                      G ? G + lp.w_qkv + 2 * static_cast<std::size_t>(d) * d : nullptr,
                      G ? G + lp.b_qkv + 2 * d : nullptr, d, d);
      double* drow = dres.data() + static_cast<std::size_t>(pos) * d;
      const double* d1 = dres1.data() + static_cast<std::size_t>(pos) * d;
      for (int i = 0; i < d; ++i) drow[i] = d1[i];
      layer_norm_backward(dln1.data(), in_l + static_cast<std::size_t>(pos) * d, La.ln1_mu[pos],
                          La.ln1_rstd[pos], P + lp.ln1_g, drow, G ? G + lp.ln1_g : nullptr,
                          G ? G + lp.ln1_b : nullptr, d);
    }
  }

  // Input projection.
  const std::size_t m_off = m_slice_grads ? trace_m_offset_ : 0;
  for (int pos = 0; pos < L; ++pos) {
    if (!active[pos]) continue;
    const double* de = dres.data() + static_cast<std::size_t>(pos) * d;
    const double* x = trace.x.data() + static_cast<std::size_t>(pos) * layout_.d_in;
    if (G) {
      matvec_backward(P + layout_.w_in, x, de, nullptr, G + layout_.w_in, G + layout_.b_in, d,
                      layout_.d_in);
    }
    if (m_slice_grads) {
      double* mg = m_slice_grads->data() + static_cast<std::size_t>(pos) * S;
      for (int r = 0; r < d; ++r) {
        const double g = de[r];
        if (g == 0.0) continue;
        const double* w = P + layout_.w_in + static_cast<std::size_t>(r) * layout_.d_in + m_off;
        for (int s = 0; s < S; ++s) mg[s] += g * w[s];
      }
    }
  }
}

MeanField TransitionModel::predict(std::span<const TransitionContext> history) const {
  if (history.empty()) throw EmptyWindow("predict: empty context history");
  SeqTrace trace = make_trace();
  for (const auto& ctx : history) forward_append(trace, ctx, false, nullptr);
  const int S = layout_.n_states;
  const double* probs = trace.probs.data() + static_cast<std::size_t>(trace.len - 1) * S;
  return MeanField::from_probs(std::vector<double>(probs, probs + S));
}

std::vector<MeanField> TransitionModel::predict_all(
    std::span<const TransitionContext> history) const {
  if (history.empty()) throw EmptyWindow("predict_all: empty context history");
  SeqTrace trace = make_trace();
  for (const auto& ctx : history) forward_append(trace, ctx, false, nullptr);
  const int S = layout_.n_states;
  std::vector<MeanField> out;
  out.reserve(history.size());
  for (int p = 0; p < trace.len; ++p) {
    const double* probs = trace.probs.data() + static_cast<std::size_t>(p) * S;
    out.push_back(MeanField::from_probs(std::vector<double>(probs, probs + S)));
  }
  return out;
}

}  // namespace mfmdp
