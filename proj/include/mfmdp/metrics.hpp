#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfmdp/core.hpp"
#include "mfmdp/labels.hpp"

namespace mfmdp {

inline constexpr double kKlSmoothing = 1e-10;
inline constexpr double kProbFloor = 1e-10;

// KL(p || q) in nats with q smoothed to (q + eps)/(1 + n*eps) so the result
// stays finite; 0*ln(0/.) := 0. Order matches the paper: real || simulated.
double kl_divergence(const MeanField& p, const MeanField& q);
double kl_divergence(std::span<const double> p, std::span<const double> q);

// 1-Wasserstein on ordered label indices with unit spacing; the positions
// overload supports a custom 1-D ground spacing.
double wasserstein_distance(const MeanField& p, const MeanField& q);
double wasserstein_distance(const MeanField& p, const MeanField& q,
                            std::span<const double> positions);

enum class DtwCost { L1, L2 };

// Classic DTW alignment cost over two series of vectors.
double dtw_distance(std::span<const std::vector<double>> series_a,
                    std::span<const std::vector<double>> series_b,
                    DtwCost step_cost = DtwCost::L1);
double dtw_distance(std::span<const MeanField> series_a, std::span<const MeanField> series_b,
                    DtwCost step_cost = DtwCost::L1);

// Mean of -ln(prob) with the probability floored at 1e-10.
double mean_nll(std::span<const double> probs_of_truth);

struct F1Scores {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
};

// Per-class F1 with 0/0 := 0. Macro averages over classes present in either
// sequence; micro pools counts (equals accuracy for single-label data).
F1Scores f1_scores(std::span<const std::string> true_labels,
                   std::span<const std::string> predicted_labels, const LabelSpace& label_set);

// ---------------------------------------------------------------------------
// Annotation

struct KeywordRule {
  std::string keyword;
  std::string label;
};

struct AnnotatorConfig {
  // Dimension -> ordered rules; the first keyword found in the action text
  // wins. Dimensions without a match fall back to their default label.
  std::map<std::string, std::vector<KeywordRule>> keyword_rules;
};

class TextServiceClient;

enum class AnnotatorBackend { Native, RuleBased, External };

struct Annotator {
  AnnotatorBackend backend = AnnotatorBackend::RuleBased;
  AnnotatorConfig config;
  TextServiceClient* client = nullptr;  // required for External
};

// Labels over all 8 dimensions. Native labels pass through unchanged; the
// rule-based backend fills missing dimensions from keyword rules or their
// defaults; the external backend issues one annotation request.
std::map<std::string, std::string> annotate_action(const ActionRecord& action,
                                                   const Annotator& annotator,
                                                   const StateSpace& states);

// ---------------------------------------------------------------------------
// Trajectory evaluation

struct DimensionMetrics {
  double kl = 0.0;           // mean over timesteps
  double wasserstein = 0.0;  // mean over timesteps
  double dtw = 0.0;
  std::optional<double> nll;  // action-level, policy-dependent
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<double> kl_series;
  std::vector<double> wasserstein_series;
};

struct MetricReport {
  std::string event_id;
  std::size_t horizon = 0;
  std::string mode;
  // Action-level NLL is note-worthy: it is computed under the tabular
  // policy, so its scale is not comparable to token-level LLM NLL.
  std::string nll_note = "action-level NLL under the tabular policy";
  std::map<std::string, DimensionMetrics> per_dimension;
};

struct EvaluateOptions {
  std::vector<std::string> dimensions = all_dimensions();
  std::optional<Annotator> annotator;     // fills missing labels when set
  std::optional<double> nll;              // precomputed by the caller
  DtwCost dtw_cost = DtwCost::L1;
  std::size_t dtw_stride = 1;             // downsample series before DTW
};

// Per-timestep empirical distributions from both sides, then time-averaged
// KL and Wasserstein, DTW over the series, and pooled F1 over actions
// paired by agent id within each step.
MetricReport evaluate_trajectories(const Trajectory& simulated, const EventTimeline& reference,
                                   const StateSpace& states, const EvaluateOptions& options);

std::string metric_report_to_json(const MetricReport& report);
std::string metric_report_to_csv(const MetricReport& report);         // dimension,metric,value
std::string metric_report_series_csv(const MetricReport& report);     // dimension,t,kl,wasserstein

}  // namespace mfmdp
