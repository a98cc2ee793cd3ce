#include "mfmdp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mfmdp/text_service.hpp"

namespace mfmdp {

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw LengthMismatch("kl_divergence: length mismatch");
  const double n = static_cast<double>(p.size());
  const double denom = 1.0 + n * kKlSmoothing;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 * ln(0/.) := 0
    const double qi = (q[i] + kKlSmoothing) / denom;
    kl += p[i] * std::log(p[i] / qi);
  }
  return std::max(kl, 0.0);
}

double kl_divergence(const MeanField& p, const MeanField& q) {
  return kl_divergence(std::span<const double>(p.probs()), std::span<const double>(q.probs()));
}

double wasserstein_distance(const MeanField& p, const MeanField& q) {
  if (p.size() != q.size()) throw LengthMismatch("wasserstein: length mismatch");
  double cdf_p = 0.0, cdf_q = 0.0, w = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cdf_p += p[i];
    cdf_q += q[i];
    w += std::abs(cdf_p - cdf_q);
  }
  return w;
}

double wasserstein_distance(const MeanField& p, const MeanField& q,
                            std::span<const double> positions) {
  if (p.size() != q.size()) throw LengthMismatch("wasserstein: length mismatch");
  if (positions.size() != p.size()) throw LengthMismatch("wasserstein: positions size mismatch");
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] < positions[i - 1]) {
      throw ValidationError("wasserstein: positions must be non-decreasing");
    }
  }
  double cdf_p = 0.0, cdf_q = 0.0, w = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    cdf_p += p[i];
    cdf_q += q[i];
    w += std::abs(cdf_p - cdf_q) * (positions[i + 1] - positions[i]);
  }
  return w;
}

namespace {

double step_cost(std::span<const double> a, std::span<const double> b, DtwCost cost) {
  if (a.size() != b.size()) throw LengthMismatch("dtw: vector size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += cost == DtwCost::L1 ? std::abs(d) : d * d;
  }
  return cost == DtwCost::L1 ? acc : std::sqrt(acc);
}

}  // namespace

double dtw_distance(std::span<const std::vector<double>> series_a,
                    std::span<const std::vector<double>> series_b, DtwCost cost) {
  if (series_a.empty() || series_b.empty()) throw EmptySeries("dtw: empty series");
  const std::size_t n = series_a.size();
  const std::size_t m = series_b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = step_cost(series_a[i], series_b[j], cost);
      if (i == 0 && j == 0) {
        cur[j] = c;
      } else {
        double best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
        cur[j] = c + best;
      }
    }
    std::swap(prev, cur);
    std::fill(cur.begin(), cur.end(), inf);
  }
  return prev[m - 1];
}

double dtw_distance(std::span<const MeanField> series_a, std::span<const MeanField> series_b,
                    DtwCost cost) {
  std::vector<std::vector<double>> a, b;
  a.reserve(series_a.size());
  b.reserve(series_b.size());
  for (const auto& m : series_a) a.push_back(m.probs());
  for (const auto& m : series_b) b.push_back(m.probs());
  return dtw_distance(std::span<const std::vector<double>>(a),
                      std::span<const std::vector<double>>(b), cost);
}

double mean_nll(std::span<const double> probs_of_truth) {
  if (probs_of_truth.empty()) throw EmptyWindow("mean_nll: no actions");
  double acc = 0.0;
  for (double p : probs_of_truth) acc += -std::log(std::max(p, kProbFloor));
  return acc / static_cast<double>(probs_of_truth.size());
}

F1Scores f1_scores(std::span<const std::string> true_labels,
                   std::span<const std::string> predicted_labels, const LabelSpace& label_set) {
  if (true_labels.size() != predicted_labels.size()) {
    throw LengthMismatch("f1_scores: sequence length mismatch");
  }
  const std::size_t k = label_set.size();
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  std::vector<bool> present(k, false);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const std::size_t t = label_set.index_of(true_labels[i]);
    const std::size_t p = label_set.index_of(predicted_labels[i]);
    present[t] = present[p] = true;
    if (t == p) {
      tp[t] += 1;
    } else {
      fn[t] += 1;
      fp[p] += 1;
    }
  }
  auto safe_div = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
  double macro_sum = 0.0;
  std::size_t macro_n = 0;
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c < k; ++c) {
    tp_all += tp[c];
    fp_all += fp[c];
    fn_all += fn[c];
    if (!present[c]) continue;  // absent classes are excluded from the macro mean
    const double prec = safe_div(static_cast<double>(tp[c]), static_cast<double>(tp[c] + fp[c]));
    const double rec = safe_div(static_cast<double>(tp[c]), static_cast<double>(tp[c] + fn[c]));
    macro_sum += safe_div(2.0 * prec * rec, prec + rec);
    macro_n += 1;
  }
  const double micro_p = safe_div(static_cast<double>(tp_all), static_cast<double>(tp_all + fp_all));
  const double micro_r = safe_div(static_cast<double>(tp_all), static_cast<double>(tp_all + fn_all));
  F1Scores out;
  out.macro_f1 = macro_n == 0 ? 0.0 : macro_sum / static_cast<double>(macro_n);
  out.micro_f1 = safe_div(2.0 * micro_p * micro_r, micro_p + micro_r);
  return out;
}

namespace {

bool text_contains_keyword(const std::string& text, const std::string& keyword) {
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok == keyword) return true;
  }
  return false;
}

std::map<std::string, std::string> rule_annotate(const ActionRecord& action,
                                                 const AnnotatorConfig& config,
                                                 const StateSpace& states) {
  std::map<std::string, std::string> out = action.labels;
  const std::string text = action.text.value_or("");
  for (const auto& d : all_dimensions()) {
    if (out.count(d)) continue;  // native labels pass through
    std::string label = default_label(d);
    auto rules = config.keyword_rules.find(d);
    if (rules != config.keyword_rules.end()) {
      for (const auto& rule : rules->second) {
        if (text_contains_keyword(text, rule.keyword)) {
          label = rule.label;
          break;
        }
      }
    }
    // Guard against rules emitting labels outside the dimension.
    dimension_labels(d, states).index_of(label);
    out[d] = label;
  }
  return out;
}

std::map<std::string, std::string> external_annotate(const ActionRecord& action,
                                                     TextServiceClient& client,
                                                     const StateSpace& states) {
  std::map<std::string, std::string> out = action.labels;
  std::string prompt = "Label the following message on the dimensions";
  for (const auto& d : all_dimensions()) {
    if (out.count(d)) continue;
    prompt += " " + d;
  }
  prompt += ".\nMessage: " + action.text.value_or("") + "\n";
  TextRequest req;
  req.prompt = prompt;
  req.max_tokens = 64;
  req.temperature = 0.0;
  const std::string response = client.complete(req).text;
  bool any = false;
  for (const auto& d : all_dimensions()) {
    if (out.count(d)) continue;
    const LabelSpace labels = dimension_labels(d, states);
    std::size_t best_pos = std::string::npos;
    std::string best_label;
    for (const auto& l : labels.labels()) {
      const std::size_t pos = response.find(l);
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best_label = l;
      }
    }
    if (best_pos != std::string::npos) {
      out[d] = best_label;
      any = true;
    } else {
      out[d] = default_label(d);
    }
  }
  if (!any) throw ParseError("annotation response contained no recognizable labels");
  return out;
}

}  // namespace

std::map<std::string, std::string> annotate_action(const ActionRecord& action,
                                                   const Annotator& annotator,
                                                   const StateSpace& states) {
  bool complete = true;
  for (const auto& d : all_dimensions()) {
    if (!action.labels.count(d)) complete = false;
  }
  if (complete || annotator.backend == AnnotatorBackend::Native) {
    if (!complete) {
      throw MissingLabel("native annotator requires labels on all dimensions");
    }
    return action.labels;
  }
  if (annotator.backend == AnnotatorBackend::RuleBased) {
    return rule_annotate(action, annotator.config, states);
  }
  if (annotator.client == nullptr) {
    throw BackendError("external annotator has no service client");
  }
  return external_annotate(action, *annotator.client, states);
}

namespace {

struct StepPair {
  std::vector<ActionRecord> reference;
  std::vector<ActionRecord> simulated;
};

}  // namespace

MetricReport evaluate_trajectories(const Trajectory& simulated, const EventTimeline& reference,
                                   const StateSpace& states, const EvaluateOptions& options) {
  if (reference.steps.empty()) throw EmptySeries("evaluate: reference has no steps");
  const std::size_t t0 = reference.steps.front().t;
  const std::size_t T = reference.steps.back().t;

  // Index simulated points by timestep; require the reference range covered.
  std::map<std::size_t, const TrajectoryPoint*> sim_by_t;
  for (const auto& pt : simulated.points) sim_by_t[pt.t] = &pt;
  std::vector<StepPair> pairs;
  for (const auto& step : reference.steps) {
    auto it = sim_by_t.find(step.t);
    if (it == sim_by_t.end()) {
      throw LengthMismatch("simulated trajectory missing timestep " + std::to_string(step.t));
    }
    pairs.push_back(StepPair{step.actions, it->second->actions});
  }
  if (!sim_by_t.empty() && sim_by_t.rbegin()->first > T) {
    throw LengthMismatch("simulated trajectory extends beyond the reference horizon");
  }

  auto labels_for = [&](const ActionRecord& a, const std::string& d) -> std::string {
    auto it = a.labels.find(d);
    if (it != a.labels.end()) return it->second;
    if (options.annotator) {
      auto filled = annotate_action(a, *options.annotator, states);
      return filled.at(d);
    }
    throw MissingLabel("action by " + a.agent_id + " lacks dimension " + d);
  };

  MetricReport report;
  report.event_id = reference.event_id;
  report.horizon = T - t0 + 1;

  for (const auto& d : options.dimensions) {
    const LabelSpace space = dimension_labels(d, states);
    DimensionMetrics dm;
    std::vector<MeanField> ref_series, sim_series;
    std::vector<std::string> ref_labels, sim_labels;
    for (const auto& pair : pairs) {
      if (pair.reference.empty() || pair.simulated.empty()) continue;
      auto dist_of = [&](const std::vector<ActionRecord>& actions) {
        std::vector<std::size_t> counts(space.size(), 0);
        for (const auto& a : actions) counts[space.index_of(labels_for(a, d))] += 1;
        return MeanField::from_counts(counts);
      };
      const MeanField p = dist_of(pair.reference);
      const MeanField q = dist_of(pair.simulated);
      dm.kl_series.push_back(kl_divergence(p, q));
      dm.wasserstein_series.push_back(wasserstein_distance(p, q));
      ref_series.push_back(p);
      sim_series.push_back(q);
      // Pool actions paired by agent id for the classification metrics.
      for (const auto& ra : pair.reference) {
        for (const auto& sa : pair.simulated) {
          if (ra.agent_id == sa.agent_id) {
            ref_labels.push_back(labels_for(ra, d));
            sim_labels.push_back(labels_for(sa, d));
            break;
          }
        }
      }
    }
    if (ref_series.empty()) throw EmptyWindow("evaluate: no comparable steps for " + d);
    double kl_sum = 0.0, w_sum = 0.0;
    for (double v : dm.kl_series) kl_sum += v;
    for (double v : dm.wasserstein_series) w_sum += v;
    dm.kl = kl_sum / static_cast<double>(dm.kl_series.size());
    dm.wasserstein = w_sum / static_cast<double>(dm.wasserstein_series.size());
    std::vector<MeanField> ref_ds, sim_ds;
    for (std::size_t i = 0; i < ref_series.size(); i += std::max<std::size_t>(1, options.dtw_stride)) {
      ref_ds.push_back(ref_series[i]);
      sim_ds.push_back(sim_series[i]);
    }
    dm.dtw = dtw_distance(std::span<const MeanField>(ref_ds), std::span<const MeanField>(sim_ds),
                          options.dtw_cost);
    if (!ref_labels.empty()) {
      const F1Scores f1 = f1_scores(ref_labels, sim_labels, space);
      dm.macro_f1 = f1.macro_f1;
      dm.micro_f1 = f1.micro_f1;
    }
    dm.nll = options.nll;
    report.per_dimension[d] = std::move(dm);
  }
  return report;
}

std::string metric_report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["event_id"] = report.event_id;
  j["horizon"] = report.horizon;
  j["mode"] = report.mode;
  j["nll_note"] = report.nll_note;
  nlohmann::json dims = nlohmann::json::object();
  for (const auto& [name, dm] : report.per_dimension) {
    nlohmann::json d;
    d["kl"] = dm.kl;
    d["wasserstein"] = dm.wasserstein;
    d["dtw"] = dm.dtw;
    d["nll"] = dm.nll ? nlohmann::json(*dm.nll) : nlohmann::json(nullptr);
    d["macro_f1"] = dm.macro_f1;
    d["micro_f1"] = dm.micro_f1;
    dims[name] = d;
  }
  j["dimensions"] = dims;
  return j.dump(2);
}

std::string metric_report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "dimension,metric,value\n";
  for (const auto& [name, dm] : report.per_dimension) {
    out << name << ",kl," << dm.kl << "\n";
    out << name << ",wasserstein," << dm.wasserstein << "\n";
    out << name << ",dtw," << dm.dtw << "\n";
    out << name << ",nll," << (dm.nll ? std::to_string(*dm.nll) : "") << "\n";
    out << name << ",macro_f1," << dm.macro_f1 << "\n";
    out << name << ",micro_f1," << dm.micro_f1 << "\n";
  }
  return out.str();
}

std::string metric_report_series_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "dimension,t,kl,wasserstein\n";
  for (const auto& [name, dm] : report.per_dimension) {
    for (std::size_t t = 0; t < dm.kl_series.size(); ++t) {
      out << name << "," << t << "," << dm.kl_series[t] << "," << dm.wasserstein_series[t] << "\n";
    }
  }
  return out.str();
}

}  // namespace mfmdp
