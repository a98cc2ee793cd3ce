#include "mfmdp/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mfmdp {

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("label space must be non-empty");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (!seen.insert(l).second) throw ValidationError("duplicate label: " + l);
  }
}

std::size_t LabelSpace::index_of(const std::string& label) const {
  auto idx = find(label);
  if (!idx) throw UnknownLabel("unknown label: " + label);
  return *idx;
}

std::optional<std::size_t> LabelSpace::find(const std::string& label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i;
  }
  return std::nullopt;
}

StateSpace default_state_space() {
  return StateSpace({"positive", "neutral", "negative"});
}

ActionSpace default_action_space() {
  return ActionSpace({"support", "hold", "oppose"});
}

MeanField MeanField::from_probs(std::vector<double> probs) {
  if (probs.empty()) throw ValidationError("mean field must be non-empty");
  bool clamped = false;
  double sum = 0.0;
  for (double& p : probs) {
    if (!std::isfinite(p)) throw ValidationError("mean field entry not finite");
    if (p < 0.0) {
      if (p < -kSimplexTolerance) throw ValidationError("mean field entry below zero");
      p = 0.0;
      clamped = true;
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw ValidationError("mean field does not sum to 1 (sum=" + std::to_string(sum) + ")");
  }
  // Renormalize only when needed so already-normalized vectors pass through
  // bit-identically (serialization round-trips).
  if (clamped || std::abs(sum - 1.0) > 1e-12) {
    for (double& p : probs) p /= sum;
  }
  return MeanField(std::move(probs));
}

MeanField MeanField::from_counts(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ValidationError("empty count vector");
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  if (total == 0) throw ValidationError("count vector sums to zero");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return MeanField(std::move(probs));
}

MeanField MeanField::uniform(std::size_t n) {
  if (n == 0) throw ValidationError("mean field must be non-empty");
  return MeanField(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

MeanField MeanField::one_hot(std::size_t n, std::size_t index) {
  if (index >= n) throw ValidationError("one_hot index out of range");
  std::vector<double> probs(n, 0.0);
  probs[index] = 1.0;
  return MeanField(std::move(probs));
}

std::size_t majority_state(const MeanField& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.size(); ++i) {
    if (m[i] > m[best]) best = i;  // ties keep the lowest index
  }
  return best;
}

std::size_t count_tokens(const std::string& text) {
  std::istringstream in(text);
  std::string tok;
  std::size_t n = 0;
  while (in >> tok) ++n;
  return n;
}

std::string truncate_tokens(const std::string& text, std::size_t max_tokens) {
  std::istringstream in(text);
  std::string tok;
  std::string out;
  std::size_t n = 0;
  while (n < max_tokens && in >> tok) {
    if (n > 0) out += ' ';
    out += tok;
    ++n;
  }
  return out;
}

Synopsis Synopsis::make(const std::string& text, std::size_t token_budget) {
  Synopsis s;
  s.token_budget = token_budget;
  s.text = truncate_tokens(text, token_budget);
  return s;
}

std::size_t Synopsis::token_count() const { return count_tokens(text); }

const AgentPersona* EventTimeline::find_persona(const std::string& agent_id) const {
  for (const auto& p : personas) {
    if (p.agent_id == agent_id) return &p;
  }
  return nullptr;
}

MeanField empirical_distribution(std::span<const ActionRecord> actions,
                                 const std::string& dimension,
                                 const LabelSpace& space) {
  if (actions.empty()) throw EmptyWindow("empirical_distribution: no actions in window");
  std::vector<std::size_t> counts(space.size(), 0);
  for (const auto& a : actions) {
    auto it = a.labels.find(dimension);
    if (it == a.labels.end()) {
      throw MissingLabel("action by " + a.agent_id + " lacks dimension " + dimension);
    }
    counts[space.index_of(it->second)] += 1;
  }
  return MeanField::from_counts(counts);
}

MeanField StateMerge::project(const MeanField& m) const {
  if (m.size() != bucket_of.size()) throw LengthMismatch("merge projector size mismatch");
  std::vector<double> probs(merged.size(), 0.0);
  for (std::size_t i = 0; i < bucket_of.size(); ++i) probs[bucket_of[i]] += m[i];
  return MeanField::from_probs(std::move(probs));
}

StateMerge merge_states(const StateSpace& space,
                        const std::map<std::string, std::string>& label_to_bucket) {
  std::vector<std::string> buckets;
  std::vector<std::size_t> bucket_of(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    auto it = label_to_bucket.find(space.label(i));
    std::string bucket = it == label_to_bucket.end() ? space.label(i) : it->second;
    auto pos = std::find(buckets.begin(), buckets.end(), bucket);
    if (pos == buckets.end()) {
      bucket_of[i] = buckets.size();
      buckets.push_back(bucket);
    } else {
      bucket_of[i] = static_cast<std::size_t>(pos - buckets.begin());
    }
  }
  return StateMerge{StateSpace(std::move(buckets)), std::move(bucket_of)};
}

}  // namespace mfmdp
