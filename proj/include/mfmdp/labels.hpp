#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfmdp/core.hpp"

namespace mfmdp {

// The eight per-action semantic dimensions. The State dimension uses the
// run's StateSpace; the other seven carry fixed enumerations.
namespace dim {
inline constexpr const char* kRumor = "Rumor";
inline constexpr const char* kSentiment = "Sentiment";
inline constexpr const char* kState = "State";
inline constexpr const char* kBehavior = "Behavior";
inline constexpr const char* kStance = "Stance";
inline constexpr const char* kBelief = "Belief";
inline constexpr const char* kSubjectivity = "Subjectivity";
inline constexpr const char* kIntent = "Intent";
}  // namespace dim

// All dimension names in canonical order.
const std::vector<std::string>& all_dimensions();

// Ordered label set for a dimension. State resolves to `states`.
LabelSpace dimension_labels(const std::string& dimension, const StateSpace& states);

// Label an action gets on a dimension when no evidence points elsewhere.
std::string default_label(const std::string& dimension);

// Deterministic full labelling of a simulated or synthesized action from
// its state label and action index. Keeps the per-dimension distributions
// co-moving with the state channel so the metric suite has signal on every
// axis without an external annotator.
std::map<std::string, std::string> derive_labels(const std::string& state_label,
                                                 std::size_t action_index,
                                                 const StateSpace& states);

// Projection between the action and state axes, used to fold actions into
// the state simplex and to pick an action expressing a sampled state.
struct ActionStateMap {
  std::vector<std::size_t> state_of_action;  // one entry per action index

  static ActionStateMap aligned(std::size_t n_actions, std::size_t n_states);

  std::size_t state_of(std::size_t action_index) const;
  // Lowest-index action projecting to the state.
  std::size_t action_for(std::size_t state_index) const;
};

}  // namespace mfmdp
