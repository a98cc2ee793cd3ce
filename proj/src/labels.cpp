#include "mfmdp/labels.hpp"

namespace mfmdp {

const std::vector<std::string>& all_dimensions() {
  static const std::vector<std::string> dims = {
      dim::kRumor,  dim::kSentiment,    dim::kState,  dim::kBehavior,
      dim::kStance, dim::kBelief,       dim::kSubjectivity, dim::kIntent,
  };
  return dims;
}

LabelSpace dimension_labels(const std::string& dimension, const StateSpace& states) {
  if (dimension == dim::kState) return states;
  if (dimension == dim::kRumor) return LabelSpace({"spread", "counter"});
  if (dimension == dim::kSentiment)
    return LabelSpace({"angry", "calm", "happy", "sad", "fear", "surprise"});
  if (dimension == dim::kBehavior) return LabelSpace({"share", "comment"});
  if (dimension == dim::kStance) return LabelSpace({"support", "oppose", "neutral"});
  if (dimension == dim::kBelief) return LabelSpace({"believe", "doubt"});
  if (dimension == dim::kSubjectivity) return LabelSpace({"subjective", "objective"});
  if (dimension == dim::kIntent) return LabelSpace({"question", "promotion", "opinion"});
  throw UnknownLabel("unknown dimension: " + dimension);
}

std::string default_label(const std::string& dimension) {
  if (dimension == dim::kState) return "neutral";
  if (dimension == dim::kRumor) return "counter";
  if (dimension == dim::kSentiment) return "calm";
  if (dimension == dim::kBehavior) return "comment";
  if (dimension == dim::kStance) return "neutral";
  if (dimension == dim::kBelief) return "believe";
  if (dimension == dim::kSubjectivity) return "objective";
  if (dimension == dim::kIntent) return "opinion";
  throw UnknownLabel("unknown dimension: " + dimension);
}

std::map<std::string, std::string> derive_labels(const std::string& state_label,
                                                 std::size_t action_index,
                                                 const StateSpace& states) {
  // Polarity relative to the state axes: first label positive-like, last
  // negative-like, everything else neutral-like.
  const std::size_t idx = states.index_of(state_label);
  const bool pos = idx == 0;
  const bool neg = idx + 1 == states.size() && states.size() > 1;

  std::map<std::string, std::string> labels;
  labels[dim::kState] = state_label;
  labels[dim::kStance] = pos ? "support" : neg ? "oppose" : "neutral";
  labels[dim::kSentiment] = pos ? "happy" : neg ? "angry" : "calm";
  labels[dim::kBelief] = neg ? "doubt" : "believe";
  labels[dim::kRumor] = neg ? "counter" : "spread";
  labels[dim::kSubjectivity] = pos || neg ? "subjective" : "objective";
  labels[dim::kIntent] = pos ? "promotion" : neg ? "opinion" : "question";
  labels[dim::kBehavior] = action_index % 2 == 0 ? "comment" : "share";
  return labels;
}

ActionStateMap ActionStateMap::aligned(std::size_t n_actions, std::size_t n_states) {
  if (n_actions == 0 || n_states == 0) throw ValidationError("empty space in ActionStateMap");
  ActionStateMap map;
  map.state_of_action.resize(n_actions);
  for (std::size_t a = 0; a < n_actions; ++a) map.state_of_action[a] = a % n_states;
  return map;
}

std::size_t ActionStateMap::state_of(std::size_t action_index) const {
  if (action_index >= state_of_action.size()) throw ValidationError("action index out of range");
  return state_of_action[action_index];
}

std::size_t ActionStateMap::action_for(std::size_t state_index) const {
  for (std::size_t a = 0; a < state_of_action.size(); ++a) {
    if (state_of_action[a] == state_index) return a;
  }
  throw ValidationError("no action projects to state " + std::to_string(state_index));
}

}  // namespace mfmdp
