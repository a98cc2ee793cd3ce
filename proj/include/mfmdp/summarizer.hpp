#pragma once

#include <optional>
#include <span>
#include <string>

#include "mfmdp/core.hpp"

namespace mfmdp {

class TextServiceClient;

enum class SummarizerKind { Template, External };

// The textual macro channel: r_t = summarize(r_{t-1}, m_t, actions, c_t).
// The template variant renders, in fixed order: topic echo, top state with
// its rounded percentage, per-action counts, a signal digest, and a one-line
// carry-over of the previous synopsis, truncated to the token budget.
struct SummarizerBackend {
  SummarizerKind kind = SummarizerKind::Template;
  std::string topic;
  StateSpace states = default_state_space();
  ActionSpace actions = default_action_space();
  std::size_t token_budget = 128;
  TextServiceClient* client = nullptr;  // required for External
  bool fall_back_to_template = false;   // on service failure
};

Synopsis summarize(const SummarizerBackend& backend, const Synopsis& previous, const MeanField& m,
                   std::span<const ActionRecord> actions,
                   const std::optional<ExogenousSignal>& signal);

// Whole-percent rendering, half-up.
int rounded_percent(double fraction);

}  // namespace mfmdp
