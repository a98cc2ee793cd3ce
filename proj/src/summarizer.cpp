#include "mfmdp/summarizer.hpp"

#include <cmath>
#include <sstream>

#include "mfmdp/text_service.hpp"

namespace mfmdp {

int rounded_percent(double fraction) {
  return static_cast<int>(std::floor(fraction * 100.0 + 0.5));
}

namespace {

std::string first_sentence(const std::string& text) {
  const auto dot = text.find('.');
  return dot == std::string::npos ? text : text.substr(0, dot);
}

Synopsis template_summarize(const SummarizerBackend& backend, const Synopsis& previous,
                            const MeanField& m, std::span<const ActionRecord> actions,
                            const std::optional<ExogenousSignal>& signal) {
  const std::size_t top = majority_state(m);
  std::ostringstream out;
  out << "topic " << backend.topic << ". mood " << backend.states.label(top) << " "
      << rounded_percent(m[top]) << "%. actions";
  std::vector<std::size_t> counts(backend.actions.size(), 0);
  for (const auto& a : actions) counts.at(a.action_index) += 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out << " " << backend.actions.label(i) << "=" << counts[i];
  }
  out << ". signal " << (signal ? truncate_tokens(signal->text, 20) : std::string("none"));
  out << ". prev " << first_sentence(previous.text) << ".";
  return Synopsis::make(out.str(), backend.token_budget);
}

}  // namespace

Synopsis summarize(const SummarizerBackend& backend, const Synopsis& previous, const MeanField& m,
                   std::span<const ActionRecord> actions,
                   const std::optional<ExogenousSignal>& signal) {
  if (m.size() != backend.states.size()) {
    throw LengthMismatch("summarize: mean field does not match the state space");
  }
  if (backend.kind == SummarizerKind::Template) {
    return template_summarize(backend, previous, m, actions, signal);
  }
  if (backend.client == nullptr) throw BackendError("external summarizer has no service client");
  TextRequest req;
  std::ostringstream prompt;
  prompt << "Summarize the public mood in at most " << backend.token_budget << " words.\n"
         << "Topic: " << backend.topic << "\nPrevious summary: " << previous.text
         << "\nState distribution:";
  for (std::size_t i = 0; i < m.size(); ++i) {
    prompt << " " << backend.states.label(i) << "=" << rounded_percent(m[i]) << "%";
  }
  prompt << "\nActions this step: " << actions.size();
  if (signal) prompt << "\nNew signal: " << signal->text;
  req.prompt = prompt.str();
  req.max_tokens = static_cast<int>(backend.token_budget);
  try {
    return Synopsis::make(backend.client->complete(req).text, backend.token_budget);
  } catch (const Error&) {
    if (!backend.fall_back_to_template) throw;
    return template_summarize(backend, previous, m, actions, signal);
  }
}

}  // namespace mfmdp
