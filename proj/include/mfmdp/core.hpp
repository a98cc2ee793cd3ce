#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfmdp/errors.hpp"

namespace mfmdp {

inline constexpr double kSimplexTolerance = 1e-9;

// Ordered list of distinct labels. The order is fixed for the life of a
// run: it defines the simplex axes and the Wasserstein ground metric.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const { return labels_; }

  // Throws UnknownLabel when absent.
  std::size_t index_of(const std::string& label) const;
  std::optional<std::size_t> find(const std::string& label) const;

  bool operator==(const LabelSpace& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
};

struct StateSpace : LabelSpace {
  StateSpace() = default;
  explicit StateSpace(std::vector<std::string> labels) : LabelSpace(std::move(labels)) {}
};

struct ActionSpace : LabelSpace {
  ActionSpace() = default;
  explicit ActionSpace(std::vector<std::string> labels) : LabelSpace(std::move(labels)) {}
};

// (positive, neutral, negative) — the state axes used by default.
StateSpace default_state_space();
// (support, hold, oppose), aligned index-wise with the default states.
ActionSpace default_action_space();

// Point on the probability simplex. Construction clamps entries in
// [-1e-9, 0) to zero and renormalizes; larger violations reject.
class MeanField {
 public:
  MeanField() = default;

  static MeanField from_probs(std::vector<double> probs);
  static MeanField from_counts(std::span<const std::size_t> counts);
  static MeanField uniform(std::size_t n);
  static MeanField one_hot(std::size_t n, std::size_t index);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_.at(i); }
  const std::vector<double>& probs() const { return probs_; }

  bool operator==(const MeanField& other) const { return probs_ == other.probs_; }

 private:
  explicit MeanField(std::vector<double> probs) : probs_(std::move(probs)) {}
  std::vector<double> probs_;
};

// Smallest index attaining the maximum probability.
std::size_t majority_state(const MeanField& m);

// Bounded natural-language summary; the textual macro channel.
struct Synopsis {
  std::string text;
  std::size_t token_budget = 128;

  // Truncates to the budget counting whitespace tokens.
  static Synopsis make(const std::string& text, std::size_t token_budget);
  std::size_t token_count() const;
};

std::size_t count_tokens(const std::string& text);
std::string truncate_tokens(const std::string& text, std::size_t max_tokens);

struct AgentPersona {
  std::string agent_id;
  std::string profile;
};

struct AgentState {
  std::size_t state_index = 0;
};

struct ExogenousSignal {
  std::string source_id;
  std::string text;
  std::size_t timestep = 0;
};

// Everything one agent conditions on when acting.
struct MicroState {
  AgentState state;
  Synopsis synopsis;         // r_{t-1}
  MeanField mean_field;      // m_t
  std::optional<ExogenousSignal> signal;
  AgentPersona persona;
};

struct ActionRecord {
  std::string agent_id;
  std::size_t timestep = 0;
  std::size_t action_index = 0;
  std::optional<std::string> text;
  // Dimension name -> label, e.g. {"State": "negative"}.
  std::map<std::string, std::string> labels;
};

struct EventStep {
  std::size_t t = 0;
  std::vector<std::string> active;           // agent ids, n_t entries
  std::vector<ActionRecord> actions;         // ground truth a*_t
  std::optional<ExogenousSignal> signal;     // c_t
  std::optional<MeanField> empirical_mean_field;  // m*_t
};

struct EventTimeline {
  std::string event_id;
  std::string topic;
  std::vector<AgentPersona> personas;
  std::vector<EventStep> steps;  // sorted by t, no gaps

  std::size_t horizon() const { return steps.size(); }
  const AgentPersona* find_persona(const std::string& agent_id) const;
};

struct TrajectoryPoint {
  std::size_t t = 0;
  MeanField mean_field;
  Synopsis synopsis;
  std::vector<ActionRecord> actions;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;  // timesteps contiguous from 0 to T
};

// Normalized histogram of the labels one dimension assigns to a window of
// actions, on the axes of `space`. Permutation-invariant.
MeanField empirical_distribution(std::span<const ActionRecord> actions,
                                 const std::string& dimension,
                                 const LabelSpace& space);

// Merge states into coarse buckets: bucket_of[i] gives the bucket index of
// state i. Returns the merged space plus a projector usable on MeanFields.
struct StateMerge {
  StateSpace merged;
  std::vector<std::size_t> bucket_of;

  MeanField project(const MeanField& m) const;
};
StateMerge merge_states(const StateSpace& space,
                        const std::map<std::string, std::string>& label_to_bucket);

}  // namespace mfmdp
