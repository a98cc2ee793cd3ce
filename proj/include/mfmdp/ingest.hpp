#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfmdp/core.hpp"

namespace mfmdp {

// Event JSON schema v1. Top-level keys: schema_version (optional, "1"),
// event_id, topic, personas (id -> profile), steps. Each step carries
// t, active, optional signal {source, text}, actions [{agent, action,
// text?, labels?}], optional m_star. Floats round-trip at full precision.
inline constexpr const char* kEventSchemaVersion = "1";

struct EventFile {
  std::filesystem::path path;
  EventTimeline timeline;
  std::string schema_version;
};

struct LoadOptions {
  StateSpace states = default_state_space();
  ActionSpace actions = default_action_space();
  bool strict = true;  // reject unknown keys; warn (to findings) otherwise
};

EventFile load_event_file(const std::filesystem::path& path, const LoadOptions& options = {});
EventTimeline load_event(const std::filesystem::path& path, const LoadOptions& options = {});

EventTimeline parse_event_json(const std::string& text, const LoadOptions& options = {});
std::string event_to_json(const EventTimeline& timeline, const ActionSpace& actions);

void save_event(const EventTimeline& timeline, const std::filesystem::path& path,
                const ActionSpace& actions);

struct Finding {
  std::size_t step = 0;  // timestep the finding refers to (0 when global)
  std::string message;
};

// Empty iff every EventTimeline invariant holds.
std::vector<Finding> validate_event(const EventTimeline& timeline);

// Synthetic reversal event: majority pre_majority before flip_step, then a
// linear transition band of length ceil(1/drift_rate) toward post_majority,
// with truncated Gaussian noise on m*. A signal announcing the flip is
// emitted at the flip step.
struct ReversalSpec {
  std::size_t horizon = 100;         // H; steps run t = 1..H
  std::size_t flip_step = 50;        // t*; 0 means flipped before the window
  std::size_t pre_majority = 0;
  std::size_t post_majority = 2;
  double drift_rate = 0.1;           // probability mass fraction per step, in (0, 1]
  std::size_t agents_per_step = 8;   // n_t
  std::size_t pool_size = 16;        // N
  double noise_scale = 0.0;
  std::uint64_t seed = 1;
  double base_majority_mass = 0.7;   // mass on the majority state of the base tracks
};

EventTimeline synthesize_reversal_event(const ReversalSpec& spec,
                                        const StateSpace& states = default_state_space(),
                                        const ActionSpace& actions = default_action_space());

}  // namespace mfmdp
