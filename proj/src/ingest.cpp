#include "mfmdp/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mfmdp/labels.hpp"
#include "mfmdp/rng.hpp"

namespace mfmdp {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& known, const std::string& where,
                bool strict) {
  for (const auto& [key, _] : obj.items()) {
    if (known.count(key)) continue;
    if (strict) throw SchemaError("unknown key '" + key + "' in " + where);
    std::cerr << "warning: ignoring unknown key '" << key << "' in " << where << "\n";
  }
}

ExogenousSignal parse_signal(const json& j, std::size_t t, bool strict) {
  if (!j.is_object()) throw SchemaError("signal must be an object");
  check_keys(j, {"source", "text"}, "signal", strict);
  ExogenousSignal s;
  s.source_id = j.at("source").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.timestep = t;
  return s;
}

ActionRecord parse_action(const json& j, std::size_t t, const LoadOptions& options) {
  if (!j.is_object()) throw SchemaError("action must be an object");
  check_keys(j, {"agent", "action", "text", "labels"}, "action", options.strict);
  ActionRecord a;
  a.agent_id = j.at("agent").get<std::string>();
  a.timestep = t;
  const std::string action_label = j.at("action").get<std::string>();
  auto idx = options.actions.find(action_label);
  if (!idx) throw ValidationError("action label '" + action_label + "' not in action space");
  a.action_index = *idx;
  if (j.contains("text")) a.text = j.at("text").get<std::string>();
  if (j.contains("labels")) {
    if (!j.at("labels").is_object()) throw SchemaError("labels must be an object");
    for (const auto& [d, v] : j.at("labels").items()) {
      const std::string label = v.get<std::string>();
      dimension_labels(d, options.states).index_of(label);  // throws on bad dim/label
      a.labels[d] = label;
    }
  }
  return a;
}

}  // namespace

EventTimeline parse_event_json(const std::string& text, const LoadOptions& options) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed event JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("event document must be a JSON object");
  check_keys(doc, {"schema_version", "event_id", "topic", "personas", "steps"}, "event",
             options.strict);
  try {
    const std::string version =
        doc.contains("schema_version") ? doc.at("schema_version").get<std::string>()
                                       : std::string(kEventSchemaVersion);
    if (version != kEventSchemaVersion) {
      throw SchemaError("unsupported schema_version '" + version + "'");
    }
    EventTimeline timeline;
    timeline.event_id = doc.at("event_id").get<std::string>();
    timeline.topic = doc.at("topic").get<std::string>();
    if (!doc.at("personas").is_object()) throw SchemaError("personas must be an object");
    for (const auto& [id, profile] : doc.at("personas").items()) {
      timeline.personas.push_back(AgentPersona{id, profile.get<std::string>()});
    }
    if (!doc.at("steps").is_array()) throw SchemaError("steps must be an array");
    for (const auto& js : doc.at("steps")) {
      if (!js.is_object()) throw SchemaError("step must be an object");
      check_keys(js, {"t", "active", "signal", "actions", "m_star"}, "step", options.strict);
      EventStep step;
      step.t = js.at("t").get<std::size_t>();
      for (const auto& id : js.at("active")) step.active.push_back(id.get<std::string>());
      if (js.contains("signal")) step.signal = parse_signal(js.at("signal"), step.t, options.strict);
      if (js.contains("actions")) {
        for (const auto& ja : js.at("actions")) {
          step.actions.push_back(parse_action(ja, step.t, options));
        }
      }
      if (js.contains("m_star")) {
        std::vector<double> probs = js.at("m_star").get<std::vector<double>>();
        if (probs.size() != options.states.size()) {
          throw ValidationError("m_star length does not match the state space");
        }
        step.empirical_mean_field = MeanField::from_probs(std::move(probs));
      }
      timeline.steps.push_back(std::move(step));
    }
    auto findings = validate_event(timeline);
    if (!findings.empty()) {
      throw ValidationError("event invariant violated at t=" + std::to_string(findings[0].step) +
                            ": " + findings[0].message);
    }
    return timeline;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("event schema violation: ") + e.what());
  }
}

EventFile load_event_file(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open event file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  EventFile file;
  file.path = path;
  file.timeline = parse_event_json(buf.str(), options);
  file.schema_version = kEventSchemaVersion;
  return file;
}

EventTimeline load_event(const std::filesystem::path& path, const LoadOptions& options) {
  return load_event_file(path, options).timeline;
}

std::string event_to_json(const EventTimeline& timeline, const ActionSpace& actions) {
  json doc;
  doc["schema_version"] = kEventSchemaVersion;
  doc["event_id"] = timeline.event_id;
  doc["topic"] = timeline.topic;
  json personas = json::object();
  for (const auto& p : timeline.personas) personas[p.agent_id] = p.profile;
  doc["personas"] = std::move(personas);
  json steps = json::array();
  for (const auto& step : timeline.steps) {
    json js;
    js["t"] = step.t;
    js["active"] = step.active;
    if (step.signal) {
      js["signal"] = json{{"source", step.signal->source_id}, {"text", step.signal->text}};
    }
    json jactions = json::array();
    for (const auto& a : step.actions) {
      json ja;
      ja["agent"] = a.agent_id;
      ja["action"] = actions.label(a.action_index);
      if (a.text) ja["text"] = *a.text;
      if (!a.labels.empty()) ja["labels"] = a.labels;
      jactions.push_back(std::move(ja));
    }
    js["actions"] = std::move(jactions);
    if (step.empirical_mean_field) js["m_star"] = step.empirical_mean_field->probs();
    steps.push_back(std::move(js));
  }
  doc["steps"] = std::move(steps);
  return doc.dump(2);
}

void save_event(const EventTimeline& timeline, const std::filesystem::path& path,
                const ActionSpace& actions) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write event file: " + path.string());
  out << event_to_json(timeline, actions) << "\n";
}

std::vector<Finding> validate_event(const EventTimeline& timeline) {
  std::vector<Finding> findings;
  std::set<std::string> persona_ids;
  for (const auto& p : timeline.personas) {
    if (!persona_ids.insert(p.agent_id).second) {
      findings.push_back({0, "duplicate persona id " + p.agent_id});
    }
  }
  std::optional<std::size_t> prev_t;
  for (const auto& step : timeline.steps) {
    if (prev_t && step.t != *prev_t + 1) {
      findings.push_back({step.t, "step sequence has a gap or is unsorted"});
    }
    prev_t = step.t;
    if (step.active.size() > timeline.personas.size()) {
      findings.push_back({step.t, "active set larger than the persona pool"});
    }
    std::set<std::string> active;
    for (const auto& id : step.active) {
      if (!active.insert(id).second) {
        findings.push_back({step.t, "duplicate agent " + id + " in active set"});
      }
      if (!persona_ids.count(id)) {
        findings.push_back({step.t, "active agent " + id + " has no persona"});
      }
    }
    for (const auto& a : step.actions) {
      if (!active.count(a.agent_id)) {
        findings.push_back({step.t, "action by " + a.agent_id + " outside the active set"});
      }
      if (a.timestep != step.t) {
        findings.push_back({step.t, "action timestep disagrees with its step"});
      }
      for (const auto& [d, label] : a.labels) {
        if (d == dim::kState) continue;  // state labels are checked against the run's space
        try {
          dimension_labels(d, default_state_space()).index_of(label);
        } catch (const Error&) {
          findings.push_back({step.t, "label '" + label + "' invalid for dimension " + d});
        }
      }
    }
    if (step.signal && !timeline.steps.empty() &&
        step.signal->timestep > timeline.steps.back().t) {
      findings.push_back({step.t, "signal timestep beyond the horizon"});
    }
  }
  return findings;
}

namespace {

MeanField base_track(std::size_t n_states, std::size_t majority, double majority_mass) {
  std::vector<double> probs(n_states, (1.0 - majority_mass) / static_cast<double>(n_states - 1));
  probs[majority] = majority_mass;
  return MeanField::from_probs(std::move(probs));
}

MeanField noisy_simplex(const MeanField& base, double noise_scale, std::size_t enforce_majority,
                        bool enforce, RngStream& rng) {
  // Draws are consumed even when noise is zero so that timelines with and
  // without enforcement stay aligned on the stream.
  std::vector<double> probs(base.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    double n = rng.next_normal() * noise_scale;
    n = std::clamp(n, -2.0 * noise_scale, 2.0 * noise_scale);
    probs[i] = std::max(0.0, base[i] + n);
    sum += probs[i];
  }
  if (sum <= 0.0) return base;
  for (double& p : probs) p /= sum;
  MeanField m = MeanField::from_probs(std::move(probs));
  if (enforce && majority_state(m) != enforce_majority) return base;
  return m;
}

}  // namespace

EventTimeline synthesize_reversal_event(const ReversalSpec& spec, const StateSpace& states,
                                        const ActionSpace& actions) {
  const std::size_t n_states = states.size();
  if (spec.flip_step > spec.horizon) throw SpecError("flip_step must lie within [0, horizon]");
  if (spec.pre_majority == spec.post_majority) throw SpecError("pre and post majority must differ");
  if (spec.pre_majority >= n_states || spec.post_majority >= n_states) {
    throw SpecError("majority index outside the state space");
  }
  if (!(spec.drift_rate > 0.0 && spec.drift_rate <= 1.0)) {
    throw SpecError("drift_rate must be in (0, 1]");
  }
  if (spec.agents_per_step == 0 || spec.agents_per_step > spec.pool_size) {
    throw SpecError("agents_per_step must be in [1, pool_size]");
  }
  if (spec.noise_scale < 0.0) throw SpecError("noise_scale must be non-negative");
  if (!(spec.base_majority_mass > 1.0 / static_cast<double>(n_states) &&
        spec.base_majority_mass <= 1.0)) {
    throw SpecError("base_majority_mass must exceed the uniform level");
  }
  if (spec.horizon == 0) throw SpecError("horizon must be positive");

  const MeanField pre = base_track(n_states, spec.pre_majority, spec.base_majority_mass);
  const MeanField post = base_track(n_states, spec.post_majority, spec.base_majority_mass);
  const ActionStateMap map = ActionStateMap::aligned(actions.size(), n_states);

  RngStream noise_rng = RngStream::fork(spec.seed, "synth.noise");
  RngStream pool_rng = RngStream::fork(spec.seed, "synth.pool");
  RngStream action_rng = RngStream::fork(spec.seed, "synth.actions");

  static const char* kProfiles[] = {
      "casual observer who scrolls daily",
      "active commenter with strong opinions",
      "local reporter tracking the story",
      "longtime community member",
      "newcomer curious about the topic",
  };

  EventTimeline timeline;
  timeline.event_id = "reversal-" + std::to_string(spec.seed);
  timeline.topic = "synthetic reversal event";
  for (std::size_t i = 0; i < spec.pool_size; ++i) {
    char id[24];
    std::snprintf(id, sizeof(id), "agent-%04zu", i);
    timeline.personas.push_back(AgentPersona{id, kProfiles[i % 5]});
  }

  const std::size_t signal_step = std::max<std::size_t>(spec.flip_step, 1);
  for (std::size_t t = 1; t <= spec.horizon; ++t) {
    double u;
    if (spec.flip_step == 0) {
      u = 1.0;  // flipped before the window opened
    } else if (t <= spec.flip_step) {
      u = 0.0;
    } else {
      u = std::min(1.0, static_cast<double>(t - spec.flip_step) * spec.drift_rate);
    }
    std::vector<double> mixed(n_states);
    for (std::size_t i = 0; i < n_states; ++i) mixed[i] = (1.0 - u) * pre[i] + u * post[i];
    const MeanField base = MeanField::from_probs(std::move(mixed));
    const bool enforce = u <= 0.0 || u >= 1.0;
    const std::size_t required = u <= 0.0 ? spec.pre_majority : spec.post_majority;
    const MeanField m_star = spec.noise_scale > 0.0
                                 ? noisy_simplex(base, spec.noise_scale, required, enforce, noise_rng)
                                 : base;

    EventStep step;
    step.t = t;
    for (std::size_t idx : pool_rng.sample_without_replacement(spec.pool_size, spec.agents_per_step)) {
      step.active.push_back(timeline.personas[idx].agent_id);
    }
    std::sort(step.active.begin(), step.active.end());
    for (const auto& agent : step.active) {
      const std::size_t s = action_rng.next_categorical(m_star.probs());
      ActionRecord a;
      a.agent_id = agent;
      a.timestep = t;
      a.action_index = map.action_for(s);
      a.labels = derive_labels(states.label(s), a.action_index, states);
      step.actions.push_back(std::move(a));
    }
    if (t == signal_step && spec.flip_step <= spec.horizon) {
      ExogenousSignal sig;
      sig.source_id = "newswire";
      sig.text = "breaking update official report says collective mood is shifting toward " +
                 states.label(spec.post_majority);
      sig.timestep = t;
      step.signal = sig;
    }
    step.empirical_mean_field = m_star;
    timeline.steps.push_back(std::move(step));
  }
  return timeline;
}

}  // namespace mfmdp
