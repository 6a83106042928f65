// SPDX-License-Identifier: Apache-2.0
#pragma once

// Agent interfaces. The observer sees the scene and, when answering, only the
// current query; the reasoner sees the problem and the whole monologue.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/monologue.hpp"
#include "immo/policy.hpp"
#include "immo/rng.hpp"

namespace immo {

/// One policy decision recorded during an episode.
struct StepRecord {
  Role role = Role::Reasoner;
  PolicyState state;
  ActionMask mask;
  std::optional<int> action_id;  // unset for non-policy steps (e.g. templated captions)
  double log_prob = 0.0;
};

/// Per-episode resources handed to agents: the random stream and the step log.
struct EpisodeContext {
  explicit EpisodeContext(std::uint64_t seed) : rng(seed) {}
  Rng rng;
  std::vector<StepRecord> steps;
};

class ObserverAgent {
 public:
  virtual ~ObserverAgent() = default;
  virtual Utterance caption(const Scene& scene, EpisodeContext& ctx) = 0;
  virtual Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext& ctx) = 0;
};

class ReasonerAgent {
 public:
  virtual ~ReasonerAgent() = default;
  virtual Utterance next_query(const Problem& problem, const InnerMonologue& im, EpisodeContext& ctx) = 0;
  virtual Utterance final_answer(const Problem& problem, const InnerMonologue& im, EpisodeContext& ctx) = 0;
};

inline nlohmann::json to_json(const StepRecord& s) {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& [i, v] : s.state.features.canonical().entries) f.push_back({i, v});
  return {{"role", name(s.role)},
          {"state_key", s.state.key},
          {"feature_dim", s.state.features.dim},
          {"features", f},
          {"mask", s.mask},
          {"action_id", s.action_id ? nlohmann::json(*s.action_id) : nlohmann::json(nullptr)},
          {"log_prob", s.log_prob}};
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  StepRecord s;
  const auto role = j.at("role").get<std::string>();
  if (role != "observer" && role != "reasoner") throw FormatError("unknown role '" + role + "'");
  s.role = role == "observer" ? Role::Observer : Role::Reasoner;
  s.state.key = j.at("state_key").get<std::string>();
  s.state.features.dim = j.at("feature_dim").get<int>();
  for (const auto& e : j.at("features")) s.state.features.entries.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
  s.mask = j.at("mask").get<ActionMask>();
  if (!j.at("action_id").is_null()) s.action_id = j["action_id"].get<int>();
  s.log_prob = j.at("log_prob").get<double>();
  return s;
}

}  // namespace immo
