// SPDX-License-Identifier: Apache-2.0
#pragma once

// The inner-monologue loop: the observer captions the scene (IM_0), then for
// each of t turns the reasoner asks a query given the problem and the full
// monologue, the observer answers it from the scene alone, and both are
// appended. After turn t the reasoner gives its final answer.

#include <algorithm>
#include <cctype>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/agent.hpp"
#include "immo/monologue.hpp"
#include "immo/sceneworld.hpp"

namespace immo {

inline constexpr int kMaxTurnsCap = 8;

struct EpisodeConfig {
  int max_turns = 2;
  std::uint64_t seed = 0;
  int max_turns_cap = kMaxTurnsCap;

  void validate() const {
    if (max_turns < 0 || max_turns > max_turns_cap)
      throw InvalidArgument("max_turns must lie in [0, " + std::to_string(max_turns_cap) + "]");
  }
};

// ---------------------------------------------------------------------------
// Reward

/// Lowercase and strip surrounding whitespace.
inline std::string normalize_answer(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out{s.substr(b, e - b + 1)};
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// 1 iff the normalized answers are equal.
inline int exact_match(std::string_view predicted, std::string_view truth) {
  return normalize_answer(predicted) == normalize_answer(truth) ? 1 : 0;
}

/// R = r - beta * KL. The KL term is a penalty, so it is subtracted.
inline double final_reward(int r, double kl_term, double beta) { return static_cast<double>(r) - beta * kl_term; }

struct RewardBreakdown {
  int r = 0;
  double kl_term = 0.0;
  double R = 0.0;
  bool operator==(const RewardBreakdown&) const = default;
};

// ---------------------------------------------------------------------------
// Transcript

struct EpisodeTranscript {
  Problem problem;
  std::string scene_id;
  InnerMonologue im{Utterance{Role::Observer, UtteranceKind::Caption, "-", std::nullopt}};
  Utterance final_answer;
  TokenId ground_truth = 0;
  RewardBreakdown reward;
  std::vector<StepRecord> steps;

  int steps_of(Role role) const {
    return static_cast<int>(std::count_if(steps.begin(), steps.end(), [role](const StepRecord& s) { return s.role == role; }));
  }
};

inline nlohmann::json to_json(const EpisodeTranscript& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  return {{"scene_id", t.scene_id},
          {"problem", to_json(t.problem)},
          {"im", to_json(t.im)},
          {"final_answer", to_json(t.final_answer)},
          {"ground_truth", token_name(t.ground_truth)},
          {"reward", {{"r", t.reward.r}, {"kl", t.reward.kl_term}, {"R", t.reward.R}}},
          {"steps", steps}};
}

inline EpisodeTranscript transcript_from_json(const nlohmann::json& j) {
  try {
    EpisodeTranscript t;
    t.scene_id = j.at("scene_id").get<std::string>();
    t.problem = problem_from_json(j.at("problem"));
    t.im = monologue_from_json(j.at("im"));
    t.final_answer = utterance_from_json(j.at("final_answer"));
    auto g = parse_token(j.at("ground_truth").get<std::string>());
    if (!g) throw FormatError("bad ground truth");
    t.ground_truth = *g;
    const auto& r = j.at("reward");
    t.reward = {r.at("r").get<int>(), r.at("kl").get<double>(), r.at("R").get<double>()};
    for (const auto& s : j.at("steps")) t.steps.push_back(step_from_json(s));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string{"transcript: "} + e.what());
  }
}

// ---------------------------------------------------------------------------
// Protocol operations

namespace detail {

/// Runs one agent call and guarantees it contributes exactly one step record.
template <typename Call>
Utterance recorded_call(Role role, EpisodeContext& ctx, Call&& call) {
  const auto before = ctx.steps.size();
  Utterance u = call();
  validate_utterance(u);
  if (u.speaker != role) throw InvalidArgument("agent produced an utterance for the wrong role");
  if (ctx.steps.size() == before) {
    ctx.steps.push_back(StepRecord{role, {}, {}, u.action_id, 0.0});
  } else if (ctx.steps.size() != before + 1 || ctx.steps.back().role != role) {
    throw InvalidArgument("agent must record at most one step per call");
  }
  return u;
}

}  // namespace detail

/// IM_0 = C = Observer(I).
inline InnerMonologue init_monologue(ObserverAgent& observer, const Scene& scene, EpisodeContext& ctx) {
  validate_scene(scene);
  Utterance c = detail::recorded_call(Role::Observer, ctx, [&] { return observer.caption(scene, ctx); });
  if (c.kind != UtteranceKind::Caption) throw InvalidArgument("observer caption has wrong kind");
  return InnerMonologue(std::move(c));
}

/// One turn: Q_i = Reasoner(P, IM_{i-1}); A_i = Observer(I, Q_i).
inline InnerMonologue run_turn(ReasonerAgent& reasoner, ObserverAgent& observer, const Problem& problem,
                               const Scene& scene, const InnerMonologue& im, EpisodeContext& ctx,
                               int max_turns = kMaxTurnsCap) {
  const int turn = im.completed_turns() + 1;
  if (turn > max_turns) throw InvalidArgument("monologue already has max_turns turns");
  try {
    Utterance q = detail::recorded_call(Role::Reasoner, ctx, [&] { return reasoner.next_query(problem, im, ctx); });
    if (q.kind != UtteranceKind::Query) throw InvalidArgument("reasoner query has wrong kind");
    Utterance a = detail::recorded_call(Role::Observer, ctx, [&] { return observer.answer(scene, q, ctx); });
    if (a.kind != UtteranceKind::Answer) throw InvalidArgument("observer answer has wrong kind");
    return im.extended(std::move(q), std::move(a));
  } catch (const AgentFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw AgentFailure(turn, e.what());
  }
}

/// A_f = Reasoner(P, IM_t); the answer must lie in the template's answer set.
inline Utterance finalize(ReasonerAgent& reasoner, const Problem& problem, const InnerMonologue& im,
                          EpisodeContext& ctx) {
  Utterance f = detail::recorded_call(Role::Reasoner, ctx, [&] { return reasoner.final_answer(problem, im, ctx); });
  if (f.kind != UtteranceKind::FinalAnswer) throw InvalidArgument("reasoner final answer has wrong kind");
  const auto tok = parse_token(normalize_answer(f.text));
  const auto vocab = template_answer_vocab(problem.template_id);
  if (!tok || std::find(vocab.begin(), vocab.end(), *tok) == vocab.end())
    throw AnswerOutOfVocabulary("'" + f.text + "' is not an answer to " + std::string{name(problem.template_id)});
  return f;
}

/// Optional hook computing the KL term of an episode from its step records.
using KlTermFn = std::function<double(const std::vector<StepRecord>&)>;

struct RewardSpec {
  double beta = 0.0;
  KlTermFn kl_term;
};

/// Full episode: caption, t turns, final answer, reward.
inline EpisodeTranscript run_episode(ReasonerAgent& reasoner, ObserverAgent& observer, const Problem& problem,
                                     const Scene& scene, const EpisodeConfig& cfg, const RewardSpec& reward = {}) {
  cfg.validate();
  EpisodeContext ctx(cfg.seed);
  InnerMonologue im = init_monologue(observer, scene, ctx);
  for (int i = 1; i <= cfg.max_turns; ++i) im = run_turn(reasoner, observer, problem, scene, im, ctx, cfg.max_turns);
  Utterance f;
  try {
    f = finalize(reasoner, problem, im, ctx);
  } catch (const AnswerOutOfVocabulary&) {
    throw;
  } catch (const AgentFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw AgentFailure(cfg.max_turns + 1, e.what());
  }

  EpisodeTranscript t;
  t.problem = problem;
  t.scene_id = scene.id;
  t.im = std::move(im);
  t.final_answer = std::move(f);
  t.ground_truth = problem.ground_truth;
  t.steps = std::move(ctx.steps);
  t.reward.r = exact_match(t.final_answer.text, token_name(problem.ground_truth));
  t.reward.kl_term = reward.kl_term ? reward.kl_term(t.steps) : 0.0;
  t.reward.R = final_reward(t.reward.r, t.reward.kl_term, reward.beta);
  return t;
}

}  // namespace immo
