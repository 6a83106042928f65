// SPDX-License-Identifier: Apache-2.0
#pragma once

// Local agent implementations: ground-truth and noisy observers, scripted
// and oracle reasoners, policy-backed agents, and spies that record what each
// agent was shown.

#include <algorithm>
#include <string>
#include <vector>

#include "immo/agent.hpp"
#include "immo/features.hpp"
#include "immo/policy.hpp"
#include "immo/protocol.hpp"
#include "immo/sceneworld.hpp"

namespace immo {

inline Utterance token_answer(TokenId t, std::optional<int> action = std::nullopt) {
  return make_utterance(UtteranceKind::Answer, std::string{token_name(t)}, action);
}

inline Utterance query_utterance(QueryAction q, std::optional<int> action = std::nullopt) {
  return make_utterance(UtteranceKind::Query, query_surface(q), action);
}

inline Utterance final_utterance(TokenId t, std::optional<int> action = std::nullopt) {
  return make_utterance(UtteranceKind::FinalAnswer, std::string{token_name(t)}, action);
}

/// Answers from the scene's ground truth. Unknown query text gets "none".
class OracleObserver : public ObserverAgent {
 public:
  Utterance caption(const Scene& scene, EpisodeContext&) override {
    return make_utterance(UtteranceKind::Caption, immo::caption(scene));
  }
  Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext&) override {
    auto q = parse_query(query.text);
    return token_answer(q ? oracle_answer(scene, *q) : kNoneToken);
  }
};

/// Passes answers of an inner observer through the symmetric noise channel.
/// Captions are never corrupted.
class NoisyObserver : public ObserverAgent {
 public:
  NoisyObserver(ObserverAgent& inner, double epsilon) : inner_(inner), epsilon_(epsilon) {
    if (epsilon < 0.0 || epsilon > 1.0) throw InvalidArgument("epsilon must lie in [0, 1]");
  }
  Utterance caption(const Scene& scene, EpisodeContext& ctx) override { return inner_.caption(scene, ctx); }
  Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext& ctx) override {
    Utterance a = inner_.answer(scene, query, ctx);
    auto q = parse_query(query.text);
    auto tok = parse_token(a.text);
    if (!q || !tok) return a;
    a.text = token_name(corrupt(*tok, *q, epsilon_, ctx.rng));
    return a;
  }

 private:
  ObserverAgent& inner_;
  double epsilon_;
};

/// Fixed query plan and a fixed final answer. Once the plan runs out the last
/// query is repeated.
class ScriptedReasoner : public ReasonerAgent {
 public:
  ScriptedReasoner(std::vector<QueryAction> plan, std::string final_text)
      : plan_(std::move(plan)), final_(std::move(final_text)) {}

  Utterance next_query(const Problem&, const InnerMonologue& im, EpisodeContext&) override {
    if (plan_.empty()) throw InvalidArgument("scripted reasoner has no queries");
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(im.completed_turns()), plan_.size() - 1);
    return query_utterance(plan_[i]);
  }
  Utterance final_answer(const Problem&, const InnerMonologue&, EpisodeContext&) override {
    return make_utterance(UtteranceKind::FinalAnswer, final_);
  }

 private:
  std::vector<QueryAction> plan_;
  std::string final_;
};

/// Follows the minimal query plan of each template, repeating its last query
/// when it has turns to spare, and answers from the facts gathered (falling
/// back on the caption and then on the first answer of the template).
class OracleReasoner : public ReasonerAgent {
 public:
  Utterance next_query(const Problem& p, const InnerMonologue& im, EpisodeContext&) override {
    const auto facts = parsed_turns(im);
    switch (p.template_id) {
      case TemplateId::ColorOf: return query_utterance(ask_color_of(p.slot));
      case TemplateId::SizeOf: return query_utterance(ask_size_of(p.slot));
      case TemplateId::CountOf: return query_utterance(ask_count(p.slot));
      case TemplateId::ColorLeftOf:
      case TemplateId::SizeLeftOf: {
        for (const auto& f : facts)
          if (f.query == ask_left_of(p.slot) && f.answer >= token_of(Shape::Circle) && f.answer <= token_of(Shape::Triangle)) {
            const auto y = static_cast<Shape>(f.answer - token_of(Shape::Circle));
            return query_utterance(p.template_id == TemplateId::ColorLeftOf ? ask_color_of(y) : ask_size_of(y));
          }
        return query_utterance(ask_left_of(p.slot));
      }
    }
    return query_utterance(ask_count(p.slot));
  }

  Utterance final_answer(const Problem& p, const InnerMonologue& im, EpisodeContext&) override {
    if (auto a = solve_from_facts(p, parsed_turns(im))) {
      const auto vocab = template_answer_vocab(p.template_id);
      if (std::find(vocab.begin(), vocab.end(), *a) != vocab.end()) return final_utterance(*a);
    }
    if (auto c = parse_caption(im.caption().text); c && p.template_id == TemplateId::ColorOf && c->shape == p.slot)
      return final_utterance(token_of(c->color));
    return final_utterance(template_answer_vocab(p.template_id).front());
  }
};

enum class DecodeMode { Sample, Greedy };

/// Policy input for a reasoner decision. Tabular policies key on the raw
/// features; linear policies read the problem-conditioned expansion.
inline PolicyState reasoner_policy_state(const SoftmaxPolicy& policy, const ReasonerEncoding& enc, const Problem& p,
                                         const InnerMonologue& im, ReasonerPhase phase) {
  SparseVector x = featurize_reasoner_state(p, im, phase);
  if (policy.parameterization() == Parameterization::Tabular) return PolicyState::from_features(std::move(x));
  return PolicyState{state_key(x), expand_reasoner_features(x, enc)};
}

inline PolicyState observer_policy_state(const SoftmaxPolicy& policy, const Scene& scene, QueryAction q) {
  SparseVector x = featurize_observer_state(scene, q);
  if (policy.parameterization() == Parameterization::Tabular) return PolicyState::from_features(std::move(x));
  return PolicyState{state_key(x), expand_observer_features(x)};
}

/// Reasoner backed by a softmax policy over the 30 reasoner actions.
class PolicyReasoner : public ReasonerAgent {
 public:
  explicit PolicyReasoner(const SoftmaxPolicy& policy, ReasonerEncoding enc = {}, DecodeMode mode = DecodeMode::Sample)
      : policy_(policy), enc_(enc), mode_(mode) {
    if (policy.num_actions() != kReasonerActions) throw DimensionMismatch("reasoner policy needs 30 actions");
  }

  PolicyState state(const Problem& p, const InnerMonologue& im, ReasonerPhase phase) const {
    return reasoner_policy_state(policy_, enc_, p, im, phase);
  }

  Utterance next_query(const Problem& p, const InnerMonologue& im, EpisodeContext& ctx) override {
    const int a = decide(state(p, im, ReasonerPhase::Query), reasoner_query_mask(), ctx);
    return query_utterance(QueryAction::from_id(a), a);
  }

  Utterance final_answer(const Problem& p, const InnerMonologue& im, EpisodeContext& ctx) override {
    const int a = decide(state(p, im, ReasonerPhase::Final), reasoner_final_mask(p.template_id), ctx);
    if (a < kNumQueries) throw AnswerOutOfVocabulary("final action maps to a query");
    return final_utterance(a - kNumQueries, a);
  }

 private:
  int decide(PolicyState s, ActionMask mask, EpisodeContext& ctx) const {
    SampledAction pick;
    if (mode_ == DecodeMode::Sample) {
      pick = sample_action(policy_, s, ctx.rng, mask);
    } else {
      pick.action = greedy_action(policy_, s, mask);
      pick.log_prob = log_prob(policy_, s, pick.action, mask);
    }
    ctx.steps.push_back(StepRecord{Role::Reasoner, std::move(s), std::move(mask), pick.action, pick.log_prob});
    return pick.action;
  }

  const SoftmaxPolicy& policy_;
  ReasonerEncoding enc_;
  DecodeMode mode_;
};

/// Observer backed by a softmax policy over answer tokens. The caption is
/// templated and is not a policy decision.
class PolicyObserver : public ObserverAgent {
 public:
  explicit PolicyObserver(const SoftmaxPolicy& policy, DecodeMode mode = DecodeMode::Sample)
      : policy_(policy), mode_(mode) {
    if (policy.num_actions() != kNumTokens) throw DimensionMismatch("observer policy needs 15 actions");
  }

  PolicyState state(const Scene& scene, QueryAction q) const { return observer_policy_state(policy_, scene, q); }

  Utterance caption(const Scene& scene, EpisodeContext&) override {
    return make_utterance(UtteranceKind::Caption, immo::caption(scene));
  }

  Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext& ctx) override {
    auto q = parse_query(query.text);
    if (!q) return token_answer(kNoneToken);
    PolicyState s = state(scene, *q);
    ActionMask mask = observer_answer_mask(*q);
    SampledAction pick;
    if (mode_ == DecodeMode::Sample) {
      pick = sample_action(policy_, s, ctx.rng, mask);
    } else {
      pick.action = greedy_action(policy_, s, mask);
      pick.log_prob = log_prob(policy_, s, pick.action, mask);
    }
    ctx.steps.push_back(StepRecord{Role::Observer, std::move(s), std::move(mask), pick.action, pick.log_prob});
    return token_answer(pick.action, pick.action);
  }

 private:
  const SoftmaxPolicy& policy_;
  DecodeMode mode_;
};

// ---------------------------------------------------------------------------
// Spies

struct ObserverCall {
  std::string scene_id;
  std::optional<Utterance> query;  // empty for caption calls
};

class SpyObserver : public ObserverAgent {
 public:
  explicit SpyObserver(ObserverAgent& inner) : inner_(inner) {}
  Utterance caption(const Scene& scene, EpisodeContext& ctx) override {
    calls.push_back({scene.id, std::nullopt});
    return inner_.caption(scene, ctx);
  }
  Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext& ctx) override {
    calls.push_back({scene.id, query});
    return inner_.answer(scene, query, ctx);
  }
  std::vector<ObserverCall> calls;

 private:
  ObserverAgent& inner_;
};

struct ReasonerCall {
  Problem problem;
  InnerMonologue im;
  bool final = false;
};

class SpyReasoner : public ReasonerAgent {
 public:
  explicit SpyReasoner(ReasonerAgent& inner) : inner_(inner) {}
  Utterance next_query(const Problem& p, const InnerMonologue& im, EpisodeContext& ctx) override {
    calls.push_back({p, im, false});
    return inner_.next_query(p, im, ctx);
  }
  Utterance final_answer(const Problem& p, const InnerMonologue& im, EpisodeContext& ctx) override {
    calls.push_back({p, im, true});
    return inner_.final_answer(p, im, ctx);
  }
  std::vector<ReasonerCall> calls;

 private:
  ReasonerAgent& inner_;
};

}  // namespace immo
