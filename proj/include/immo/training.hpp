// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two-stage optimization: behavior cloning on gold dialogues, then
// alternating PPO where odd epochs update the Reasoner and even epochs the
// Observer against a frozen partner. Rewards are terminal (gamma = 1), so
// every step of an episode shares the return R = r - beta * kl_term.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "immo/agents.hpp"
#include "immo/errors.hpp"
#include "immo/features.hpp"
#include "immo/policy.hpp"
#include "immo/protocol.hpp"
#include "immo/rng.hpp"
#include "immo/sceneworld.hpp"

namespace immo {

// ---------------------------------------------------------------------------
// Stage 1: behavior cloning

struct SLConfig {
  int epochs = 8;
  double learning_rate = 2.0;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || !(learning_rate > 0.0))
      throw InvalidArgument("SL epochs, learning rate and batch size must be positive");
  }
};

struct SLExample {
  PolicyState state;
  ActionMask mask;
  int action = 0;
};

/// Mean negative log-probability of the gold actions.
inline double imitation_loss(const SoftmaxPolicy& policy, const std::vector<SLExample>& data) {
  if (data.empty()) throw EmptyDataset("no examples");
  double total = 0.0;
  for (const auto& e : data) total -= log_prob(policy, e.state, e.action, e.mask);
  return total / static_cast<double>(data.size());
}

inline bool parameters_finite(const SoftmaxPolicy& policy) {
  if (policy.parameterization() == Parameterization::Linear)
    return std::all_of(policy.weights().begin(), policy.weights().end(), [](double w) { return std::isfinite(w); });
  for (const auto& [k, row] : policy.table())
    for (double w : row)
      if (!std::isfinite(w)) return false;
  return true;
}

/// Minibatch gradient ascent on mean log-likelihood. Returns the training
/// loss after each epoch.
inline std::vector<double> behavior_clone(SoftmaxPolicy& policy, const std::vector<SLExample>& data,
                                          const SLConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw EmptyDataset("behavior cloning needs at least one example");
  Rng rng(derive_seed(cfg.seed, "sl", 0));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> curve;
  std::vector<PolicyGradient> grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      grads.clear();
      for (std::size_t i = b; i < e; ++i) {
        const auto& ex = data[order[i]];
        grads.push_back(grad_log_prob(policy, ex.state, ex.action, ex.mask));
      }
      const double scale = cfg.learning_rate / static_cast<double>(e - b);
      for (const auto& g : grads) apply_gradient(policy, g, scale);
    }
    const double loss = imitation_loss(policy, data);
    if (!std::isfinite(loss) || !parameters_finite(policy))
      throw TrainingDivergence("non-finite imitation loss at epoch " + std::to_string(epoch + 1));
    curve.push_back(loss);
  }
  return curve;
}

/// Reasoner examples from a dialogue: one per query, then the final answer.
inline void append_reasoner_examples(std::vector<SLExample>& out, const SoftmaxPolicy& policy,
                                     const ReasonerEncoding& enc, const Scene& scene, const Problem& p,
                                     const GoldDialogue& d) {
  InnerMonologue im(make_utterance(UtteranceKind::Caption, caption(scene)));
  for (const auto& t : d.turns) {
    out.push_back({reasoner_policy_state(policy, enc, p, im, ReasonerPhase::Query), reasoner_query_mask(),
                   reasoner_query_action(t.query)});
    im = im.extended(make_utterance(UtteranceKind::Query, query_surface(t.query)),
                     make_utterance(UtteranceKind::Answer, std::string{token_name(t.answer)}));
  }
  out.push_back({reasoner_policy_state(policy, enc, p, im, ReasonerPhase::Final), reasoner_final_mask(p.template_id),
                 reasoner_answer_action(d.final_answer)});
}

/// The minimal gold trajectory replayed under the noiseless oracle.
inline GoldDialogue gold_dialogue(const Scene& scene, const Problem& p) {
  GoldDialogue d;
  for (const auto& s : gold_trajectory(scene, p)) {
    if (s.action_id < kNumQueries) {
      const auto q = QueryAction::from_id(s.action_id);
      d.turns.push_back({q, oracle_answer(scene, q)});
    } else {
      d.final_answer = s.action_id - kNumQueries;
    }
  }
  return d;
}

/// Reasoner SL data: each record's converted rationale dialogue plus, when
/// it differs, its minimal gold trajectory.
inline std::vector<SLExample> reasoner_sl_dataset(const std::vector<RationaleRecord>& records,
                                                  const SoftmaxPolicy& policy, const ReasonerEncoding& enc = {}) {
  std::vector<SLExample> out;
  for (const auto& r : records) {
    const GoldDialogue minimal = gold_dialogue(r.scene, r.problem);
    if (r.gold_dialogue) append_reasoner_examples(out, policy, enc, r.scene, r.problem, *r.gold_dialogue);
    if (!r.gold_dialogue || !(*r.gold_dialogue == minimal))
      append_reasoner_examples(out, policy, enc, r.scene, r.problem, minimal);
  }
  if (out.empty()) throw EmptyDataset("no reasoner examples");
  return out;
}

/// Observer SL data: every query against every scene, labelled by the oracle.
inline std::vector<SLExample> observer_sl_dataset(const std::vector<RationaleRecord>& records,
                                                  const SoftmaxPolicy& policy) {
  std::vector<SLExample> out;
  for (const auto& r : records)
    for (int qi = 0; qi < kNumQueries; ++qi) {
      const auto q = QueryAction::from_id(qi);
      out.push_back({observer_policy_state(policy, r.scene, q), observer_answer_mask(q), oracle_answer(r.scene, q)});
    }
  if (out.empty()) throw EmptyDataset("no observer examples");
  return out;
}

inline SoftmaxPolicy make_reasoner_policy() {
  return SoftmaxPolicy::linear(reasoner_action_space(), kReasonerPolicyDim);
}
inline SoftmaxPolicy make_observer_policy() {
  return SoftmaxPolicy::linear(observer_action_space(), kObserverPolicyDim);
}

// ---------------------------------------------------------------------------
// Stage 2: PPO

enum class Baseline { MeanReturn, PerStateValueTable };
enum class Optimizer { Sgd, Adam };

inline std::string_view name(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }
inline std::optional<Optimizer> parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adam") return Optimizer::Adam;
  return std::nullopt;
}

inline std::string_view name(Baseline b) {
  return b == Baseline::MeanReturn ? "mean_return" : "per_state_value_table";
}
inline std::optional<Baseline> parse_baseline(std::string_view s) {
  if (s == "mean_return") return Baseline::MeanReturn;
  if (s == "per_state_value_table") return Baseline::PerStateValueTable;
  return std::nullopt;
}

struct RLConfig {
  static constexpr double gamma = 1.0;

  int num_epochs = 200;
  int episodes_per_epoch = 4096;
  int max_turns = 2;
  double beta = 0.01;
  double clip_ratio = 0.2;
  int ppo_epochs_per_batch = 4;
  double learning_rate = 4.0;
  Baseline baseline = Baseline::MeanReturn;
  int minibatch_size = 64;
  Optimizer optimizer = Optimizer::Sgd;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_epochs <= 0 || episodes_per_epoch <= 0 || ppo_epochs_per_batch <= 0 || minibatch_size <= 0)
      throw InvalidArgument("RL epoch, episode and batch counts must be positive");
    if (max_turns < 0 || max_turns > kMaxTurnsCap) throw InvalidArgument("max_turns out of range");
    if (!(beta >= 0.0)) throw InvalidArgument("beta must be non-negative");
    if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw InvalidArgument("clip_ratio must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  }
};

/// Active role of a 1-based epoch: odd epochs train the Reasoner.
inline Role active_role(int epoch) {
  if (epoch < 1) throw InvalidArgument("epochs are numbered from 1");
  return epoch % 2 == 1 ? Role::Reasoner : Role::Observer;
}

struct SceneProblem {
  Scene scene;
  Problem problem;
};

struct RolloutBatch {
  std::vector<EpisodeTranscript> episodes;
  Role active_role = Role::Reasoner;
};

inline bool is_policy_step(const StepRecord& s) { return s.action_id.has_value() && !s.state.key.empty(); }

/// Mean over the role's policy steps of KL(current || reference) at each
/// visited state.
inline double mean_state_kl(const std::vector<StepRecord>& steps, Role role, const SoftmaxPolicy& current,
                            const SoftmaxPolicy& reference) {
  double total = 0.0;
  int n = 0;
  for (const auto& s : steps) {
    if (s.role != role || !is_policy_step(s)) continue;
    total += kl(action_distribution(current, s.state, s.mask), action_distribution(reference, s.state, s.mask));
    ++n;
  }
  return n ? total / n : 0.0;
}

/// Runs episodes_per_epoch episodes on problems drawn uniformly from
/// `problems`. The agents must be backed by `active` for the active role.
inline RolloutBatch collect_rollouts(ReasonerAgent& reasoner, ObserverAgent& observer,
                                     const std::vector<SceneProblem>& problems, const RLConfig& cfg, Role active,
                                     const SoftmaxPolicy& active_policy, const PolicySnapshot& reference,
                                     std::uint64_t batch_seed) {
  cfg.validate();
  if (problems.empty()) throw EmptyDataset("no training problems");
  if (reference.empty()) throw InvalidArgument("rollouts need a reference snapshot");
  RolloutBatch batch;
  batch.active_role = active;
  Rng pick(derive_seed(batch_seed, "pick", 0));
  RewardSpec reward{cfg.beta, [&](const std::vector<StepRecord>& steps) {
                      return mean_state_kl(steps, active, active_policy, reference.policy());
                    }};
  for (int i = 0; i < cfg.episodes_per_epoch; ++i) {
    const auto& sp = problems[pick.below(problems.size())];
    EpisodeConfig ec;
    ec.max_turns = cfg.max_turns;
    ec.seed = derive_seed(batch_seed, "episode", static_cast<std::uint64_t>(i));
    batch.episodes.push_back(run_episode(reasoner, observer, sp.problem, sp.scene, ec, reward));
  }
  for (const auto& ep : batch.episodes)
    for (const auto& s : ep.steps)
      if (s.role == active && is_policy_step(s) && !std::isfinite(s.log_prob))
        throw NonFiniteRatio("sampled step has non-finite log-probability");
  return batch;
}

/// Running per-state mean of observed returns.
class ValueTable {
 public:
  double value(const std::string& key, double fallback) const {
    auto it = table_.find(key);
    return it == table_.end() ? fallback : it->second.first;
  }
  void observe(const std::string& key, double ret) {
    auto& [mean, n] = table_[key];
    ++n;
    mean += (ret - mean) / static_cast<double>(n);
  }
  std::size_t size() const { return table_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : table_) j[k] = {v.first, v.second};
    return j;
  }
  static ValueTable from_json(const nlohmann::json& j) {
    ValueTable t;
    for (auto it = j.begin(); it != j.end(); ++it) t.table_[it.key()] = {it.value().at(0).get<double>(), it.value().at(1).get<long>()};
    return t;
  }

 private:
  std::map<std::string, std::pair<double, long>> table_;
};

/// One training sample for PPO: a visited state, the sampled action, its
/// sampling-time log-probability and its advantage.
struct PPOSample {
  PolicyState state;
  ActionMask mask;
  int action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
};

/// Advantages for the active role's policy steps, in episode/step order.
/// MeanReturn subtracts the step-weighted batch mean of R, so the
/// advantages sum to zero; PerStateValueTable subtracts V(s) and then folds
/// the batch into the table.
inline std::vector<PPOSample> compute_advantages(const RolloutBatch& batch, Baseline baseline,
                                                 ValueTable* table = nullptr) {
  std::vector<PPOSample> out;
  std::vector<double> returns;
  for (const auto& ep : batch.episodes)
    for (const auto& s : ep.steps) {
      if (s.role != batch.active_role || !is_policy_step(s)) continue;
      out.push_back({s.state, s.mask, *s.action_id, s.log_prob, 0.0});
      returns.push_back(ep.reward.R);
    }
  if (out.empty()) return out;
  const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
  if (baseline == Baseline::MeanReturn) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i].advantage = returns[i] - mean;
    return out;
  }
  if (!table) throw InvalidArgument("PerStateValueTable baseline needs a value table");
  for (std::size_t i = 0; i < out.size(); ++i) out[i].advantage = returns[i] - table->value(out[i].state.key, mean);
  for (std::size_t i = 0; i < out.size(); ++i) table->observe(out[i].state.key, returns[i]);
  return out;
}

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)
inline double clipped_objective(double rho, double advantage, double clip_ratio) {
  const double clipped = std::clamp(rho, 1.0 - clip_ratio, 1.0 + clip_ratio);
  return std::min(rho * advantage, clipped * advantage);
}

/// Lazy Adam ascent: moments and steps are kept only for parameters a
/// minibatch touches.
class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  /// theta += lr * m_hat / (sqrt(v_hat) + eps) for the summed gradient
  /// sum_g scale_g * g.
  void step(SoftmaxPolicy& policy, const std::vector<PolicyGradient>& grads, const std::vector<double>& scales,
            double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    if (policy.parameterization() == Parameterization::Linear) {
      std::unordered_map<std::size_t, double> g;
      const auto dim = static_cast<std::size_t>(policy.feature_dim());
      for (std::size_t k = 0; k < grads.size(); ++k)
        for (std::size_t a = 0; a < grads[k].coeffs.size(); ++a) {
          if (grads[k].coeffs[a] == 0.0) continue;
          for (const auto& [i, v] : grads[k].features.entries)
            g[a * dim + static_cast<std::size_t>(i)] += scales[k] * grads[k].coeffs[a] * v;
        }
      if (m_.empty()) {
        m_.assign(policy.weights().size(), 0.0);
        v_.assign(policy.weights().size(), 0.0);
      }
      std::vector<std::pair<std::size_t, double>> ordered(g.begin(), g.end());
      std::sort(ordered.begin(), ordered.end());
      for (const auto& [idx, gi] : ordered) {
        m_[idx] = kBeta1 * m_[idx] + (1.0 - kBeta1) * gi;
        v_[idx] = kBeta2 * v_[idx] + (1.0 - kBeta2) * gi * gi;
        policy.weight(static_cast<int>(idx / dim), static_cast<int>(idx % dim)) +=
            lr * (m_[idx] / c1) / (std::sqrt(v_[idx] / c2) + kEps);
      }
      return;
    }
    std::map<std::string, std::vector<double>> g;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto& row = g[grads[k].key];
      row.resize(grads[k].coeffs.size(), 0.0);
      for (std::size_t a = 0; a < row.size(); ++a) row[a] += scales[k] * grads[k].coeffs[a];
    }
    for (const auto& [key, gi] : g) {
      auto& m = tm_[key];
      auto& v = tv_[key];
      m.resize(gi.size(), 0.0);
      v.resize(gi.size(), 0.0);
      auto& row = policy.table_row(key);
      for (std::size_t a = 0; a < gi.size(); ++a) {
        m[a] = kBeta1 * m[a] + (1.0 - kBeta1) * gi[a];
        v[a] = kBeta2 * v[a] + (1.0 - kBeta2) * gi[a] * gi[a];
        row[a] += lr * (m[a] / c1) / (std::sqrt(v[a] / c2) + kEps);
      }
    }
  }

 private:
  long t_ = 0;
  std::vector<double> m_, v_;
  std::map<std::string, std::vector<double>> tm_, tv_;
};

struct PPOStats {
  double mean_surrogate = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t steps = 0;
};

/// Gradient ascent on the clipped surrogate minus beta times the per-state
/// KL to the reference, over ppo_epochs_per_batch shuffled passes.
/// Surrogate and clip statistics are averaged over all passes; mean_kl is
/// measured after the update.
inline PPOStats ppo_update(SoftmaxPolicy& policy, const std::vector<PPOSample>& samples,
                           const PolicySnapshot& reference, const RLConfig& cfg, std::uint64_t seed = 0,
                           AdamOptimizer* adam = nullptr) {
  cfg.validate();
  PPOStats stats;
  stats.steps = samples.size();
  if (samples.empty()) return stats;
  for (const auto& s : samples)
    if (!std::isfinite(s.old_log_prob))
      throw NonFiniteRatio("stored log_prob " + std::to_string(s.old_log_prob) + " for action " +
                           std::to_string(s.action) + " at state " + s.state.key);
  Rng rng(derive_seed(seed, "ppo", 0));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PolicyGradient> grads;
  double surrogate = 0.0;
  std::size_t clipped = 0, evaluated = 0;
  const auto mb = static_cast<std::size_t>(cfg.minibatch_size);
  for (int pass = 0; pass < cfg.ppo_epochs_per_batch; ++pass) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += mb) {
      const std::size_t e = std::min(order.size(), b + mb);
      grads.clear();
      std::vector<double> scales;
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = samples[order[i]];
        const double lp = log_prob(policy, s.state, s.action, s.mask);
        const double rho = std::exp(lp - s.old_log_prob);
        if (!std::isfinite(rho)) throw NonFiniteRatio("ratio overflow at state " + s.state.key);
        const double obj = clipped_objective(rho, s.advantage, cfg.clip_ratio);
        surrogate += obj;
        ++evaluated;
        const bool binding = (s.advantage > 0.0 && rho > 1.0 + cfg.clip_ratio) ||
                             (s.advantage < 0.0 && rho < 1.0 - cfg.clip_ratio);
        if (binding) {
          ++clipped;
        } else if (s.advantage != 0.0) {
          grads.push_back(grad_log_prob(policy, s.state, s.action, s.mask));
          scales.push_back(rho * s.advantage);
        }
        if (cfg.beta > 0.0) {
          grads.push_back(grad_kl(policy, s.state, action_distribution(reference.policy(), s.state, s.mask), s.mask));
          scales.push_back(-cfg.beta);
        }
      }
      const double lr = cfg.learning_rate / static_cast<double>(e - b);
      if (cfg.optimizer == Optimizer::Adam) {
        if (!adam) throw InvalidArgument("Adam optimizer state missing");
        for (double& sc : scales) sc /= static_cast<double>(e - b);
        adam->step(policy, grads, scales, cfg.learning_rate);
      } else {
        for (std::size_t g = 0; g < grads.size(); ++g) apply_gradient(policy, grads[g], lr * scales[g]);
      }
    }
  }
  if (!parameters_finite(policy)) throw TrainingDivergence("non-finite parameters after PPO update");
  stats.mean_surrogate = surrogate / static_cast<double>(evaluated);
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(evaluated);
  double k = 0.0;
  for (const auto& s : samples)
    k += kl(action_distribution(policy, s.state, s.mask), action_distribution(reference.policy(), s.state, s.mask));
  stats.mean_kl = k / static_cast<double>(samples.size());
  return stats;
}

// ---------------------------------------------------------------------------
// Alternating training

struct EpochMetrics {
  int epoch = 0;
  Role active_role = Role::Reasoner;
  double mean_R = 0.0;
  double mean_r = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  std::optional<double> eval_accuracy;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"active_role", name(m.active_role)},
          {"mean_R", m.mean_R},
          {"mean_r", m.mean_r},
          {"mean_kl", m.mean_kl},
          {"clip_fraction", m.clip_fraction},
          {"eval_accuracy", m.eval_accuracy ? nlohmann::json(*m.eval_accuracy) : nlohmann::json(nullptr)}};
}

inline EpochMetrics metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.active_role = j.at("active_role").get<std::string>() == "observer" ? Role::Observer : Role::Reasoner;
  m.mean_R = j.at("mean_R").get<double>();
  m.mean_r = j.at("mean_r").get<double>();
  m.mean_kl = j.at("mean_kl").get<double>();
  m.clip_fraction = j.at("clip_fraction").get<double>();
  if (!j.at("eval_accuracy").is_null()) m.eval_accuracy = j["eval_accuracy"].get<double>();
  return m;
}

/// Everything needed to continue alternating training after `epoch`.
struct TrainState {
  int epoch = 0;  // last completed epoch; 0 = post-SL
  SoftmaxPolicy reasoner = make_reasoner_policy();
  SoftmaxPolicy observer = make_observer_policy();
  PolicySnapshot reasoner_ref;  // set at the reasoner's first active epoch
  PolicySnapshot observer_ref;
  ValueTable reasoner_values;
  ValueTable observer_values;
  AdamOptimizer reasoner_adam;  // not persisted; a resumed run restarts the moments
  AdamOptimizer observer_adam;
};

/// Environment around the two policies during RL.
struct TrainEnv {
  double epsilon = 0.0;  // observer noise
  ReasonerEncoding encoding{};
  /// Optional held-out accuracy of the current pair, logged per epoch.
  std::function<double(const SoftmaxPolicy& reasoner, const SoftmaxPolicy& observer)> evaluate;
  /// Called after each completed epoch (checkpointing).
  std::function<void(const TrainState&, const EpochMetrics&)> on_epoch_end;
};

/// Runs one epoch of alternating training. Throws if the frozen model changes.
inline EpochMetrics train_epoch(TrainState& st, const std::vector<SceneProblem>& problems, const RLConfig& cfg,
                                const TrainEnv& env) {
  const int epoch = st.epoch + 1;
  const Role role = active_role(epoch);
  SoftmaxPolicy& active = role == Role::Reasoner ? st.reasoner : st.observer;
  const SoftmaxPolicy& frozen = role == Role::Reasoner ? st.observer : st.reasoner;
  PolicySnapshot& ref = role == Role::Reasoner ? st.reasoner_ref : st.observer_ref;
  ValueTable& values = role == Role::Reasoner ? st.reasoner_values : st.observer_values;
  AdamOptimizer& adam = role == Role::Reasoner ? st.reasoner_adam : st.observer_adam;
  if (ref.empty()) ref = snapshot(active);
  const std::string frozen_digest = digest(frozen);

  const std::uint64_t epoch_seed = derive_seed(cfg.seed, "rl-epoch", static_cast<std::uint64_t>(epoch));
  PolicyReasoner reasoner(st.reasoner, env.encoding, DecodeMode::Sample);
  PolicyObserver observer_policy(st.observer, DecodeMode::Sample);
  NoisyObserver observer(observer_policy, env.epsilon);
  const RolloutBatch batch = collect_rollouts(reasoner, observer, problems, cfg, role, active, ref, epoch_seed);
  const auto samples =
      compute_advantages(batch, cfg.baseline, cfg.baseline == Baseline::PerStateValueTable ? &values : nullptr);
  const PPOStats stats = ppo_update(active, samples, ref, cfg, epoch_seed, &adam);

  if (digest(frozen) != frozen_digest)
    throw InvalidArgument("frozen " + std::string{name(role == Role::Reasoner ? Role::Observer : Role::Reasoner)} +
                          " changed during epoch " + std::to_string(epoch));

  EpochMetrics m;
  m.epoch = epoch;
  m.active_role = role;
  for (const auto& ep : batch.episodes) {
    m.mean_R += ep.reward.R;
    m.mean_r += ep.reward.r;
    m.mean_kl += ep.reward.kl_term;
  }
  const double n = static_cast<double>(batch.episodes.size());
  m.mean_R /= n;
  m.mean_r /= n;
  m.mean_kl /= n;
  m.clip_fraction = stats.clip_fraction;
  if (env.evaluate) m.eval_accuracy = env.evaluate(st.reasoner, st.observer);
  st.epoch = epoch;
  if (env.on_epoch_end) env.on_epoch_end(st, m);
  return m;
}

/// Epochs st.epoch + 1 .. cfg.num_epochs.
inline std::vector<EpochMetrics> train_alternating(TrainState& st, const std::vector<SceneProblem>& problems,
                                                   const RLConfig& cfg, const TrainEnv& env = {}) {
  cfg.validate();
  if (problems.empty()) throw EmptyDataset("no training problems");
  std::vector<EpochMetrics> out;
  while (st.epoch < cfg.num_epochs) out.push_back(train_epoch(st, problems, cfg, env));
  return out;
}

// ---------------------------------------------------------------------------
// Config and run-directory I/O

inline nlohmann::json to_json(const SLConfig& c) {
  return {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

inline SLConfig sl_config_from_json(const nlohmann::json& j) {
  SLConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const RLConfig& c) {
  return {{"num_epochs", c.num_epochs},
          {"episodes_per_epoch", c.episodes_per_epoch},
          {"max_turns", c.max_turns},
          {"beta", c.beta},
          {"clip_ratio", c.clip_ratio},
          {"ppo_epochs_per_batch", c.ppo_epochs_per_batch},
          {"learning_rate", c.learning_rate},
          {"baseline", name(c.baseline)},
          {"minibatch_size", c.minibatch_size},
          {"optimizer", name(c.optimizer)},
          {"gamma", RLConfig::gamma},
          {"seed", c.seed}};
}

inline RLConfig rl_config_from_json(const nlohmann::json& j) {
  RLConfig c;
  c.num_epochs = j.at("num_epochs").get<int>();
  c.episodes_per_epoch = j.at("episodes_per_epoch").get<int>();
  c.max_turns = j.at("max_turns").get<int>();
  c.beta = j.at("beta").get<double>();
  c.clip_ratio = j.at("clip_ratio").get<double>();
  c.ppo_epochs_per_batch = j.at("ppo_epochs_per_batch").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  auto b = parse_baseline(j.at("baseline").get<std::string>());
  if (!b) throw FormatError("unknown baseline");
  c.baseline = *b;
  c.minibatch_size = j.value("minibatch_size", 64);
  auto o = parse_optimizer(j.value("optimizer", std::string{"sgd"}));
  if (!o) throw FormatError("unknown optimizer");
  c.optimizer = *o;
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("gamma") && j["gamma"].get<double>() != RLConfig::gamma) throw FormatError("gamma is fixed at 1");
  c.validate();
  return c;
}

namespace run_files {
inline std::filesystem::path reasoner(const std::filesystem::path& dir, int epoch) {
  return dir / ("reasoner_epoch" + std::to_string(epoch) + ".json");
}
inline std::filesystem::path observer(const std::filesystem::path& dir, int epoch) {
  return dir / ("observer_epoch" + std::to_string(epoch) + ".json");
}
inline std::filesystem::path state(const std::filesystem::path& dir, int epoch) {
  return dir / ("state_epoch" + std::to_string(epoch) + ".json");
}
inline std::filesystem::path metrics(const std::filesystem::path& dir) { return dir / "metrics.jsonl"; }
inline std::filesystem::path config(const std::filesystem::path& dir) { return dir / "config.json"; }
}  // namespace run_files

/// Writes both checkpoints of `st.epoch`, then the resume state (snapshots
/// and value tables). The state file is written last and marks the epoch as
/// complete.
inline void save_train_state(const std::filesystem::path& dir, const TrainState& st) {
  std::filesystem::create_directories(dir);
  save_checkpoint(st.reasoner, run_files::reasoner(dir, st.epoch));
  save_checkpoint(st.observer, run_files::observer(dir, st.epoch));
  nlohmann::json j = {{"epoch", st.epoch},
                      {"reasoner_values", st.reasoner_values.to_json()},
                      {"observer_values", st.observer_values.to_json()}};
  j["reasoner_ref"] = st.reasoner_ref.empty() ? nlohmann::json(nullptr) : to_checkpoint(st.reasoner_ref.policy());
  j["observer_ref"] = st.observer_ref.empty() ? nlohmann::json(nullptr) : to_checkpoint(st.observer_ref.policy());
  write_file_atomic(run_files::state(dir, st.epoch), j.dump() + "\n");
}

inline TrainState load_train_state(const std::filesystem::path& dir, int epoch) {
  TrainState st;
  st.epoch = epoch;
  st.reasoner = load_checkpoint(run_files::reasoner(dir, epoch));
  st.observer = load_checkpoint(run_files::observer(dir, epoch));
  const auto path = run_files::state(dir, epoch);
  if (std::filesystem::exists(path)) {
    const auto j = nlohmann::json::parse(read_file(path));
    st.reasoner_values = ValueTable::from_json(j.at("reasoner_values"));
    st.observer_values = ValueTable::from_json(j.at("observer_values"));
    if (!j.at("reasoner_ref").is_null()) st.reasoner_ref = snapshot(from_checkpoint(j["reasoner_ref"]));
    if (!j.at("observer_ref").is_null()) st.observer_ref = snapshot(from_checkpoint(j["observer_ref"]));
  }
  return st;
}

/// Highest epoch whose state file exists, or nullopt.
inline std::optional<int> last_complete_epoch(const std::filesystem::path& dir) {
  std::optional<int> best;
  if (!std::filesystem::exists(dir)) return best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto f = e.path().filename().string();
    if (f.rfind("state_epoch", 0) != 0 || e.path().extension() != ".json") continue;
    const auto num = f.substr(11, f.size() - 11 - 5);
    if (num.empty() || !std::all_of(num.begin(), num.end(), ::isdigit)) continue;
    const int n = std::stoi(num);
    if (std::filesystem::exists(run_files::reasoner(dir, n)) && std::filesystem::exists(run_files::observer(dir, n)))
      best = std::max(best.value_or(-1), n);
  }
  return best;
}

inline std::vector<EpochMetrics> read_metrics(const std::filesystem::path& dir) {
  std::vector<EpochMetrics> out;
  std::ifstream in(run_files::metrics(dir));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  return out;
}

/// Rewrites metrics.jsonl to the given rows.
inline void write_metrics(const std::filesystem::path& dir, const std::vector<EpochMetrics>& rows) {
  std::string s;
  for (const auto& m : rows) s += to_json(m).dump() + "\n";
  write_file_atomic(run_files::metrics(dir), s);
}

}  // namespace immo
