// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-state multi-armed bandit driven through the same PPO update as the
// dialogue agents. Used to check convergence and KL anchoring in isolation.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "immo/policy.hpp"
#include "immo/rng.hpp"
#include "immo/training.hpp"

namespace immo {

struct BanditConfig {
  std::vector<double> reward_means;  // Bernoulli reward per arm
  std::vector<double> initial_logits;  // M_0; empty = uniform
  int updates = 2000;
  int pulls_per_update = 16;
  RLConfig rl{.num_epochs = 1, .episodes_per_epoch = 16, .max_turns = 0, .beta = 0.0, .clip_ratio = 0.2,
              .ppo_epochs_per_batch = 4, .learning_rate = 0.5, .baseline = Baseline::MeanReturn,
              .minibatch_size = 16, .optimizer = Optimizer::Sgd, .seed = 0};
};

struct BanditRun {
  std::vector<double> final_probs;
  double final_kl = 0.0;               // KL(M || M_0)
  int first_update_above = -1;         // first update after which p(best) > threshold; -1 if never
  std::vector<double> best_prob_curve; // p(best arm) after each update
};

inline ActionSpace bandit_action_space(std::size_t arms) {
  ActionSpace s;
  for (std::size_t a = 0; a < arms; ++a) s.surfaces.push_back("arm" + std::to_string(a));
  return s;
}

/// Each update pulls `pulls_per_update` arms from the current policy, scores
/// them with R = r - beta * KL(M || M_0), and runs one ppo_update.
inline BanditRun run_bandit(const BanditConfig& cfg, std::uint64_t seed, double threshold = 0.99) {
  const std::size_t k = cfg.reward_means.size();
  if (k < 2) throw InvalidArgument("bandit needs at least two arms");
  SoftmaxPolicy policy = SoftmaxPolicy::tabular(bandit_action_space(k));
  const PolicyState state = PolicyState::from_key("s");
  if (!cfg.initial_logits.empty()) {
    if (cfg.initial_logits.size() != k) throw DimensionMismatch("initial logits do not match the arms");
    policy.table_row(state.key) = cfg.initial_logits;
  }
  const PolicySnapshot ref = snapshot(policy);
  const auto ref_probs = action_distribution(ref.policy(), state);
  std::size_t best = 0;
  for (std::size_t a = 1; a < k; ++a)
    if (cfg.reward_means[a] > cfg.reward_means[best]) best = a;

  RLConfig rl = cfg.rl;
  rl.seed = seed;
  Rng rng(derive_seed(seed, "bandit", 0));
  AdamOptimizer adam;
  BanditRun run;
  for (int u = 0; u < cfg.updates; ++u) {
    const double state_kl = kl(action_distribution(policy, state), ref_probs);
    std::vector<PPOSample> samples;
    double mean_R = 0.0;
    for (int i = 0; i < cfg.pulls_per_update; ++i) {
      const auto s = sample_action(policy, state, rng);
      const int r = rng.uniform() < cfg.reward_means[static_cast<std::size_t>(s.action)] ? 1 : 0;
      const double R = final_reward(r, state_kl, rl.beta);
      samples.push_back({state, {}, s.action, s.log_prob, R});
      mean_R += R;
    }
    mean_R /= cfg.pulls_per_update;
    for (auto& s : samples) s.advantage -= mean_R;
    ppo_update(policy, samples, ref, rl, derive_seed(seed, "bandit-ppo", static_cast<std::uint64_t>(u)), &adam);
    const double pb = action_distribution(policy, state)[best];
    run.best_prob_curve.push_back(pb);
    if (run.first_update_above < 0 && pb > threshold) run.first_update_above = u + 1;
  }
  run.final_probs = action_distribution(policy, state);
  run.final_kl = kl(run.final_probs, ref_probs);
  return run;
}

}  // namespace immo
