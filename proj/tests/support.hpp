// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "immo/agents.hpp"
#include "immo/bandit.hpp"
#include "immo/policy.hpp"
#include "immo/protocol.hpp"
#include "immo/rng.hpp"
#include "immo/sceneworld.hpp"

namespace immo::oracle {

// ---------------------------------------------------------------------------
// Finite differences

/// Central-difference gradient of log pi(action | state) over every parameter
/// the state touches, laid out like PolicyGradient::dense.
inline std::vector<double> fd_grad_log_prob(SoftmaxPolicy policy, const PolicyState& state, int action,
                                            const ActionMask& mask = {}, double h = 1e-5) {
  auto lp = [&](const SoftmaxPolicy& p) { return log_prob(p, state, action, mask); };
  std::vector<double> g;
  if (policy.parameterization() == Parameterization::Tabular) {
    auto& row = policy.table_row(state.key);
    g.resize(row.size());
    for (std::size_t a = 0; a < row.size(); ++a) {
      const double w = row[a];
      row[a] = w + h;
      const double up = lp(policy);
      row[a] = w - h;
      const double down = lp(policy);
      row[a] = w;
      g[a] = (up - down) / (2.0 * h);
    }
    return g;
  }
  const int dim = policy.feature_dim();
  g.assign(static_cast<std::size_t>(policy.num_actions() * dim), 0.0);
  for (int a = 0; a < policy.num_actions(); ++a)
    for (const auto& [i, v] : state.features.entries) {
      (void)v;
      double& w = policy.weight(a, i);
      const double w0 = w;
      w = w0 + h;
      const double up = lp(policy);
      w = w0 - h;
      const double down = lp(policy);
      w = w0;
      g[static_cast<std::size_t>(a * dim + i)] = (up - down) / (2.0 * h);
    }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

struct GradientCase {
  SoftmaxPolicy policy;
  PolicyState state;
  int action = 0;
};

/// Random policy, state and action. Logits are kept within a few units so
/// the central difference is well conditioned.
inline GradientCase random_gradient_case(Parameterization kind, Rng& rng) {
  const int k = 2 + static_cast<int>(rng.below(5));
  ActionSpace space;
  for (int a = 0; a < k; ++a) space.surfaces.push_back("a" + std::to_string(a));
  if (kind == Parameterization::Tabular) {
    auto p = SoftmaxPolicy::tabular(space);
    const auto state = PolicyState::from_key("s" + std::to_string(rng.below(1000)));
    for (auto& w : p.table_row(state.key)) w = 4.0 * rng.uniform() - 2.0;
    return {std::move(p), state, static_cast<int>(rng.below(static_cast<std::uint64_t>(k)))};
  }
  const int dim = 3 + static_cast<int>(rng.below(6));
  auto p = SoftmaxPolicy::linear(space, dim);
  for (int a = 0; a < k; ++a)
    for (int i = 0; i < dim; ++i) p.weight(a, i) = 2.0 * rng.uniform() - 1.0;
  SparseVector x{dim, {}};
  for (int i = 0; i < dim; ++i)
    if (rng.uniform() < 0.7) x.add(i, 2.0 * rng.uniform() - 1.0);
  if (x.entries.empty()) x.add(0, 1.0);
  return {std::move(p), PolicyState::from_features(x), static_cast<int>(rng.below(static_cast<std::uint64_t>(k)))};
}

// ---------------------------------------------------------------------------
// Protocol invariants

struct ProtocolViolations {
  int length = 0;         // len(IM_i) != 1 + 2i
  int prefix = 0;         // IM_i not a prefix-extension of IM_{i-1}
  int observer_view = 0;  // observer saw something other than (scene, Q_i)
  int reasoner_view = 0;  // reasoner missed P or a prior utterance
  int step_counts = 0;    // steps per role != t + 1
  int total() const { return length + prefix + observer_view + reasoner_view + step_counts; }
};

/// Runs one spied episode and counts every invariant breach.
inline void check_protocol_episode(ReasonerAgent& reasoner, ObserverAgent& observer, const Scene& scene,
                                   const Problem& problem, const EpisodeConfig& cfg, ProtocolViolations& v) {
  SpyObserver so(observer);
  SpyReasoner sr(reasoner);
  const auto t = run_episode(sr, so, problem, scene, cfg);
  const int turns = cfg.max_turns;
  if (t.im.size() != static_cast<std::size_t>(1 + 2 * turns)) ++v.length;
  if (t.steps_of(Role::Reasoner) != turns + 1 || t.steps_of(Role::Observer) != turns + 1) ++v.step_counts;

  // Observer: one caption call, then exactly Q_i at call i.
  if (so.calls.size() != static_cast<std::size_t>(turns + 1) || so.calls.front().query.has_value()) {
    ++v.observer_view;
  } else {
    for (int i = 1; i <= turns; ++i) {
      const auto& c = so.calls[static_cast<std::size_t>(i)];
      if (c.scene_id != scene.id || !c.query || !(*c.query == t.im.entries()[static_cast<std::size_t>(2 * i - 1)]))
        ++v.observer_view;
    }
  }

  // Reasoner: call i sees P and IM_{i-1}; each IM_i extends IM_{i-1}.
  if (sr.calls.size() != static_cast<std::size_t>(turns + 1)) {
    ++v.reasoner_view;
    return;
  }
  for (int i = 0; i <= turns; ++i) {
    const auto& c = sr.calls[static_cast<std::size_t>(i)];
    const bool final = i == turns;
    if (!(c.problem == problem) || c.final != final || c.im.size() != static_cast<std::size_t>(1 + 2 * i)) {
      ++v.reasoner_view;
      continue;
    }
    for (std::size_t e = 0; e < c.im.size(); ++e)
      if (!(c.im.entries()[e] == t.im.entries()[e])) {
        ++v.reasoner_view;
        break;
      }
    if (i > 0) {
      const auto& prev = sr.calls[static_cast<std::size_t>(i - 1)].im;
      for (std::size_t e = 0; e < prev.size(); ++e)
        if (!(prev.entries()[e] == c.im.entries()[e])) {
          ++v.prefix;
          break;
        }
    }
  }
}

// ---------------------------------------------------------------------------
// Bandits

/// Two arms with deterministic rewards (1, 0) and no KL penalty.
inline BanditConfig convergence_bandit() {
  BanditConfig c;
  c.reward_means = {1.0, 0.0};
  return c;
}

/// Bernoulli arms (0.25, 0.75) from a uniform M_0, so reward pulls the
/// policy away from the reference.
inline BanditConfig deviation_bandit(double beta) {
  BanditConfig c;
  c.reward_means = {0.25, 0.75};
  c.rl.beta = beta;
  return c;
}

/// KL optimum of E[r] - beta KL(p || p0): p proportional to p0 exp(r / beta).
inline std::vector<double> kl_regularized_optimum(const std::vector<double>& p0, const std::vector<double>& r,
                                                  double beta) {
  std::vector<double> p(p0.size());
  const double rmax = *std::max_element(r.begin(), r.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = p0[i] * std::exp((r[i] - rmax) / beta);
  for (double& x : p) x /= z;
  return p;
}

}  // namespace immo::oracle
