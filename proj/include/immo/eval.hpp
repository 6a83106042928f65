// SPDX-License-Identifier: Apache-2.0
#pragma once

// Held-out evaluation and the turn-count ablation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/agents.hpp"
#include "immo/protocol.hpp"
#include "immo/rng.hpp"
#include "immo/sceneworld.hpp"
#include "immo/training.hpp"

namespace immo {

/// Fresh records from a seed stream disjoint from the training stream.
inline std::vector<RationaleRecord> generate_records(std::size_t n, std::uint64_t seed, std::string_view stream) {
  std::vector<RationaleRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, stream, i));
    out.push_back(generate_record(rng));
  }
  return out;
}

inline std::vector<SceneProblem> to_problems(const std::vector<RationaleRecord>& records) {
  std::vector<SceneProblem> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.scene, r.problem});
  return out;
}

inline std::vector<SceneProblem> heldout_problems(std::size_t n, std::uint64_t seed) {
  return to_problems(generate_records(n, seed, "heldout"));
}

struct EvalReport {
  double accuracy = 0.0;
  int n = 0;
  int correct = 0;
  std::map<std::string, double> per_template;
  std::map<std::string, int> per_template_n;
  int turns = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"n", r.n},     {"correct", r.correct}, {"per_template", r.per_template},
          {"per_template_n", r.per_template_n},     {"turns", r.turns},     {"epsilon", r.epsilon},
          {"seed", r.seed}};
}

/// One episode per problem; episode i uses seed derive_seed(seed, "episode", i)
/// so that paired runs see the same noise stream per problem.
inline EvalReport evaluate(ReasonerAgent& reasoner, ObserverAgent& observer, const std::vector<SceneProblem>& problems,
                           int turns, double epsilon, std::uint64_t seed,
                           std::vector<EpisodeTranscript>* transcripts = nullptr) {
  if (problems.empty()) throw EmptyDataset("evaluation needs at least one problem");
  NoisyObserver noisy(observer, epsilon);
  EvalReport r;
  r.turns = turns;
  r.epsilon = epsilon;
  r.seed = seed;
  std::map<std::string, int> correct;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    EpisodeConfig cfg;
    cfg.max_turns = turns;
    cfg.seed = derive_seed(seed, "episode", i);
    auto t = run_episode(reasoner, noisy, problems[i].problem, problems[i].scene, cfg);
    const std::string tn{name(problems[i].problem.template_id)};
    ++r.n;
    ++r.per_template_n[tn];
    r.correct += t.reward.r;
    correct[tn] += t.reward.r;
    if (transcripts) transcripts->push_back(std::move(t));
  }
  r.accuracy = static_cast<double>(r.correct) / r.n;
  for (const auto& [k, n] : r.per_template_n) r.per_template[k] = static_cast<double>(correct[k]) / n;
  return r;
}

/// Evaluates a pair of policies (sampling decode by default).
inline EvalReport evaluate_policies(const SoftmaxPolicy& reasoner, const SoftmaxPolicy& observer,
                                    const std::vector<SceneProblem>& problems, int turns, double epsilon,
                                    std::uint64_t seed, const ReasonerEncoding& enc = {},
                                    DecodeMode mode = DecodeMode::Sample) {
  PolicyReasoner r(reasoner, enc, mode);
  PolicyObserver o(observer, mode);
  return evaluate(r, o, problems, turns, epsilon, seed);
}

struct AblationRow {
  int turns = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_seed;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  const AblationRow& at(int turns) const {
    for (const auto& r : rows)
      if (r.turns == turns) return r;
    throw InvalidArgument("no ablation row for t=" + std::to_string(turns));
  }
};

/// Agents for one ablation cell; called once per (turns, seed).
using AgentFactory = std::function<std::pair<std::unique_ptr<ReasonerAgent>, std::unique_ptr<ObserverAgent>>()>;

/// For each seed index k the problem set is heldout_problems(n, derive_seed(seed, "ablation", k)),
/// shared across every turn setting.
inline AblationTable ablate_turns(const AgentFactory& make_agents, const std::vector<int>& turns, int seeds,
                                  std::size_t n, double epsilon, std::uint64_t seed) {
  if (seeds <= 0 || n == 0) throw InvalidArgument("ablation needs positive seeds and n");
  std::vector<int> ts = turns;
  std::sort(ts.begin(), ts.end());
  if (std::adjacent_find(ts.begin(), ts.end()) != ts.end()) throw InvalidArgument("turn values must be distinct");
  AblationTable table;
  for (int t : ts) table.rows.push_back({t, 0.0, 0.0, {}});
  for (int k = 0; k < seeds; ++k) {
    const std::uint64_t s = derive_seed(seed, "ablation", static_cast<std::uint64_t>(k));
    const auto problems = heldout_problems(n, s);
    for (auto& row : table.rows) {
      auto [r, o] = make_agents();
      row.per_seed.push_back(evaluate(*r, *o, problems, row.turns, epsilon, s).accuracy);
    }
  }
  for (auto& row : table.rows) {
    const double m = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) / row.per_seed.size();
    double v = 0.0;
    for (double a : row.per_seed) v += (a - m) * (a - m);
    row.mean = m;
    row.stddev = row.per_seed.size() > 1 ? std::sqrt(v / static_cast<double>(row.per_seed.size() - 1)) : 0.0;
  }
  return table;
}

inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream out;
  out.precision(10);
  out << "turns,mean_accuracy,std_accuracy,seeds\n";
  for (const auto& r : t.rows) out << r.turns << "," << r.mean << "," << r.stddev << "," << r.per_seed.size() << "\n";
  return out.str();
}

}  // namespace immo
