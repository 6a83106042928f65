// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--known-failures 3,...] [--seeds N]
//
// Exit status is 0 when the failing set equals the declared known failures.
// A known failure that starts passing is reported and also exits non-zero,
// so the declaration cannot go stale.

#include <time.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "immo/ceiling.hpp"
#include "immo/eval.hpp"
#include "immo/training.hpp"
#include "support.hpp"

using namespace immo;

namespace {

// Pinned tolerances and sizes.
constexpr double kRlGainMin = 0.05;            // criterion 1
constexpr double kRunCpuBudgetSec = 600.0;     // criterion 1, per run
constexpr double kNoiselessSlack = 0.05;       // criterion 2
constexpr double kNoisySlack = 0.10;           // criterion 2
constexpr double kFrozenCeiling = 0.848674;    // criterion 2 reference
constexpr double kFrozenCeilingTol = 5e-7;
constexpr double kAblationRiseMin = 0.10;      // criterion 3
constexpr double kAblationPlateauMax = 0.03;   // criterion 3
constexpr double kAblationEpsilon = 0.0;       // criterion 3
constexpr double kBanditThreshold = 0.99;      // criterion 4
constexpr int kBanditMaxUpdates = 2000;
constexpr double kClipTol = 1e-12;
constexpr double kKlMaxAtBetaOne = 0.05;       // criterion 5
constexpr double kGradRelTol = 1e-5;           // criterion 6
constexpr int kGradTrials = 100;
constexpr int kProtocolEpisodes = 1000;        // criterion 7
constexpr int kNoiseCalls = 10000;             // criterion 9
constexpr double kNoiseTol = 0.015;

constexpr double kEpsilon = 0.3;
constexpr int kTurns = 2;
constexpr std::size_t kTrainRecords = 5000;
constexpr std::size_t kHeldout = 4000;
constexpr int kMaxAblationTurns = 5;

using Curve = std::array<double, kMaxAblationTurns + 1>;

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << std::fixed << x;
  return o.str();
}

struct SeedRun {
  std::uint64_t seed = 0;
  double cpu_seconds = 0.0;
  double wall_seconds = 0.0;
  Curve sl_clean{}, rl_clean{}, sl_noisy{}, rl_noisy{};  // greedy accuracy by turn budget
  int epochs = 0;
  int parity_violations = 0;
  int frozen_violations = 0;
  std::size_t converted = 0, consistent = 0, solvable = 0, problems = 0;
};

Curve curve(const SoftmaxPolicy& r, const SoftmaxPolicy& o, const std::vector<SceneProblem>& held, double eps,
            std::uint64_t seed) {
  Curve c{};
  for (int t = 0; t <= kMaxAblationTurns; ++t)
    c[static_cast<std::size_t>(t)] = evaluate_policies(r, o, held, t, eps, seed, {}, DecodeMode::Greedy).accuracy;
  return c;
}

/// Generate, convert, clone, then alternate PPO; evaluate both systems on the
/// same held-out problems.
SeedRun run_seed(std::uint64_t seed) {
  SeedRun out;
  out.seed = seed;
  const auto wall0 = std::chrono::steady_clock::now();
  const double cpu0 = thread_cpu_seconds();

  auto records = generate_records(kTrainRecords, seed, "train");
  for (auto& r : records) {
    r = convert_rationale(r);
    ++out.converted;
    out.consistent += r.gold_dialogue && oracle_consistent(r.scene, *r.gold_dialogue) &&
                      r.gold_dialogue->final_answer == r.problem.ground_truth;
  }

  SLConfig sl;
  sl.seed = seed;
  auto reasoner = make_reasoner_policy();
  auto observer = make_observer_policy();
  behavior_clone(reasoner, reasoner_sl_dataset(records, reasoner), sl);
  behavior_clone(observer, observer_sl_dataset(records, observer), sl);
  const auto sl_reasoner = reasoner;
  const auto sl_observer = observer;

  TrainState st;
  st.reasoner = reasoner;
  st.observer = observer;
  RLConfig rl;
  rl.seed = seed;
  rl.max_turns = kTurns;
  TrainEnv env;
  env.epsilon = kEpsilon;
  std::string r_prev = digest(st.reasoner), o_prev = digest(st.observer);
  env.on_epoch_end = [&](const TrainState& s, const EpochMetrics& m) {
    ++out.epochs;
    const Role expected = m.epoch % 2 == 1 ? Role::Reasoner : Role::Observer;
    out.parity_violations += m.active_role != expected;
    if (m.active_role == Role::Reasoner) out.frozen_violations += digest(s.observer) != o_prev;
    else out.frozen_violations += digest(s.reasoner) != r_prev;
    r_prev = digest(s.reasoner);
    o_prev = digest(s.observer);
  };
  train_alternating(st, to_problems(records), rl, env);

  out.cpu_seconds = thread_cpu_seconds() - cpu0;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

  const auto held = heldout_problems(kHeldout, seed);
  for (const auto* set : {&records}) {
    for (const auto& r : *set) out.solvable += solvable_within(r.scene, r.problem, 2);
    out.problems += set->size();
  }
  for (const auto& sp : held) out.solvable += solvable_within(sp.scene, sp.problem, 2);
  out.problems += held.size();

  out.sl_noisy = curve(sl_reasoner, sl_observer, held, kEpsilon, seed);
  out.rl_noisy = curve(st.reasoner, st.observer, held, kEpsilon, seed);
  out.sl_clean = curve(sl_reasoner, sl_observer, held, 0.0, seed);
  out.rl_clean = curve(st.reasoner, st.observer, held, 0.0, seed);
  return out;
}

Curve mean_curve(const std::vector<SeedRun>& runs, Curve SeedRun::*field) {
  Curve m{};
  for (const auto& r : runs)
    for (std::size_t t = 0; t < m.size(); ++t) m[t] += (r.*field)[t] / static_cast<double>(runs.size());
  return m;
}

std::string curve_str(const Curve& c) {
  std::string s;
  for (std::size_t t = 0; t < c.size(); ++t) s += (t ? " " : "") + fmt(c[t]);
  return s;
}

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-9"};
  std::vector<int> known;
  int seeds = 3;
  app.add_option("--known-failures", known, "criteria expected to fail")->delimiter(',');
  app.add_option("--seeds", seeds, "seeds for criteria 1-3")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::vector<Verdict> verdicts;

  // Reference ceiling, computed before any training.
  const auto ceiling = brute_force_ceiling(population_groups(), kTurns, kEpsilon);
  std::cout << "# ceiling(eps=" << kEpsilon << ", t=" << kTurns << ") = " << fmt(ceiling.ceiling, 6)
            << " (frozen " << fmt(kFrozenCeiling, 6) << ")\n"
            << std::flush;

  // Long runs in the background while the quick criteria execute.
  std::vector<std::future<SeedRun>> futures;
  for (int s = 1; s <= seeds; ++s)
    futures.push_back(std::async(std::launch::async, run_seed, static_cast<std::uint64_t>(s)));

  // 4. PPO correctness.
  {
    int converged = 0;
    std::string firsts;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto run = run_bandit(oracle::convergence_bandit(), s, kBanditThreshold);
      converged += run.first_update_above > 0 && run.first_update_above <= kBanditMaxUpdates;
      firsts += (s > 1 ? "," : "") + std::to_string(run.first_update_above);
    }
    const double c1 = clipped_objective(1.5, 1.0, 0.2), c2 = clipped_objective(0.5, -1.0, 0.2);
    const bool clip_ok = std::abs(c1 - 1.2) <= kClipTol && std::abs(c2 + 0.8) <= kClipTol;
    verdicts.push_back({4, converged == 5 && clip_ok,
                        "bandit converged " + std::to_string(converged) + "/5 (updates " + firsts +
                            "); clip cases " + fmt(c1, 12) + ", " + fmt(c2, 12)});
  }

  // 5. KL anchoring.
  {
    std::vector<double> kls;
    for (double beta : {0.0, 0.1, 1.0}) {
      double k = 0.0;
      for (std::uint64_t s = 1; s <= 5; ++s) k += run_bandit(oracle::deviation_bandit(beta), s).final_kl / 5.0;
      kls.push_back(k);
    }
    const bool ok = kls[0] >= kls[1] && kls[1] >= kls[2] && kls[2] < kKlMaxAtBetaOne;
    verdicts.push_back({5, ok, "mean final KL beta=0 " + fmt(kls[0]) + ", 0.1 " + fmt(kls[1]) + ", 1.0 " + fmt(kls[2]) +
                                   " (< " + fmt(kKlMaxAtBetaOne, 2) + ")"});
  }

  // 6. Gradient fidelity.
  {
    double worst[2] = {0.0, 0.0};
    int bad = 0;
    for (int k = 0; k < 2; ++k) {
      const auto kind = k == 0 ? Parameterization::Tabular : Parameterization::Linear;
      Rng rng(derive_seed(6, "acceptance-grad", static_cast<std::uint64_t>(k)));
      for (int i = 0; i < kGradTrials; ++i) {
        auto c = oracle::random_gradient_case(kind, rng);
        const double e = oracle::relative_error(grad_log_prob(c.policy, c.state, c.action).dense(c.policy),
                                                oracle::fd_grad_log_prob(c.policy, c.state, c.action));
        worst[k] = std::max(worst[k], e);
        bad += !(e < kGradRelTol);
      }
    }
    std::ostringstream d;
    d.precision(2);
    d << std::scientific << "max relative error tabular " << worst[0] << ", linear " << worst[1] << " over "
      << kGradTrials << " triples each";
    verdicts.push_back({6, bad == 0, d.str()});
  }

  // 7. Protocol invariants.
  {
    const auto rp = make_reasoner_policy();
    const auto op = make_observer_policy();
    const auto records = generate_records(kProtocolEpisodes, 7, "protocol");
    Rng rng(derive_seed(7, "acceptance-protocol", 0));
    oracle::ProtocolViolations v;
    for (std::size_t i = 0; i < records.size(); ++i) {
      EpisodeConfig cfg;
      cfg.max_turns = static_cast<int>(rng.below(kMaxAblationTurns + 1));
      cfg.seed = rng.next_u64();
      PolicyReasoner reasoner(rp);
      PolicyObserver policy_observer(op);
      OracleObserver oracle_observer;
      NoisyObserver noisy(oracle_observer, kEpsilon);
      ObserverAgent& obs = i % 2 ? static_cast<ObserverAgent&>(noisy) : static_cast<ObserverAgent&>(policy_observer);
      oracle::check_protocol_episode(reasoner, obs, records[i].scene, records[i].problem, cfg, v);
    }
    verdicts.push_back({7, v.total() == 0,
                        std::to_string(records.size()) + " episodes; violations length " + std::to_string(v.length) +
                            ", prefix " + std::to_string(v.prefix) + ", observer " + std::to_string(v.observer_view) +
                            ", reasoner " + std::to_string(v.reasoner_view) + ", steps " +
                            std::to_string(v.step_counts)});
  }

  // 8a. Byte-identical datasets, transcripts and checkpoints from fixed seeds.
  bool bytes_ok = true;
  {
    auto dump = [](const std::vector<RationaleRecord>& rs) {
      std::string s;
      for (const auto& r : rs) s += to_json(convert_rationale(r)).dump() + "\n";
      return s;
    };
    bytes_ok &= dump(generate_records(500, 8, "train")) == dump(generate_records(500, 8, "train"));

    auto small_run = [] {
      auto recs = generate_records(300, 8, "train");
      for (auto& r : recs) r = convert_rationale(r);
      TrainState st;
      SLConfig sl;
      sl.seed = 8;
      behavior_clone(st.reasoner, reasoner_sl_dataset(recs, st.reasoner), sl);
      behavior_clone(st.observer, observer_sl_dataset(recs, st.observer), sl);
      RLConfig rl;
      rl.seed = 8;
      rl.num_epochs = 4;
      rl.episodes_per_epoch = 128;
      TrainEnv env;
      env.epsilon = kEpsilon;
      train_alternating(st, to_problems(recs), rl, env);
      PolicyReasoner pr(st.reasoner, {}, DecodeMode::Sample);
      PolicyObserver po(st.observer, DecodeMode::Sample);
      std::vector<EpisodeTranscript> ts;
      evaluate(pr, po, heldout_problems(100, 8), kTurns, kEpsilon, 8, &ts);
      std::string t;
      for (const auto& x : ts) t += to_json(x).dump() + "\n";
      return std::pair{to_checkpoint(st.reasoner).dump() + to_checkpoint(st.observer).dump(), t};
    };
    const auto a = small_run(), b = small_run();
    bytes_ok &= a.first == b.first && a.second == b.second;
  }

  // 9b. Noise rate.
  double noise_rate = 0.0;
  {
    Rng rng(derive_seed(9, "acceptance-noise", 0));
    const auto recs = generate_records(200, 9, "noise");
    int wrong = 0;
    for (int i = 0; i < kNoiseCalls; ++i) {
      const auto& r = recs[static_cast<std::size_t>(i) % recs.size()];
      const auto q = QueryAction::from_id(static_cast<int>(rng.below(kNumQueries)));
      wrong += noisy_answer(r.scene, q, kEpsilon, rng) != oracle_answer(r.scene, q);
    }
    noise_rate = static_cast<double>(wrong) / kNoiseCalls;
  }

  std::vector<SeedRun> runs;
  for (auto& f : futures) runs.push_back(f.get());
  for (const auto& r : runs)
    std::cout << "# seed " << r.seed << ": cpu " << fmt(r.cpu_seconds, 1) << "s wall " << fmt(r.wall_seconds, 1)
              << "s epochs " << r.epochs << "\n";

  const Curve sl_noisy = mean_curve(runs, &SeedRun::sl_noisy), rl_noisy = mean_curve(runs, &SeedRun::rl_noisy);
  const Curve sl_clean = mean_curve(runs, &SeedRun::sl_clean), rl_clean = mean_curve(runs, &SeedRun::rl_clean);
  std::cout << "# eps=0.3 SL  t0..5: " << curve_str(sl_noisy) << "\n"
            << "# eps=0.3 RL  t0..5: " << curve_str(rl_noisy) << "\n"
            << "# eps=0   SL  t0..5: " << curve_str(sl_clean) << "\n"
            << "# eps=0   RL  t0..5: " << curve_str(rl_clean) << "\n";

  // 1. RL over SL.
  {
    double max_cpu = 0.0;
    for (const auto& r : runs) max_cpu = std::max(max_cpu, r.cpu_seconds);
    const double gain = rl_noisy[kTurns] - sl_noisy[kTurns];
    verdicts.push_back({1, gain >= kRlGainMin && max_cpu <= kRunCpuBudgetSec,
                        "eps=0.3 t=2 over " + std::to_string(runs.size()) + " seeds: SL " + fmt(sl_noisy[kTurns]) +
                            ", SL+RL " + fmt(rl_noisy[kTurns]) + ", gain " + fmt(100 * gain, 2) + " pts (>= " +
                            fmt(100 * kRlGainMin, 0) + "); slowest run " + fmt(max_cpu, 0) + "s cpu (<= " +
                            fmt(kRunCpuBudgetSec, 0) + ")"});
  }

  // 2. Ceiling proximity.
  {
    const double clean = rl_clean[kTurns], noisy = rl_noisy[kTurns];
    const bool ref_ok = std::abs(ceiling.ceiling - kFrozenCeiling) <= kFrozenCeilingTol;
    const bool ok = ref_ok && clean >= 1.0 - kNoiselessSlack && noisy >= ceiling.ceiling - kNoisySlack;
    verdicts.push_back({2, ok, "SL+RL t=2: eps=0 " + fmt(clean) + " (>= " + fmt(1.0 - kNoiselessSlack) + "), eps=0.3 " +
                                   fmt(noisy) + " (>= " + fmt(ceiling.ceiling - kNoisySlack) + ")"});
  }

  // 3. Turn ablation shape at the noiseless observer.
  {
    const Curve& rl = kAblationEpsilon == 0.0 ? rl_clean : rl_noisy;
    const Curve& sl = kAblationEpsilon == 0.0 ? sl_clean : sl_noisy;
    const double rise = rl[2] - rl[0];
    const double plateau = std::abs(rl[5] - rl[2]);
    const double sl_drop = sl[2] - sl[5], rl_drop = rl[2] - rl[5];
    const bool a = rise >= kAblationRiseMin, b = plateau <= kAblationPlateauMax, c = sl_drop > rl_drop;
    verdicts.push_back({3, a && b && c,
                        "eps=" + fmt(kAblationEpsilon, 1) + ": rise t0->t2 " + fmt(100 * rise, 2) + " pts [" +
                            (a ? "ok" : "no") + "], |t5-t2| " + fmt(100 * plateau, 2) + " pts [" + (b ? "ok" : "no") +
                            "], drop beyond t2 SL " + fmt(100 * sl_drop, 2) + " vs SL+RL " + fmt(100 * rl_drop, 2) +
                            " pts [" + (c ? "ok" : "no") + "]"});
  }

  // 8. Determinism and alternation.
  {
    int parity = 0, frozen = 0, epochs = 0;
    for (const auto& r : runs) {
      parity += r.parity_violations;
      frozen += r.frozen_violations;
      epochs += r.epochs;
    }
    verdicts.push_back({8, bytes_ok && parity == 0 && frozen == 0,
                        std::string{"byte-identical reruns "} + (bytes_ok ? "yes" : "no") + "; " +
                            std::to_string(epochs) + " epochs, parity violations " + std::to_string(parity) +
                            ", frozen digest changes " + std::to_string(frozen)});
  }

  // 9. Data pipeline.
  {
    std::size_t converted = 0, consistent = 0, solvable = 0, problems = 0;
    for (const auto& r : runs) {
      converted += r.converted;
      consistent += r.consistent;
      solvable += r.solvable;
      problems += r.problems;
    }
    const bool ok = consistent == converted && solvable == problems && std::abs(noise_rate - kEpsilon) <= kNoiseTol;
    verdicts.push_back({9, ok, "oracle-consistent " + std::to_string(consistent) + "/" + std::to_string(converted) +
                                   ", solvable " + std::to_string(solvable) + "/" + std::to_string(problems) +
                                   ", noise rate " + fmt(noise_rate) + " at n=" + std::to_string(kNoiseCalls)});
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  const std::set<int> expected(known.begin(), known.end());
  std::set<int> failed;
  for (const auto& v : verdicts) {
    std::cout << "CRITERION " << v.id << " " << (v.pass ? "PASS" : "FAIL") << ": " << v.detail
              << (!v.pass && expected.count(v.id) ? " [known failure]" : "") << "\n";
    if (!v.pass) failed.insert(v.id);
  }
  const auto passed = verdicts.size() - failed.size();
  std::cout << "# " << passed << "/" << verdicts.size() << " criteria pass\n";
  if (failed != expected) {
    for (int id : expected)
      if (!failed.count(id)) std::cout << "# criterion " << id << " was declared a known failure but passed\n";
    return 1;
  }
  return 0;
}
