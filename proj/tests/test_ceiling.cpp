// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <tuple>

#include "immo/ceiling.hpp"
#include "immo/eval.hpp"

using namespace immo;

namespace {

using GroupKey = std::tuple<int, int, int, int, int>;

GroupKey key_of(const SceneProblem& sp) {
  const auto c = *parse_caption(caption(sp.scene));
  return {static_cast<int>(sp.problem.template_id), static_cast<int>(sp.problem.slot), c.num_objects,
          static_cast<int>(c.shape), static_cast<int>(c.color)};
}

/// Best caption-conditioned guess, by counting.
double best_guess_accuracy(const std::vector<SceneProblem>& problems) {
  std::map<GroupKey, std::map<TokenId, int>> counts;
  for (const auto& sp : problems) ++counts[key_of(sp)][sp.problem.ground_truth];
  int hit = 0;
  for (const auto& [k, m] : counts) {
    int best = 0;
    for (const auto& [t, c] : m) best = std::max(best, c);
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(problems.size());
}

/// Best guess per template that ignores the caption too.
double best_constant_guess(const std::vector<SceneProblem>& problems) {
  std::map<int, std::map<TokenId, int>> counts;
  for (const auto& sp : problems) ++counts[static_cast<int>(sp.problem.template_id)][sp.problem.ground_truth];
  int hit = 0;
  for (const auto& [k, m] : counts) {
    int best = 0;
    for (const auto& [t, c] : m) best = std::max(best, c);
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(problems.size());
}

/// One query, then the best guess given its (noisy) answer: enumerated
/// directly over problems instead of through the group profiles.
double one_query_ceiling(const std::vector<SceneProblem>& problems, double epsilon) {
  std::map<GroupKey, std::vector<const SceneProblem*>> groups;
  for (const auto& sp : problems) groups[key_of(sp)].push_back(&sp);
  double total = 0.0;
  for (const auto& [k, members] : groups) {
    double best_q = 0.0;
    for (int id = 0; id < kNumQueries; ++id) {
      const auto q = QueryAction::from_id(id);
      double value = 0.0;
      for (TokenId a = 0; a < kNumTokens; ++a) {
        std::map<TokenId, double> mass;
        for (const auto* sp : members)
          mass[sp->problem.ground_truth] += channel_probability(a, oracle_answer(sp->scene, q), q, epsilon);
        double best = 0.0;
        for (const auto& [t, m] : mass) best = std::max(best, m);
        value += best;
      }
      best_q = std::max(best_q, value);
    }
    total += best_q;
  }
  return total / static_cast<double>(problems.size());
}

const std::vector<SceneProblem>& sample_problems() {
  static const auto p = heldout_problems(3000, 17);
  return p;
}

}  // namespace

TEST(Ceiling, NoiselessTwoTurnsIsPerfect) {
  EXPECT_NEAR(brute_force_ceiling(population_groups(), 2, 0.0).ceiling, 1.0, 1e-12);
  EXPECT_NEAR(brute_force_ceiling(sample_problems(), 2, 0.0).ceiling, 1.0, 1e-12);
}

TEST(Ceiling, NoiselessOneTurnSolvesOneHopTemplates) {
  // Over the full distribution; a finite sample can be separated by one query.
  const auto r = brute_force_ceiling(population_groups(), 1, 0.0);
  for (auto t : {TemplateId::ColorOf, TemplateId::SizeOf, TemplateId::CountOf})
    EXPECT_NEAR(r.per_template[static_cast<std::size_t>(t)], 1.0, 1e-12) << name(t);
  EXPECT_LT(r.per_template[static_cast<std::size_t>(TemplateId::ColorLeftOf)], 1.0);
  EXPECT_LT(r.per_template[static_cast<std::size_t>(TemplateId::SizeLeftOf)], 1.0);
}

TEST(Ceiling, ZeroTurnsIsBestCaptionGuess) {
  for (double eps : {0.0, 0.3, 1.0})
    EXPECT_NEAR(brute_force_ceiling(sample_problems(), 0, eps).ceiling, best_guess_accuracy(sample_problems()), 1e-12);
}

TEST(Ceiling, OneTurnMatchesDirectEnumeration) {
  for (double eps : {0.0, 0.3, 0.7})
    EXPECT_NEAR(brute_force_ceiling(sample_problems(), 1, eps).ceiling, one_query_ceiling(sample_problems(), eps), 1e-9)
        << eps;
}

TEST(Ceiling, FullNoiseIsNoWorseThanConstantGuess) {
  const double constant = best_constant_guess(sample_problems());
  for (int t : {0, 1, 2}) EXPECT_GE(brute_force_ceiling(sample_problems(), t, 1.0).ceiling, constant - 1e-12) << t;
}

TEST(Ceiling, NonDecreasingInTurns) {
  for (double eps : {0.0, 0.3}) {
    double prev = 0.0;
    for (int t : {0, 1, 2}) {
      const double c = brute_force_ceiling(sample_problems(), t, eps).ceiling;
      EXPECT_GE(c, prev - 1e-12);
      prev = c;
    }
  }
}

TEST(Ceiling, FrozenAcceptanceReference) {
  const auto r = brute_force_ceiling(population_groups(), 2, 0.3);
  EXPECT_NEAR(r.ceiling, 0.848674, 5e-7);
  EXPECT_LE(r.evaluations, kCeilingEvaluationCap);
  double w = 0.0;
  for (double x : r.template_weight) w += x;
  EXPECT_NEAR(w, 1.0, 1e-12);
}

TEST(Ceiling, EvaluationCapIsEnforced) {
  EXPECT_THROW(brute_force_ceiling(population_groups(), 3, 0.3), CeilingTooLarge);
  EXPECT_THROW(brute_force_ceiling(sample_problems(), 2, 1.5), InvalidArgument);
  EXPECT_THROW(brute_force_ceiling(std::vector<SceneProblem>{}, 2, 0.3), EmptyDataset);
}

TEST(Ceiling, PopulationWeightsMatchSampling) {
  // Template shares of the exact distribution agree with a large sample.
  const auto exact = brute_force_ceiling(population_groups(), 0, 0.0);
  const auto& sample = sample_problems();
  std::array<double, kNumTemplates> freq{};
  for (const auto& sp : sample) freq[static_cast<std::size_t>(sp.problem.template_id)] += 1.0 / sample.size();
  for (std::size_t t = 0; t < kNumTemplates; ++t) EXPECT_NEAR(freq[t], exact.template_weight[t], 0.03) << t;
}
