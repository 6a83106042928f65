// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "immo/training.hpp"
#include "immo/remote.hpp"
#include "immo/ceiling.hpp"
#include "immo/eval.hpp"

using namespace immo;

TEST(Smoke, OracleEpisode) {
  Rng rng(1);
  Scene s = generate_scene(rng);
  Problem p = generate_problem(s, rng);
  OracleObserver obs;
  OracleReasoner rea;
  EpisodeConfig cfg;
  auto t = run_episode(rea, obs, p, s, cfg);
  EXPECT_EQ(t.reward.r, 1);
}
