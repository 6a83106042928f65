// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "immo/cli.hpp"

using namespace immo;
using namespace immo::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto d = fs::temp_directory_path() / ("immo_cli_" + tag + "_" + info->name() + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string{IMMO_CLI_PATH} + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Globals globals(const fs::path& dir, std::uint64_t seed = 3) {
  Globals g;
  g.seed = seed;
  g.out_dir = dir;
  g.log_level = LogLevel::Off;
  return g;
}

fs::path converted_dataset(const fs::path& dir, int scenes) {
  const auto g = globals(dir);
  cmd_gen_data(g, {.scenes = scenes, .epsilon = 0.0, .out = "raw.jsonl"});
  cmd_convert_rationale(g, {.in = dir / "raw.jsonl", .out = "conv.jsonl"});
  return dir / "conv.jsonl";
}

}  // namespace

TEST(CliProcess, ZeroScenesIsUsageError) {
  const auto d = fresh_dir("p");
  EXPECT_EQ(run_cli("--out-dir " + d.string() + " gen-data --scenes 0"), kUsage);
  EXPECT_EQ(run_cli("gen-data"), kUsage);
  EXPECT_EQ(run_cli("no-such-command"), kUsage);
}

TEST(CliProcess, GenDataSucceedsAndIsDeterministic) {
  const auto d = fresh_dir("p");
  ASSERT_EQ(run_cli("--seed 9 --out-dir " + d.string() + " gen-data --scenes 40 --out a.jsonl"), kOk);
  ASSERT_EQ(run_cli("--seed 9 --out-dir " + d.string() + " gen-data --scenes 40 --out b.jsonl"), kOk);
  EXPECT_EQ(slurp(d / "a.jsonl"), slurp(d / "b.jsonl"));
  EXPECT_TRUE(fs::exists(d / "a.jsonl.meta.json") || fs::exists(meta_path(d / "a.jsonl")));
}

TEST(CliProcess, TrainRlWithoutCheckpointsIsRefused) {
  const auto d = fresh_dir("p");
  EXPECT_EQ(run_cli("--out-dir " + d.string() + " train-rl --epochs 1 --episodes 8"), kUsage);
}

TEST(CliProcess, CorruptDatasetIsDataError) {
  const auto d = fresh_dir("p");
  std::ofstream(d / "bad.jsonl") << "{not json\n";
  EXPECT_EQ(run_cli("--out-dir " + d.string() + " train-sl --data " + (d / "bad.jsonl").string()), kDataInvalid);
}

TEST(Cli, GenDataWritesRequestedRecordsAndMeta) {
  const auto d = fresh_dir("l");
  const auto r = cmd_gen_data(globals(d), {.scenes = 25, .epsilon = 0.3, .out = "x.jsonl"});
  EXPECT_EQ(r.records, 25);
  EXPECT_EQ(read_records(r.path).size(), 25u);
  const auto meta = nlohmann::json::parse(slurp(meta_path(r.path)));
  EXPECT_EQ(meta.at("scenes"), 25);
  EXPECT_DOUBLE_EQ(meta.at("epsilon").get<double>(), 0.3);
  EXPECT_THROW(cmd_gen_data(globals(d), {.scenes = 0}), InvalidArgument);
}

TEST(Cli, ConvertAccountsForEveryLine) {
  const auto d = fresh_dir("l");
  const auto g = globals(d);
  cmd_gen_data(g, {.scenes = 30, .out = "raw.jsonl"});
  {
    std::ofstream app(d / "raw.jsonl", std::ios::app);
    app << "{broken\n";
    auto rec = generate_records(1, 77, "x").front();
    rec.rationale = "The sky is green.";
    app << to_json(rec).dump() << "\n";
  }
  const auto r = cmd_convert_rationale(g, {.in = d / "raw.jsonl", .out = "conv.jsonl"});
  EXPECT_EQ(r.converted, 30);
  EXPECT_EQ(r.rejected, 2);
  EXPECT_EQ(read_records(d / "conv.jsonl").size(), 30u);
  std::ifstream rej(r.rejects);
  std::string line;
  int n = 0;
  while (std::getline(rej, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("reason"));
    EXPECT_TRUE(j.contains("line"));
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Cli, ConvertIsDeterministic) {
  const auto d = fresh_dir("l");
  const auto g = globals(d);
  cmd_gen_data(g, {.scenes = 50, .out = "raw.jsonl"});
  cmd_convert_rationale(g, {.in = d / "raw.jsonl", .out = "a.jsonl"});
  cmd_convert_rationale(g, {.in = d / "raw.jsonl", .out = "b.jsonl"});
  EXPECT_EQ(slurp(d / "a.jsonl"), slurp(d / "b.jsonl"));
}

TEST(Cli, TrainRlRefusesHalfCheckpointsAndMissingResume) {
  const auto d = fresh_dir("l");
  TrainRLOptions o;
  o.rl.num_epochs = 1;
  o.rl.episodes_per_epoch = 8;
  o.ckpt_reasoner = d / "r.json";
  EXPECT_THROW(cmd_train_rl(globals(d), o), InvalidArgument);
  TrainRLOptions r;
  r.resume = true;
  EXPECT_THROW(cmd_train_rl(globals(d), r), InvalidArgument);
}

TEST(Cli, ZeroBetaMakesShapedReturnEqualTaskReward) {
  const auto d = fresh_dir("l");
  TrainRLOptions o;
  o.from_scratch = true;
  o.scenes = 60;
  o.rl.num_epochs = 2;
  o.rl.episodes_per_epoch = 64;
  o.rl.minibatch_size = 16;
  o.rl.beta = 0.0;
  const auto rows = cmd_train_rl(globals(d), o);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& m : rows) EXPECT_DOUBLE_EQ(m.mean_R, m.mean_r);
}

TEST(Cli, SlThenRlThenEvalRoundTrip) {
  const auto d = fresh_dir("l");
  const auto data = converted_dataset(d, 200);
  auto g = globals(d);
  g.out_dir = d / "sl";
  TrainSLOptions sl;
  sl.data = data;
  sl.sl.epochs = 2;
  const auto slr = cmd_train_sl(g, sl);
  EXPECT_EQ(slr.reasoner_loss.size(), 2u);
  ASSERT_TRUE(fs::exists(run_files::config(g.out_dir)));
  const auto last = last_complete_epoch(g.out_dir);
  ASSERT_TRUE(last.has_value());
  const auto st = load_train_state(g.out_dir, *last);

  // Checkpoints written by SL load back into identical policies.
  const auto ck = d / "ck";
  fs::create_directories(ck);
  write_file_atomic(ck / "r.json", to_checkpoint(st.reasoner).dump());
  write_file_atomic(ck / "o.json", to_checkpoint(st.observer).dump());
  EXPECT_EQ(digest(load_checkpoint(ck / "r.json")), digest(st.reasoner));

  auto rg = globals(d);
  rg.out_dir = d / "rl";
  TrainRLOptions rl;
  rl.ckpt_reasoner = ck / "r.json";
  rl.ckpt_observer = ck / "o.json";
  rl.data = data;
  rl.rl.num_epochs = 2;
  rl.rl.episodes_per_epoch = 64;
  rl.rl.minibatch_size = 16;
  const auto rows = cmd_train_rl(rg, rl);
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(read_metrics(rg.out_dir).size(), 2u);

  // Resume with a larger epoch budget continues from epoch 2.
  rl.resume = true;
  rl.rl.num_epochs = 3;
  const auto resumed = cmd_train_rl(rg, rl);
  ASSERT_EQ(resumed.size(), 3u);
  EXPECT_EQ(resumed.back().epoch, 3);

  EvalOptions ev;
  const auto fin = load_train_state(rg.out_dir, *last_complete_epoch(rg.out_dir));
  write_file_atomic(ck / "r3.json", to_checkpoint(fin.reasoner).dump());
  write_file_atomic(ck / "o3.json", to_checkpoint(fin.observer).dump());
  ev.agents.ckpt_reasoner = ck / "r3.json";
  ev.agents.ckpt_observer = ck / "o3.json";
  ev.n = 200;
  ev.transcripts = "t.jsonl";
  const auto rep = cmd_eval(rg, ev);
  EXPECT_EQ(rep.n, 200);
  EXPECT_GT(rep.accuracy, 0.3);
  EXPECT_TRUE(fs::exists(rg.out_dir / "eval_report.json"));
  std::ifstream ts(rg.out_dir / "t.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(ts, line)) {
    EXPECT_EQ(to_json(transcript_from_json(nlohmann::json::parse(line))).dump(), line);
    ++n;
  }
  EXPECT_EQ(n, 200);
}

TEST(Cli, OracleAgentsAreExact) {
  const auto d = fresh_dir("l");
  EvalOptions ev;
  ev.agents.kind = AgentKind::Oracle;
  ev.n = 500;
  EXPECT_DOUBLE_EQ(cmd_eval(globals(d), ev).accuracy, 1.0);
}

TEST(Cli, UniformAgentsAreNearChance) {
  // Final answers are restricted to the template's answer type, so chance is
  // the mean of 1 / |legal answers| over the evaluated problems.
  const auto d = fresh_dir("l");
  const auto g = globals(d);
  EvalOptions ev;
  ev.agents.kind = AgentKind::Uniform;
  ev.n = 3000;
  double chance = 0.0;
  for (const auto& sp : heldout_problems(static_cast<std::size_t>(ev.n), g.seed))
    chance += 1.0 / static_cast<double>(reasoner_final_mask(sp.problem.template_id).size()) / ev.n;
  EXPECT_GT(chance, 1.0 / kNumTokens);
  EXPECT_NEAR(cmd_eval(g, ev).accuracy, chance, 0.025);
}

TEST(Cli, AblationWritesCsvAndJson) {
  const auto d = fresh_dir("l");
  AblateOptions ab;
  ab.agents.kind = AgentKind::Oracle;
  ab.turns = {0, 1, 2};
  ab.seeds = 2;
  ab.n = 100;
  const auto t = cmd_ablate_turns(globals(d), ab);
  (void)t;
  const auto csv = slurp(d / "ablation.csv");
  EXPECT_NE(csv.find('\n'), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "ablation.json"));
}

TEST(Cli, RunRendersOneEpisode) {
  const auto d = fresh_dir("l");
  RunOptions ro;
  ro.agents.kind = AgentKind::Oracle;
  ro.transcript = "one.jsonl";
  const auto t = cmd_run(globals(d), ro);
  const auto text = render_transcript(t);
  EXPECT_NE(text.find("caption"), std::string::npos);
  EXPECT_NE(text.find("Q2"), std::string::npos);
  EXPECT_EQ(t.final_answer.text, token_name(t.ground_truth));
  EXPECT_TRUE(fs::exists(d / "one.jsonl"));
  ro.turns = kMaxTurnsCap + 1;
  EXPECT_THROW(cmd_run(globals(d), ro), InvalidArgument);
}
