// SPDX-License-Identifier: Apache-2.0
// immo: data generation, two-stage training, evaluation and transcripts.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "immo/cli.hpp"

namespace {

using namespace immo;
using namespace immo::cli;

void add_agent_flags(CLI::App* cmd, AgentOptions& a, std::string& kind, std::string& decode) {
  cmd->add_option("--ckpt-reasoner", a.ckpt_reasoner, "reasoner checkpoint (JSON)");
  cmd->add_option("--ckpt-observer", a.ckpt_observer, "observer checkpoint (JSON)");
  cmd->add_option("--agents", kind, "policy | oracle | uniform")->check(CLI::IsMember({"policy", "oracle", "uniform"}));
  cmd->add_option("--decode", decode, "greedy | sample")->check(CLI::IsMember({"greedy", "sample"}));
  cmd->add_option("--remote-reasoner", a.remote_reasoner, "base URL of a remote reasoner endpoint");
  cmd->add_option("--remote-observer", a.remote_observer, "base URL of a remote observer endpoint");
  cmd->add_option("--remote-timeout-ms", a.remote_timeout_ms)->check(CLI::PositiveNumber);
  cmd->add_option("--remote-retries", a.remote_retries)->check(CLI::Range(0, kMaxRemoteRetries));
}

void finish_agent_flags(AgentOptions& a, const std::string& kind, const std::string& decode) {
  a.kind = *parse_agent_kind(kind);
  a.decode = decode == "sample" ? DecodeMode::Sample : DecodeMode::Greedy;
}

void print_report(const EvalReport& r) {
  std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/" << r.n << ") turns=" << r.turns
            << " epsilon=" << r.epsilon << " seed=" << r.seed << "\n";
  for (const auto& [k, v] : r.per_template)
    std::cout << "  " << k << " " << v << " (n=" << r.per_template_n.at(k) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMMO reasoner/observer toolkit on the SceneWorld environment"};
  app.require_subcommand(1);
  Globals g;
  std::string log_level = "info";
  app.add_option("--seed", g.seed, "root seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "directory for outputs")->capture_default_str();
  app.add_option("--log-level", log_level, "debug | info | warn | error | off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  // gen-data
  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate scenes, problems and rationales (JSONL)");
  gen_cmd->add_option("--scenes", gen.scenes, "number of records")->required();
  gen_cmd->add_option("--epsilon", gen.epsilon, "observer noise recorded for this dataset");
  gen_cmd->add_option("--out", gen.out, "output path")->capture_default_str();

  // convert-rationale
  ConvertOptions conv;
  auto* conv_cmd = app.add_subcommand("convert-rationale", "turn rationales into two-turn dialogues");
  conv_cmd->add_option("--in", conv.in, "input dataset")->required();
  conv_cmd->add_option("--out", conv.out, "output dataset")->capture_default_str();

  // train-sl
  TrainSLOptions sl;
  auto* sl_cmd = app.add_subcommand("train-sl", "behavior cloning of both agents");
  sl_cmd->add_option("--data", sl.data, "converted dataset")->required();
  sl_cmd->add_option("--epochs", sl.sl.epochs)->capture_default_str();
  sl_cmd->add_option("--lr", sl.sl.learning_rate)->capture_default_str();
  sl_cmd->add_option("--batch-size", sl.sl.batch_size)->capture_default_str();

  // train-rl
  TrainRLOptions rl;
  std::string baseline = "mean_return", optimizer = "sgd";
  auto* rl_cmd = app.add_subcommand("train-rl", "alternating PPO from SL checkpoints");
  rl_cmd->add_option("--ckpt-reasoner", rl.ckpt_reasoner);
  rl_cmd->add_option("--ckpt-observer", rl.ckpt_observer);
  rl_cmd->add_flag("--from-scratch", rl.from_scratch, "start from uniform policies");
  rl_cmd->add_flag("--resume", rl.resume, "continue from the last complete epoch in --out-dir");
  rl_cmd->add_option("--data", rl.data, "training problems (JSONL); generated when absent");
  rl_cmd->add_option("--scenes", rl.scenes, "generated training problems")->capture_default_str();
  rl_cmd->add_option("--epsilon", rl.epsilon, "observer noise during training")->capture_default_str();
  rl_cmd->add_option("--eval-n", rl.eval_n, "held-out problems evaluated per epoch")->capture_default_str();
  rl_cmd->add_option("--epochs", rl.rl.num_epochs)->capture_default_str();
  rl_cmd->add_option("--episodes", rl.rl.episodes_per_epoch)->capture_default_str();
  rl_cmd->add_option("--turns", rl.rl.max_turns)->capture_default_str();
  rl_cmd->add_option("--beta", rl.rl.beta)->capture_default_str();
  rl_cmd->add_option("--clip", rl.rl.clip_ratio)->capture_default_str();
  rl_cmd->add_option("--ppo-epochs", rl.rl.ppo_epochs_per_batch)->capture_default_str();
  rl_cmd->add_option("--minibatch", rl.rl.minibatch_size)->capture_default_str();
  rl_cmd->add_option("--lr", rl.rl.learning_rate)->capture_default_str();
  rl_cmd->add_option("--baseline", baseline)->check(CLI::IsMember({"mean_return", "per_state_value_table"}));
  rl_cmd->add_option("--optimizer", optimizer)->check(CLI::IsMember({"sgd", "adam"}));

  // eval
  EvalOptions ev;
  std::string ev_kind = "policy", ev_decode = "greedy";
  auto* ev_cmd = app.add_subcommand("eval", "accuracy on fresh held-out problems");
  add_agent_flags(ev_cmd, ev.agents, ev_kind, ev_decode);
  ev_cmd->add_option("--turns", ev.turns)->capture_default_str();
  ev_cmd->add_option("--epsilon", ev.epsilon)->capture_default_str();
  ev_cmd->add_option("--n", ev.n)->capture_default_str();
  ev_cmd->add_option("--report", ev.report)->capture_default_str();
  ev_cmd->add_option("--transcripts", ev.transcripts, "write every episode (JSONL)");

  // ablate-turns
  AblateOptions ab;
  std::string ab_kind = "policy", ab_decode = "greedy";
  auto* ab_cmd = app.add_subcommand("ablate-turns", "accuracy against the turn budget");
  add_agent_flags(ab_cmd, ab.agents, ab_kind, ab_decode);
  ab_cmd->add_option("--turns", ab.turns, "turn budgets")->expected(1, -1);
  ab_cmd->add_option("--seeds", ab.seeds)->capture_default_str();
  ab_cmd->add_option("--n", ab.n)->capture_default_str();
  ab_cmd->add_option("--epsilon", ab.epsilon)->capture_default_str();
  ab_cmd->add_option("--csv", ab.csv)->capture_default_str();

  // run
  RunOptions run;
  std::string run_kind = "policy", run_decode = "greedy";
  auto* run_cmd = app.add_subcommand("run", "render one inner monologue");
  add_agent_flags(run_cmd, run.agents, run_kind, run_decode);
  run_cmd->add_option("--turns", run.turns)->capture_default_str();
  run_cmd->add_option("--epsilon", run.epsilon)->capture_default_str();
  run_cmd->add_option("--scene-id", run.scene_id, "scene to look up in --data");
  run_cmd->add_option("--data", run.data);
  run_cmd->add_option("--transcript", run.transcript, "also write the episode as JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  g.log_level = *parse_log_level(log_level);
  const Logger log(g.log_level);

  try {
    if (*gen_cmd) {
      const auto r = cmd_gen_data(g, gen);
      std::cout << "wrote " << r.records << " records to " << r.path.string() << "\n";
    } else if (*conv_cmd) {
      const auto r = cmd_convert_rationale(g, conv);
      std::cout << "converted " << r.converted << ", rejected " << r.rejected << " (" << r.rejects.string() << ")\n";
    } else if (*sl_cmd) {
      const auto r = cmd_train_sl(g, sl, log);
      std::cout << "SL checkpoints in " << r.run_dir.string() << "\n";
    } else if (*rl_cmd) {
      rl.rl.baseline = *parse_baseline(baseline);
      rl.rl.optimizer = *parse_optimizer(optimizer);
      for (const auto& m : cmd_train_rl(g, rl, log)) std::cout << to_json(m).dump() << "\n";
    } else if (*ev_cmd) {
      finish_agent_flags(ev.agents, ev_kind, ev_decode);
      print_report(cmd_eval(g, ev));
    } else if (*ab_cmd) {
      finish_agent_flags(ab.agents, ab_kind, ab_decode);
      std::cout << ablation_csv(cmd_ablate_turns(g, ab));
    } else if (*run_cmd) {
      finish_agent_flags(run.agents, run_kind, run_decode);
      std::cout << render_transcript(cmd_run(g, run));
    }
  } catch (const std::exception& e) {
    log.log(LogLevel::Error, e.what());
    return exit_code_for(e);
  }
  return kOk;
}
