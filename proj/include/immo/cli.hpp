// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command implementations behind the `immo` binary. Each command takes a
// plain options struct so that tests can drive it without a process.
//
// Exit codes: 0 success, 2 usage, 3 data validation, 4 training divergence.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/agents.hpp"
#include "immo/errors.hpp"
#include "immo/eval.hpp"
#include "immo/protocol.hpp"
#include "immo/remote.hpp"
#include "immo/sceneworld.hpp"
#include "immo/training.hpp"

namespace immo::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataInvalid = 3, kDiverged = 4 };

/// Maps a library exception to the documented exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TrainingDivergence*>(&e) || dynamic_cast<const NonFiniteRatio*>(&e)) return kDiverged;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const UnparseableRationale*>(&e) ||
      dynamic_cast<const EmptyDataset*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
    return kDataInvalid;
  return kUsage;
}

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline std::optional<LogLevel> parse_log_level(std::string_view s) {
  if (s == "debug") return LogLevel::Debug;
  if (s == "info") return LogLevel::Info;
  if (s == "warn") return LogLevel::Warn;
  if (s == "error") return LogLevel::Error;
  if (s == "off") return LogLevel::Off;
  return std::nullopt;
}

/// Diagnostics go to stderr so that stdout stays byte-reproducible.
class Logger {
 public:
  explicit Logger(LogLevel level = LogLevel::Info, std::ostream* sink = &std::cerr) : level_(level), sink_(sink) {}
  void log(LogLevel l, const std::string& msg) const {
    static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
    if (l >= level_ && l != LogLevel::Off && sink_) *sink_ << "[" << kTags[static_cast<int>(l)] << "] " << msg << "\n";
  }
  void debug(const std::string& m) const { log(LogLevel::Debug, m); }
  void info(const std::string& m) const { log(LogLevel::Info, m); }
  void warn(const std::string& m) const { log(LogLevel::Warn, m); }

 private:
  LogLevel level_;
  std::ostream* sink_;
};

struct Globals {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = ".";
  LogLevel log_level = LogLevel::Info;
};

// ---------------------------------------------------------------------------
// Dataset files

inline std::string records_jsonl(const std::vector<RationaleRecord>& records) {
  std::string s;
  for (const auto& r : records) s += to_json(r).dump() + "\n";
  return s;
}

/// Reads a dataset; any bad line is a validation failure naming the line.
inline std::vector<RationaleRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset " + path.string());
  std::vector<RationaleRecord> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (out.empty()) throw EmptyDataset(path.string() + " has no records");
  return out;
}

inline std::filesystem::path meta_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".meta.json");
}
inline std::filesystem::path rejects_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".rejects.jsonl");
}

/// Relative paths resolve against the global output directory.
inline std::filesystem::path resolve(const Globals& g, const std::filesystem::path& p) {
  return p.is_absolute() ? p : g.out_dir / p;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  int scenes = 0;
  double epsilon = 0.0;
  std::filesystem::path out = "data.jsonl";
};

struct GenDataResult {
  std::filesystem::path path;
  int records = 0;
};

/// Generated problems are checked against the two-query solvability bound
/// before anything is written.
inline GenDataResult cmd_gen_data(const Globals& g, const GenDataOptions& o) {
  if (o.scenes <= 0) throw InvalidArgument("--scenes must be positive");
  if (!(o.epsilon >= 0.0 && o.epsilon <= 1.0)) throw InvalidArgument("--epsilon must lie in [0, 1]");
  const auto records = generate_records(static_cast<std::size_t>(o.scenes), g.seed, "train");
  for (const auto& r : records)
    if (!solvable_within(r.scene, r.problem, 2)) throw FormatError("generated problem not solvable in two queries");
  const auto path = resolve(g, o.out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, records_jsonl(records));
  const nlohmann::json meta = {{"scenes", o.scenes}, {"seed", g.seed}, {"epsilon", o.epsilon}};
  write_file_atomic(meta_path(path), meta.dump(2) + "\n");
  return {path, o.scenes};
}

// ---------------------------------------------------------------------------
// convert-rationale

struct ConvertOptions {
  std::filesystem::path in;
  std::filesystem::path out = "converted.jsonl";
};

struct ConvertResult {
  int converted = 0;
  int rejected = 0;
  std::filesystem::path rejects;
};

/// Unparseable lines (bad JSON or out-of-grammar rationale) go to the rejects
/// sidecar with a reason; converted dialogues must replay oracle-consistently.
inline ConvertResult cmd_convert_rationale(const Globals& g, const ConvertOptions& o) {
  std::ifstream in(o.in);
  if (!in) throw InvalidArgument("cannot open " + o.in.string());
  std::string ok, bad, line;
  ConvertResult res;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      auto r = convert_rationale(record_from_json(nlohmann::json::parse(line)));
      if (!oracle_consistent(r.scene, *r.gold_dialogue))
        throw UnparseableRationale("dialogue contradicts the scene");
      ok += to_json(r).dump() + "\n";
      ++res.converted;
    } catch (const std::exception& e) {
      bad += nlohmann::json{{"line", n}, {"reason", e.what()}, {"raw", line}}.dump() + "\n";
      ++res.rejected;
    }
  }
  const auto out = resolve(g, o.out);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  res.rejects = rejects_path(out);
  write_file_atomic(out, ok);
  write_file_atomic(res.rejects, bad);
  return res;
}

// ---------------------------------------------------------------------------
// train-sl

struct TrainSLOptions {
  std::filesystem::path data;  // converted dataset
  SLConfig sl{.epochs = 8, .learning_rate = 2.0, .batch_size = 32, .seed = 0};
};

struct TrainSLResult {
  std::filesystem::path run_dir;
  std::vector<double> reasoner_loss;
  std::vector<double> observer_loss;
};

/// Writes epoch-0 checkpoints, the resume state and config.json into out_dir.
inline TrainSLResult cmd_train_sl(const Globals& g, TrainSLOptions o, const Logger& log = Logger{}) {
  o.sl.seed = g.seed;
  o.sl.validate();
  const auto records = read_records(o.data);
  TrainState st;
  log.info("behavior cloning on " + std::to_string(records.size()) + " records");
  TrainSLResult res;
  res.run_dir = g.out_dir;
  res.reasoner_loss = behavior_clone(st.reasoner, reasoner_sl_dataset(records, st.reasoner), o.sl);
  res.observer_loss = behavior_clone(st.observer, observer_sl_dataset(records, st.observer), o.sl);
  save_train_state(g.out_dir, st);
  std::string curve;
  for (std::size_t e = 0; e < res.reasoner_loss.size(); ++e)
    curve += nlohmann::json{{"epoch", e + 1}, {"reasoner_loss", res.reasoner_loss[e]},
                            {"observer_loss", res.observer_loss[e]}}.dump() + "\n";
  write_file_atomic(g.out_dir / "sl_metrics.jsonl", curve);
  write_file_atomic(run_files::config(g.out_dir),
                    nlohmann::json{{"stage", "sl"}, {"sl", to_json(o.sl)}, {"data", o.data.string()}}.dump(2) + "\n");
  log.info("final losses: reasoner " + std::to_string(res.reasoner_loss.back()) + ", observer " +
           std::to_string(res.observer_loss.back()));
  return res;
}

// ---------------------------------------------------------------------------
// train-rl

struct TrainRLOptions {
  std::optional<std::filesystem::path> ckpt_reasoner;
  std::optional<std::filesystem::path> ckpt_observer;
  std::optional<std::filesystem::path> data;  // training problems; generated when absent
  int scenes = 5000;                          // used when data is absent
  double epsilon = 0.3;
  bool from_scratch = false;
  bool resume = false;
  int eval_n = 0;  // held-out problems evaluated after each epoch; 0 disables
  RLConfig rl{};
};

inline std::vector<SceneProblem> training_problems(const Globals& g, const TrainRLOptions& o) {
  if (o.data) return to_problems(read_records(*o.data));
  if (o.scenes <= 0) throw InvalidArgument("--scenes must be positive");
  return to_problems(generate_records(static_cast<std::size_t>(o.scenes), g.seed, "train"));
}

/// Alternating PPO. Refuses to start without both initial checkpoints unless
/// from_scratch is set; resume continues from the last complete epoch in out_dir.
inline std::vector<EpochMetrics> cmd_train_rl(const Globals& g, TrainRLOptions o, const Logger& log = Logger{}) {
  o.rl.seed = g.seed;
  o.rl.validate();
  if (!(o.epsilon >= 0.0 && o.epsilon <= 1.0)) throw InvalidArgument("--epsilon must lie in [0, 1]");
  const auto dir = g.out_dir;
  std::filesystem::create_directories(dir);

  TrainState st;
  std::vector<EpochMetrics> rows;
  if (o.resume) {
    const auto last = last_complete_epoch(dir);
    if (!last) throw InvalidArgument("--resume: no complete epoch in " + dir.string());
    st = load_train_state(dir, *last);
    for (const auto& m : read_metrics(dir))
      if (m.epoch <= *last) rows.push_back(m);
    log.info("resuming after epoch " + std::to_string(*last));
  } else {
    if (o.ckpt_reasoner.has_value() != o.ckpt_observer.has_value())
      throw InvalidArgument("pass both --ckpt-reasoner and --ckpt-observer");
    if (o.ckpt_reasoner) {
      st.reasoner = load_checkpoint(*o.ckpt_reasoner);
      st.observer = load_checkpoint(*o.ckpt_observer);
    } else if (!o.from_scratch) {
      throw InvalidArgument("train-rl needs initial checkpoints (or --from-scratch)");
    }
    save_train_state(dir, st);
    write_metrics(dir, rows);
  }
  nlohmann::json cfg = {{"stage", "rl"}, {"rl", to_json(o.rl)}, {"epsilon", o.epsilon}, {"scenes", o.scenes}};
  cfg["data"] = o.data ? nlohmann::json(o.data->string()) : nlohmann::json(nullptr);
  write_file_atomic(run_files::config(dir), cfg.dump(2) + "\n");

  const auto problems = training_problems(g, o);
  TrainEnv env;
  env.epsilon = o.epsilon;
  std::vector<SceneProblem> held;
  if (o.eval_n > 0) {
    held = heldout_problems(static_cast<std::size_t>(o.eval_n), g.seed);
    env.evaluate = [&](const SoftmaxPolicy& r, const SoftmaxPolicy& ob) {
      return evaluate_policies(r, ob, held, o.rl.max_turns, o.epsilon, g.seed, {}, DecodeMode::Greedy).accuracy;
    };
  }
  env.on_epoch_end = [&](const TrainState& s, const EpochMetrics& m) {
    rows.push_back(m);
    save_train_state(dir, s);
    write_metrics(dir, rows);
    log.debug("epoch " + std::to_string(m.epoch) + " " + std::string{name(m.active_role)} +
              " mean_r=" + std::to_string(m.mean_r) + " mean_kl=" + std::to_string(m.mean_kl));
  };
  train_alternating(st, problems, o.rl, env);
  return rows;
}

// ---------------------------------------------------------------------------
// Agents for eval / ablate-turns / run

enum class AgentKind { Policy, Oracle, Uniform };

inline std::optional<AgentKind> parse_agent_kind(std::string_view s) {
  if (s == "policy") return AgentKind::Policy;
  if (s == "oracle") return AgentKind::Oracle;
  if (s == "uniform") return AgentKind::Uniform;
  return std::nullopt;
}

struct AgentOptions {
  AgentKind kind = AgentKind::Policy;
  std::optional<std::filesystem::path> ckpt_reasoner;
  std::optional<std::filesystem::path> ckpt_observer;
  DecodeMode decode = DecodeMode::Greedy;
  std::optional<std::string> remote_reasoner;  // base URL
  std::optional<std::string> remote_observer;
  int remote_timeout_ms = 5000;
  int remote_retries = 2;
};

/// Owns the policies and the agent objects built over them.
class AgentPair {
 public:
  explicit AgentPair(const AgentOptions& o) {
    if (o.kind == AgentKind::Policy) {
      if (!o.ckpt_reasoner && !o.remote_reasoner) throw InvalidArgument("policy agents need --ckpt-reasoner");
      if (!o.ckpt_observer && !o.remote_observer) throw InvalidArgument("policy agents need --ckpt-observer");
      if (o.ckpt_reasoner) reasoner_policy_ = std::make_unique<SoftmaxPolicy>(load_checkpoint(*o.ckpt_reasoner));
      if (o.ckpt_observer) observer_policy_ = std::make_unique<SoftmaxPolicy>(load_checkpoint(*o.ckpt_observer));
    } else if (o.kind == AgentKind::Uniform) {
      reasoner_policy_ = std::make_unique<SoftmaxPolicy>(make_reasoner_policy());
      observer_policy_ = std::make_unique<SoftmaxPolicy>(make_observer_policy());
    }
    const DecodeMode mode = o.kind == AgentKind::Uniform ? DecodeMode::Sample : o.decode;
    if (o.remote_reasoner)
      reasoner_ = std::make_unique<RemoteReasoner>(
          RemoteEndpointConfig{*o.remote_reasoner, o.remote_timeout_ms, o.remote_retries, Role::Reasoner});
    else if (reasoner_policy_)
      reasoner_ = std::make_unique<PolicyReasoner>(*reasoner_policy_, ReasonerEncoding{}, mode);
    else
      reasoner_ = std::make_unique<OracleReasoner>();
    if (o.remote_observer)
      observer_ = std::make_unique<RemoteObserver>(
          RemoteEndpointConfig{*o.remote_observer, o.remote_timeout_ms, o.remote_retries, Role::Observer});
    else if (observer_policy_)
      observer_ = std::make_unique<PolicyObserver>(*observer_policy_, mode);
    else
      observer_ = std::make_unique<OracleObserver>();
  }
  ReasonerAgent& reasoner() { return *reasoner_; }
  ObserverAgent& observer() { return *observer_; }

 private:
  std::unique_ptr<SoftmaxPolicy> reasoner_policy_, observer_policy_;
  std::unique_ptr<ReasonerAgent> reasoner_;
  std::unique_ptr<ObserverAgent> observer_;
};

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  AgentOptions agents;
  int turns = 2;
  double epsilon = 0.0;
  int n = 1000;
  std::filesystem::path report = "eval_report.json";
  std::optional<std::filesystem::path> transcripts;  // JSONL, one episode per line
};

inline EvalReport cmd_eval(const Globals& g, const EvalOptions& o) {
  if (o.n <= 0) throw InvalidArgument("--n must be positive");
  if (o.turns < 0 || o.turns > kMaxTurnsCap) throw InvalidArgument("--turns out of range");
  if (!(o.epsilon >= 0.0 && o.epsilon <= 1.0)) throw InvalidArgument("--epsilon must lie in [0, 1]");
  AgentPair agents(o.agents);
  const auto problems = heldout_problems(static_cast<std::size_t>(o.n), g.seed);
  std::vector<EpisodeTranscript> ts;
  const auto report =
      evaluate(agents.reasoner(), agents.observer(), problems, o.turns, o.epsilon, g.seed, o.transcripts ? &ts : nullptr);
  std::filesystem::create_directories(g.out_dir);
  write_file_atomic(resolve(g, o.report), to_json(report).dump(2) + "\n");
  if (o.transcripts) {
    std::string s;
    for (const auto& t : ts) s += to_json(t).dump() + "\n";
    write_file_atomic(resolve(g, *o.transcripts), s);
  }
  return report;
}

// ---------------------------------------------------------------------------
// ablate-turns

struct AblateOptions {
  AgentOptions agents;
  std::vector<int> turns{0, 1, 2, 3, 4, 5};
  int seeds = 3;
  int n = 1000;
  double epsilon = 0.0;
  std::filesystem::path csv = "ablation.csv";
};

inline nlohmann::json to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"turns", r.turns}, {"mean_accuracy", r.mean}, {"std_accuracy", r.stddev}, {"per_seed", r.per_seed}});
  return {{"rows", rows}};
}

inline AblationTable cmd_ablate_turns(const Globals& g, const AblateOptions& o) {
  for (int t : o.turns)
    if (t < 0 || t > kMaxTurnsCap) throw InvalidArgument("turn values must lie in [0, 8]");
  if (!(o.epsilon >= 0.0 && o.epsilon <= 1.0)) throw InvalidArgument("--epsilon must lie in [0, 1]");
  const AgentOptions agent_opts = o.agents;
  AgentPair{agent_opts};  // fail fast on bad checkpoints
  const AgentFactory factory = [agent_opts]() {
    auto pair = std::make_shared<AgentPair>(agent_opts);
    // The returned agents forward to the shared pair, which they keep alive.
    struct R : ReasonerAgent {
      std::shared_ptr<AgentPair> p;
      Utterance next_query(const Problem& pr, const InnerMonologue& im, EpisodeContext& c) override {
        return p->reasoner().next_query(pr, im, c);
      }
      Utterance final_answer(const Problem& pr, const InnerMonologue& im, EpisodeContext& c) override {
        return p->reasoner().final_answer(pr, im, c);
      }
    };
    struct O : ObserverAgent {
      std::shared_ptr<AgentPair> p;
      Utterance caption(const Scene& s, EpisodeContext& c) override { return p->observer().caption(s, c); }
      Utterance answer(const Scene& s, const Utterance& q, EpisodeContext& c) override {
        return p->observer().answer(s, q, c);
      }
    };
    auto r = std::make_unique<R>();
    r->p = pair;
    auto ob = std::make_unique<O>();
    ob->p = pair;
    return std::pair<std::unique_ptr<ReasonerAgent>, std::unique_ptr<ObserverAgent>>{std::move(r), std::move(ob)};
  };
  const auto table = ablate_turns(factory, o.turns, o.seeds, static_cast<std::size_t>(o.n), o.epsilon, g.seed);
  std::filesystem::create_directories(g.out_dir);
  const auto csv = resolve(g, o.csv);
  write_file_atomic(csv, ablation_csv(table));
  write_file_atomic(std::filesystem::path(csv).replace_extension(".json"), to_json(table).dump(2) + "\n");
  return table;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  AgentOptions agents;
  int turns = 2;
  double epsilon = 0.0;
  std::optional<std::string> scene_id;        // looked up in `data`
  std::optional<std::filesystem::path> data;  // required with scene_id
  std::optional<std::filesystem::path> transcript;
};

/// Human-readable layout of one episode.
inline std::string render_transcript(const EpisodeTranscript& t) {
  std::ostringstream out;
  out << "scene    " << t.scene_id << "\n";
  out << "problem  " << t.problem.surface << "  [" << name(t.problem.template_id) << "]\n";
  const auto& e = t.im.entries();
  out << "caption  " << e.front().text << "\n";
  for (std::size_t i = 1; i + 1 < e.size(); i += 2) {
    const std::size_t turn = (i + 1) / 2;
    out << "Q" << turn << "       " << e[i].text << "\n";
    out << "A" << turn << "       " << e[i + 1].text << "\n";
  }
  out << "final    " << t.final_answer.text << "\n";
  out << "truth    " << token_name(t.ground_truth) << "\n";
  out << "reward   r=" << t.reward.r << " kl_term=" << t.reward.kl_term << " R=" << t.reward.R << "\n";
  return out.str();
}

inline EpisodeTranscript cmd_run(const Globals& g, const RunOptions& o) {
  if (o.turns < 0 || o.turns > kMaxTurnsCap) throw InvalidArgument("--turns out of range");
  SceneProblem sp;
  if (o.scene_id) {
    if (!o.data) throw InvalidArgument("--scene-id needs --data");
    bool found = false;
    for (auto& r : read_records(*o.data))
      if (r.scene.id == *o.scene_id) {
        sp = {std::move(r.scene), std::move(r.problem)};
        found = true;
        break;
      }
    if (!found) throw InvalidArgument("scene " + *o.scene_id + " not in " + o.data->string());
  } else {
    sp = heldout_problems(1, g.seed).front();
  }
  AgentPair agents(o.agents);
  NoisyObserver noisy(agents.observer(), o.epsilon);
  EpisodeConfig cfg;
  cfg.max_turns = o.turns;
  cfg.seed = derive_seed(g.seed, "episode", 0);
  auto t = run_episode(agents.reasoner(), noisy, sp.problem, sp.scene, cfg);
  if (o.transcript) {
    const auto path = resolve(g, *o.transcript);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file_atomic(path, to_json(t).dump() + "\n");
  }
  return t;
}

}  // namespace immo::cli
