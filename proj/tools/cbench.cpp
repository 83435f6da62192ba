// cbench: command-line driver for building tasks, running models, baselines,
// scoring, reports, the annotation service and replays.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cbench/annotation.hpp"
#include "cbench/dataset.hpp"
#include "cbench/kernels.hpp"
#include "cbench/runner.hpp"

namespace fs = std::filesystem;
using namespace cbench;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;

void log_line(const std::string& msg) { fmt::print(stderr, "cbench: {}\n", msg); }

std::string task_file_stem(const TaskSpec& s) {
  if (s.kind == TaskKind::selection || s.kind == TaskKind::classification) {
    return fmt::format("{}_{}_{}", to_string(s.kind), s.m, s.n);
  }
  return std::string(to_string(s.kind));
}

// --- build-tasks --------------------------------------------------------------

struct BuildArgs {
  std::string dataset, config, out, split = "test";
  bool serial = false;
};

int cmd_build_tasks(const BuildArgs& a) {
  const Config cfg = a.config.empty() ? Config{} : Config::load(a.config);
  const LoadResult loaded = load_dataset(a.dataset);
  for (const auto& e : loaded.errors) log_line(fmt::format("{}:{}: {}", a.dataset, e.line, e.message));
  const DatasetSplit split = split_dataset(loaded.dataset, cfg.split_seed);
  fs::create_directories(a.out);
  write_file_atomic((fs::path(a.out) / "split.json").string(), split.manifest().dump(2) + "\n");

  const std::vector<VideoRecord>* part = a.split == "train" ? &split.train
                                         : a.split == "validation" ? &split.validation
                                                                   : &split.test;
  std::vector<TaskSpec> specs = cfg.tasks;
  if (specs.empty()) {
    specs = {{TaskKind::selection, 1, 1}, {TaskKind::ranking, 4, 0}, {TaskKind::classification, 3, 5},
             {TaskKind::explanation, 0, 0}, {TaskKind::creation, 0, 0}};
  }
  std::map<std::string, const VideoRecord*> by_id;
  for (const auto& r : *part) by_id[r.video_id] = &r;

  std::string skipped;
  for (const auto& spec : specs) {
    const TaskConfig tc = spec.to_config(cfg.task_seed);
    TaskBatch batch = a.serial ? serial::build_tasks(*part, tc) : parallel::build_tasks(*part, tc);
    if (spec.kind == TaskKind::creation && !split.train.empty()) {
      for (auto& t : batch.tasks) attach_few_shot(t, *by_id.at(t.video_id), split.train, cfg.fewshot_seed);
    }
    const std::string stem = task_file_stem(spec);
    save_tasks(batch.tasks, (fs::path(a.out) / (stem + ".tasks.jsonl")).string(),
               (fs::path(a.out) / (stem + ".keys.jsonl")).string());
    for (const auto& s : batch.skipped) {
      skipped += json{{"task", stem}, {"video_id", s.video_id}, {"reason", s.reason}}.dump() + "\n";
    }
    fmt::print("{}: {} tasks, {} skipped\n", stem, batch.tasks.size(), batch.skipped.size());
  }
  write_file_atomic((fs::path(a.out) / "skipped.jsonl").string(), skipped);
  fmt::print("split: train {}, validation {}, test {}\n", split.train.size(), split.validation.size(),
             split.test.size());
  return 0;
}

// --- run / replay ---------------------------------------------------------------

struct RunArgs {
  std::string config, tasks, keys, mode, out, run_id, script, replay_log, log, resume, trace_dir;
  bool judge = false;
  bool serial = false;
};

std::shared_ptr<Transport> make_transport(const RunArgs& a, const EndpointConfig* endpoint) {
  if (!a.script.empty()) {
    const json j = json::parse(read_file(a.script));
    return std::make_shared<ScriptedTransport>(ScriptedTransport::parse_script(j));
  }
  if (!a.replay_log.empty()) return ReplayTransport::from_file(a.replay_log);
  if (!endpoint) throw ConfigError("no endpoint configured; pass --script or --replay, or set model_endpoint");
  return std::make_shared<HttpTransport>(*endpoint);
}

RunRecord execute_run(const RunArgs& a, const Config& cfg) {
  const std::vector<TaskInstance> tasks = load_tasks(a.tasks, a.keys);
  if (tasks.empty()) throw ConfigError("no tasks in " + a.tasks);
  const PromptPack prompts = cfg.prompts();

  std::string mode = a.mode;
  if (mode.empty()) mode = is_discriminative(tasks.front().kind) ? "discriminative" : "plain";

  const EndpointConfig* model_ep = cfg.model_endpoint.empty() ? nullptr : &cfg.endpoint(cfg.model_endpoint);
  const EndpointConfig* judge_ep = cfg.judge_endpoint.empty() ? nullptr : &cfg.endpoint(cfg.judge_endpoint);
  const bool offline = !a.script.empty() || !a.replay_log.empty();

  auto log = a.log.empty() ? std::make_shared<RequestLog>() : std::make_shared<RequestLog>(a.log);
  GatewayOptions gopts;
  gopts.log = log;
  gopts.max_in_flight = model_ep ? model_ep->max_in_flight : cfg.concurrency;
  gopts.requests_per_minute = model_ep && !offline ? model_ep->requests_per_minute : 0;
  RetryPolicy retry = cfg.retry;
  if (offline) retry.sleep = [](double) {};
  auto transport = make_transport(a, model_ep);
  Gateway gateway(transport, retry, gopts);

  // Offline transports answer judge calls too; live runs may use a separate judge endpoint.
  const bool judging = a.judge || cfg.judge_enabled;
  std::unique_ptr<Gateway> judge_gateway;
  if (judging && !offline && judge_ep && judge_ep != model_ep) {
    judge_gateway = std::make_unique<Gateway>(std::make_shared<HttpTransport>(*judge_ep), retry, gopts);
  }
  Gateway& jgw = judge_gateway ? *judge_gateway : gateway;

  const std::string model_id = model_ep ? model_ep->model_id : "scripted";
  RunOptions opts;
  opts.model_id = model_id;
  opts.run_id = a.run_id.empty() ? fmt::format("{}-{}", mode, model_id) : a.run_id;
  opts.concurrency = cfg.concurrency;
  opts.frame_policy = cfg.frame_policy;
  opts.record_path = a.out;
  opts.trace_dir = a.trace_dir;
  opts.use_parallel_kernels = !a.serial;
  opts.config_snapshot = {{"config", cfg.to_json()},
                          {"run",
                           {{"mode", mode},
                            {"tasks", fs::absolute(a.tasks).string()},
                            {"keys", fs::absolute(a.keys).string()},
                            {"log", a.log.empty() ? json(nullptr) : json(fs::absolute(a.log).string())},
                            {"judge", judging},
                            {"parallel_kernels", !a.serial}}}};
  std::optional<RunRecord> resume;
  if (!a.resume.empty()) {
    resume = RunRecord::load(a.resume);
    opts.resume = &*resume;
  }

  if (mode == "discriminative") {
    opts.temperature = cfg.discriminative_temperature;
    return run_discriminative(tasks, gateway, prompts, opts);
  }
  auto gen_mode = parse_generation_mode(mode);
  if (!gen_mode) throw ConfigError("unknown mode '" + mode + "'");
  opts.temperature = cfg.generation_temperature;
  std::optional<judge::Judge> judge;
  judge::Options jopts = cfg.judge;
  jopts.model_id = judge_ep ? judge_ep->model_id : model_id;
  if (judging) judge.emplace(jgw, jopts, prompts);
  GenerationOptions gen;
  gen.mode = *gen_mode;
  gen.rot = cfg.rot;
  gen.judge = judge ? &*judge : nullptr;
  gen.online_entities = cfg.online_entities;
  return run_generative(tasks, gateway, prompts, opts, gen);
}

void print_summary(const RunRecord& r) {
  fmt::print("run {} ({}): {} entries, {} gateway calls\n", r.run_id, r.mode, r.entries.size(), r.gateway_calls);
  if (r.aggregates.contains("kinds")) {
    for (const auto& [kind, k] : r.aggregates["kinds"].items()) {
      fmt::print("  {}: {}\n", kind, k["metrics"].dump());
    }
  }
}

int cmd_run(const RunArgs& a) {
  const Config cfg = a.config.empty() ? Config{} : Config::load(a.config);
  try {
    const RunRecord r = execute_run(a, cfg);
    print_summary(r);
    return 0;
  } catch (const RunAborted& e) {
    log_line(e.what());
    if (!a.out.empty()) log_line("partial record saved to " + a.out + "; rerun with --resume to continue");
    return kExitAborted;
  }
}

struct ReplayArgs {
  std::string run, log, tasks, keys, out;
};

int cmd_replay(const ReplayArgs& a) {
  const RunRecord original = RunRecord::load(a.run);
  const json snap = original.config;
  if (!snap.contains("run") || !snap.contains("config")) throw ConfigError(a.run + " has no config snapshot");
  const json& run = snap["run"];
  RunArgs ra;
  ra.tasks = a.tasks.empty() ? run.at("tasks").get<std::string>() : a.tasks;
  ra.keys = a.keys.empty() ? run.at("keys").get<std::string>() : a.keys;
  ra.mode = run.at("mode").get<std::string>();
  ra.run_id = original.run_id;
  ra.out = a.out;
  ra.judge = run.value("judge", false);
  ra.serial = !run.value("parallel_kernels", true);
  ra.replay_log = a.log.empty() ? run.value("log", std::string()) : a.log;
  if (ra.replay_log.empty()) throw ConfigError("no request log recorded; pass --log");

  Config cfg = Config::from_json(snap["config"]);
  const RunRecord replayed = execute_run(ra, cfg);
  const bool same = replayed.aggregates == original.aggregates;
  fmt::print("replay {}: aggregates {}\n", original.run_id, same ? "identical" : "DIFFER");
  if (!same) {
    fmt::print("original: {}\nreplayed: {}\n", original.aggregates.dump(), replayed.aggregates.dump());
  }
  return same ? 0 : kExitFailure;
}

// --- baseline / score / report ---------------------------------------------------

struct BaselineArgs {
  std::string config, tasks, keys, kind = "random", out;
  int trials = 0;
  bool serial = false;
};

int cmd_baseline(const BaselineArgs& a) {
  const Config cfg = a.config.empty() ? Config{} : Config::load(a.config);
  const auto tasks = load_tasks(a.tasks, a.keys);
  RunRecord r;
  if (a.kind == "random") {
    r = baseline_random(tasks, a.trials > 0 ? a.trials : cfg.baseline_trials, cfg.baseline_seed, !a.serial);
  } else if (a.kind == "frequent") {
    r = baseline_frequent(tasks);
  } else {
    throw ConfigError("unknown baseline '" + a.kind + "' (random, frequent)");
  }
  if (!a.out.empty()) r.save(a.out);
  print_summary(r);
  return 0;
}

struct ScoreArgs {
  std::string run, tasks, keys, out;
};

int cmd_score(const ScoreArgs& a) {
  RunRecord r = RunRecord::load(a.run);
  if (!a.tasks.empty()) {
    std::map<std::string, TaskInstance> by_id;
    for (auto& t : load_tasks(a.tasks, a.keys)) by_id.emplace(t.task_id, std::move(t));
    for (auto& e : r.entries) {
      auto it = by_id.find(e.task_id);
      if (it == by_id.end() || !is_discriminative(e.kind) || r.baseline) continue;
      if (!e.raw_text.empty()) e.answer = parse_answer(e.kind, e.raw_text, it->second.labels());
      e.metrics = score_discriminative(it->second, e.answer);
    }
  }
  r.aggregates = compute_aggregates(r);
  r.save(a.out.empty() ? a.run : a.out);
  print_summary(r);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string human, out, json_out;
  std::vector<std::string> tasks, keys;
};

int cmd_report(const ReportArgs& a) {
  std::vector<RunRecord> records;
  for (const auto& p : a.runs) {
    if (!fs::exists(p)) throw ConfigError("no run record at " + p);
    records.push_back(RunRecord::load(p));
  }
  if (!a.human.empty()) {
    if (a.tasks.empty()) throw ConfigError("--human needs --tasks and --keys");
    if (a.tasks.size() != a.keys.size()) throw ConfigError("--tasks and --keys need the same number of files");
    std::vector<TaskInstance> tasks;
    for (std::size_t i = 0; i < a.tasks.size(); ++i) {
      for (auto& t : load_tasks(a.tasks[i], a.keys[i])) tasks.push_back(std::move(t));
    }
    records.push_back(merge_human_responses(ResponseStore(a.human).load(), tasks));
  }
  const Report rep = build_report(records);
  if (a.out.empty()) {
    fmt::print("{}", rep.markdown);
  } else {
    write_file_atomic(a.out, rep.markdown);
  }
  if (!a.json_out.empty()) write_file_atomic(a.json_out, rep.data.dump(2) + "\n");
  return 0;
}

// --- serve --------------------------------------------------------------------------

struct ServeArgs {
  std::string tasks, keys, store, host = "127.0.0.1";
  std::vector<std::string> preference_runs;
  int port = 8080;
  std::uint64_t seed = 11;
};

AnnotationService* g_service = nullptr;

int cmd_serve(const ServeArgs& a) {
  std::vector<TaskInstance> tasks = load_tasks(a.tasks, a.keys);
  if (!a.preference_runs.empty()) {
    std::vector<RunRecord> runs;
    for (const auto& p : a.preference_runs) runs.push_back(RunRecord::load(p));
    tasks = build_preference_tasks(tasks, runs, a.seed);
  }
  ResponseStore store(a.store);
  AnnotationService service(std::move(tasks), store, a.seed);
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  log_line(fmt::format("serving annotation API on http://{}:{}", a.host, a.port));
  const bool ok = service.serve(a.host, a.port);
  g_service = nullptr;
  if (!ok) {
    log_line(fmt::format("cannot bind {}:{}", a.host, a.port));
    return kExitFailure;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Comment evaluation harness"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* c_build = app.add_subcommand("build-tasks", "Split a dataset and write task manifests and key files");
  c_build->add_option("--dataset", build.dataset, "Line-delimited record file")->required()->check(CLI::ExistingFile);
  c_build->add_option("--config", build.config, "Config file")->check(CLI::ExistingFile);
  c_build->add_option("--out", build.out, "Output directory")->required();
  c_build->add_option("--split", build.split, "Which split to build from")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  c_build->add_flag("--serial", build.serial, "Use the serial reference kernels");

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run a model over a task file");
  c_run->add_option("--config", run.config, "Config file")->check(CLI::ExistingFile);
  c_run->add_option("--tasks", run.tasks, "Task manifest")->required()->check(CLI::ExistingFile);
  c_run->add_option("--keys", run.keys, "Key file")->required()->check(CLI::ExistingFile);
  c_run->add_option("--mode", run.mode, "discriminative, plain, five_shot or rot")
      ->check(CLI::IsMember({"discriminative", "plain", "five_shot", "rot"}));
  c_run->add_option("--out", run.out, "Run record path")->required();
  c_run->add_option("--run-id", run.run_id, "Run id");
  auto* o_script = c_run->add_option("--script", run.script, "Scripted transport (JSON)")->check(CLI::ExistingFile);
  c_run->add_option("--replay", run.replay_log, "Answer from a request log")->check(CLI::ExistingFile)->excludes(o_script);
  c_run->add_option("--log", run.log, "Append every exchange to this request log");
  c_run->add_option("--resume", run.resume, "Partial run record to resume")->check(CLI::ExistingFile);
  c_run->add_option("--trace-dir", run.trace_dir, "Where rot mode writes traces");
  c_run->add_flag("--judge", run.judge, "Judge generations");
  c_run->add_flag("--serial", run.serial, "Use the serial reference kernels for scoring");

  BaselineArgs base;
  auto* c_base = app.add_subcommand("baseline", "Random or most-frequent baseline");
  c_base->add_option("--config", base.config, "Config file")->check(CLI::ExistingFile);
  c_base->add_option("--tasks", base.tasks, "Task manifest")->required()->check(CLI::ExistingFile);
  c_base->add_option("--keys", base.keys, "Key file")->required()->check(CLI::ExistingFile);
  c_base->add_option("--kind", base.kind, "random or frequent")->check(CLI::IsMember({"random", "frequent"}));
  c_base->add_option("--trials", base.trials, "Random trials (default from config)");
  c_base->add_option("--out", base.out, "Run record path");
  c_base->add_flag("--serial", base.serial, "Use the serial reference kernels");

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Recompute metrics and aggregates of a run record");
  c_score->add_option("--run", score.run, "Run record")->required()->check(CLI::ExistingFile);
  auto* o_tasks = c_score->add_option("--tasks", score.tasks, "Re-parse answers against this manifest")->check(CLI::ExistingFile);
  c_score->add_option("--keys", score.keys, "Key file")->check(CLI::ExistingFile)->needs(o_tasks);
  c_score->add_option("--out", score.out, "Output path (default: overwrite --run)");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Leaderboard over run records");
  c_report->add_option("runs", report.runs, "Run records");
  c_report->add_option("--human", report.human, "Annotation response store");
  c_report->add_option("--tasks", report.tasks, "Task manifests for --human (repeatable)");
  c_report->add_option("--keys", report.keys, "Key files for --human, one per --tasks");
  c_report->add_option("--out", report.out, "Markdown output (default stdout)");
  c_report->add_option("--json", report.json_out, "Machine-readable table");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Annotation HTTP service");
  c_serve->add_option("--tasks", serve.tasks, "Task manifest")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--keys", serve.keys, "Key file")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--store", serve.store, "Response store (JSONL)")->required();
  c_serve->add_option("--host", serve.host, "Bind address");
  c_serve->add_option("--port", serve.port, "Port");
  c_serve->add_option("--seed", serve.seed, "Assignment seed");
  c_serve->add_option("--preference-runs", serve.preference_runs, "Serve a preference study over these runs");

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("replay", "Re-run a record from its request log and compare aggregates");
  c_replay->add_option("--run", replay.run, "Original run record")->required()->check(CLI::ExistingFile);
  c_replay->add_option("--log", replay.log, "Request log (default: the one recorded)");
  c_replay->add_option("--tasks", replay.tasks, "Override the recorded task manifest");
  c_replay->add_option("--keys", replay.keys, "Override the recorded key file");
  c_replay->add_option("--out", replay.out, "Where to save the replayed record");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_build) return cmd_build_tasks(build);
    if (*c_run) return cmd_run(run);
    if (*c_base) return cmd_baseline(base);
    if (*c_score) return cmd_score(score);
    if (*c_report) return cmd_report(report);
    if (*c_serve) return cmd_serve(serve);
    if (*c_replay) return cmd_replay(replay);
  } catch (const ConfigError& e) {
    log_line(std::string("config error: ") + e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log_line(e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
