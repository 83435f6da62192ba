#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cbench/answer.hpp"
#include "cbench/gateway.hpp"
#include "cbench/judge.hpp"
#include "cbench/prompts.hpp"
#include "cbench/rot.hpp"
#include "cbench/tasks.hpp"

namespace cbench {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TaskSpec {
  TaskKind kind = TaskKind::selection;
  int m = 1;
  int n = 1;

  TaskConfig to_config(std::uint64_t seed) const;
};

struct Config {
  std::map<std::string, EndpointConfig> endpoints;
  std::string model_endpoint;
  std::string judge_endpoint;
  std::optional<EndpointConfig> embedding;

  std::uint64_t split_seed = 7;
  std::uint64_t task_seed = 13;
  std::uint64_t fewshot_seed = 5;
  std::uint64_t baseline_seed = 42;
  int baseline_trials = 5;

  std::vector<TaskSpec> tasks;
  std::string prompt_pack;  // directory; empty = built-in
  int concurrency = 4;
  RetryPolicy retry;
  FramePolicy frame_policy = FramePolicy::dynamic;
  double discriminative_temperature = 0.0;
  double generation_temperature = 0.8;

  bool judge_enabled = false;
  judge::Options judge;
  bool online_entities = false;
  rot::Params rot;

  static Config from_json(const json& j);
  static Config load(const std::string& path);
  json to_json() const;
  const EndpointConfig& endpoint(const std::string& name) const;
  PromptPack prompts() const;
};

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunEntry {
  std::string task_id;
  std::string video_id;
  TaskKind kind = TaskKind::selection;
  int trial = 0;          // baselines
  std::string annotator;  // human responses
  std::string raw_text;
  Answer answer;
  double latency_ms = 0.0;
  int attempts = 0;
  std::map<std::string, double> metrics;
  std::vector<Dimension> dimensions;
  std::vector<std::string> generated_entities;
  std::vector<std::string> reference_entities;
  std::string trace_file;  // rot mode
  json judge;              // null when not judged
  std::string error;

  json to_json() const;
  static RunEntry from_json(const json& j);
};

struct RunRecord {
  std::string run_id;
  std::string mode;  // discriminative, plain, five_shot, rot, baseline_random, baseline_frequent, human
  std::string model;
  json config;
  std::vector<RunEntry> entries;
  json aggregates;
  bool baseline = false;
  bool complete = true;
  std::string abort_reason;
  std::size_t gateway_calls = 0;

  json to_json() const;
  static RunRecord from_json(const json& j);
  void save(const std::string& path) const;
  static RunRecord load(const std::string& path);
};

/// Aggregates from entries alone:
///   kinds.<kind>.{count, unparsed, metrics, by_dimension, trials, dist_1}
///   by_annotator.<id>.<kind>.metrics            (human records)
///   preference.{mean_score, shares}             (preference responses)
/// Means are plain fractions; reports scale them to percentages.
json compute_aggregates(const RunRecord& record);

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Raised when the gateway gives up mid-run. The partial record is attached
/// (and saved first when RunOptions::record_path is set).
class RunAborted : public Error {
 public:
  RunAborted(const std::string& message, RunRecord partial) : Error(message), partial_(std::move(partial)) {}
  const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

struct RunOptions {
  std::string run_id = "run";
  std::string model_id;
  int concurrency = 4;
  FramePolicy frame_policy = FramePolicy::dynamic;
  double temperature = 0.0;
  int max_tokens = 1024;
  json config_snapshot;
  /// Completed entries of an earlier partial run; their tasks are skipped.
  const RunRecord* resume = nullptr;
  /// Saved on completion and on abort when non-empty.
  std::string record_path;
  /// RoT traces go to <trace_dir>/<task>.json when non-empty.
  std::string trace_dir;
  bool use_parallel_kernels = true;
};

/// Loads a manifest and joins each line with its key.
std::vector<TaskInstance> load_tasks(const std::string& manifest_path, const std::string& keys_path);
void save_tasks(const std::vector<TaskInstance>& tasks, const std::string& manifest_path,
                const std::string& keys_path);

/// The request a discriminative task sends: frames (or the text surrogate),
/// then the task prompt, then the labelled comments.
ModelRequest discriminative_request(const TaskInstance& task, const PromptPack& prompts, const RunOptions& options);

RunRecord run_discriminative(const std::vector<TaskInstance>& tasks, Gateway& gateway, const PromptPack& prompts,
                             const RunOptions& options);

enum class GenerationMode { plain, five_shot, rot };
std::string_view to_string(GenerationMode m);
std::optional<GenerationMode> parse_generation_mode(std::string_view s);

struct GenerationOptions {
  GenerationMode mode = GenerationMode::plain;
  rot::Params rot;
  /// Scores creations and explanations when set.
  judge::Judge* judge = nullptr;
  /// Online entity extraction through the judge; offline rules otherwise.
  bool online_entities = false;
};

RunRecord run_generative(const std::vector<TaskInstance>& tasks, Gateway& gateway, const PromptPack& prompts,
                         const RunOptions& options, const GenerationOptions& generation);

/// Uniform random answers, `trials` times over; never touches a gateway.
RunRecord baseline_random(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed,
                          bool use_parallel_kernels = true);

/// Predicts, per task kind, the most common key in the task set (ties: the
/// lexicographically smallest serialized key).
RunRecord baseline_frequent(const std::vector<TaskInstance>& tasks);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct Report {
  std::string markdown;
  json data;
};

/// One row per record with a fixed column set; missing cells read "n/a".
/// Human records appear as "Human".
Report build_report(const std::vector<RunRecord>& records);

}  // namespace cbench
