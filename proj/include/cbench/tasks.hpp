#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cbench/dataset.hpp"

namespace cbench {

enum class TaskKind { selection, ranking, classification, explanation, creation, preference };

std::string_view to_string(TaskKind k);
std::optional<TaskKind> parse_task_kind(std::string_view s);
bool is_discriminative(TaskKind k);

/// A [1, m, n] composition: one god comment, m high, n ordinary.
struct TaskConfig {
  TaskKind kind = TaskKind::selection;
  int high_count = 1;
  int ordinary_count = 1;
  std::uint64_t seed = 0;

  static TaskConfig selection(int m, int n, std::uint64_t seed = 0) {
    return {TaskKind::selection, m, n, seed};
  }
  static TaskConfig ranking(std::uint64_t seed = 0) { return {TaskKind::ranking, 4, 0, seed}; }
  static TaskConfig classification(std::uint64_t seed = 0) {
    return {TaskKind::classification, 3, 5, seed};
  }
  static TaskConfig explanation() { return {TaskKind::explanation, 0, 0, 0}; }
  static TaskConfig creation() { return {TaskKind::creation, 0, 0, 0}; }

  /// "[1,m,n]"
  std::string label() const;
  /// Throws ConfigError for compositions outside the supported set.
  void validate() const;
};

struct TaskContext {
  std::string title;
  std::string category;
  double duration_s = 0.0;
  std::string ocr_text;
  std::string subtitle_text;
  std::vector<std::string> frame_paths;

  bool operator==(const TaskContext&) const = default;
};

struct TaskOption {
  std::string label;
  std::string comment_id;
  std::string text;

  bool operator==(const TaskOption&) const = default;
};

/// Hidden half of a task. Only the fields for the task's kind are set.
struct AnswerKey {
  std::string correct_label;                 // selection
  std::vector<std::string> reference_order;  // ranking, best first
  std::map<std::string, Tier> tiers;         // classification
  std::vector<ArtTag> gold_tags;             // explanation (sorted)
  std::string gold_explanation;              // explanation
  std::string reference_text;                // creation
  std::map<std::string, std::string> sources;  // preference: label -> source
  /// Comment Art dimensions of the god comment, for per-dimension slices.
  std::vector<Dimension> dimensions;

  bool operator==(const AnswerKey&) const = default;
};

struct FewShotExample {
  std::string video_id;
  std::string comment_id;
  std::string text;
  std::int64_t likes = 0;

  bool operator==(const FewShotExample&) const = default;
};

struct TaskInstance {
  std::string task_id;
  std::string video_id;
  TaskKind kind = TaskKind::selection;
  std::string config;  // "[1,m,n]" for discriminative tasks
  TaskContext context;
  std::vector<TaskOption> options;
  std::vector<FewShotExample> fewshot;
  AnswerKey key;

  bool operator==(const TaskInstance&) const = default;

  /// Model-facing manifest line; never contains the key or source comment ids.
  json to_json() const;
  /// Keyed-file line: {"task_id", "kind", "comment_ids", ...key fields}.
  json key_json() const;
  std::vector<std::string> labels() const;
};

TaskInstance task_from_json(const json& manifest_line);
AnswerKey key_from_json(const json& key_line, TaskKind kind);

/// Raised when a record cannot yield a task (insufficient comments, god
/// comment not top-liked, missing tags). Callers skip and report.
class TaskSkipped : public Error {
 public:
  TaskSkipped(std::string video_id, std::string reason)
      : Error(video_id + ": " + reason), video_id_(std::move(video_id)), reason_(std::move(reason)) {}
  const std::string& video_id() const { return video_id_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string video_id_;
  std::string reason_;
};

std::string option_label(std::size_t index);

TaskContext context_of(const VideoRecord& r);
/// Plain-text description of the video (title, category, duration, OCR,
/// subtitles), used in prompts and as the surrogate when no frames exist.
std::string describe_context(const TaskContext& c);

TaskInstance build_selection(const VideoRecord& record, const TaskConfig& cfg, std::uint64_t seed);
TaskInstance build_ranking(const VideoRecord& record, std::uint64_t seed);
TaskInstance build_classification(const VideoRecord& record, std::uint64_t seed);
TaskInstance build_explanation(const VideoRecord& record);
TaskInstance build_creation(const VideoRecord& record);
/// Dispatches on cfg.kind, using cfg.seed.
TaskInstance build_task(const VideoRecord& record, const TaskConfig& cfg);

struct SkipReport {
  std::string video_id;
  std::string reason;
};

struct TaskBatch {
  std::vector<TaskInstance> tasks;
  std::vector<SkipReport> skipped;
};

enum class FewShotSource { category, tag, all };
std::string_view to_string(FewShotSource s);

struct FewShotSelection {
  std::vector<FewShotExample> examples;
  FewShotSource source = FewShotSource::category;
  /// The sampled candidate videos, in draw order.
  std::vector<std::string> candidate_video_ids;
};

/// Samples 10 training videos sharing the target's category (falling back
/// to tag overlap, then to the whole pool), takes each one's top god
/// comment, orders by length then likes, and keeps the top 5. Comments whose
/// text appears in `exclude_texts` are never candidates. Throws ConfigError
/// when the pool is empty.
FewShotSelection select_few_shot(const VideoRecord& target, const std::vector<VideoRecord>& train,
                                 std::uint64_t seed,
                                 const std::set<std::string>& exclude_texts = {});

/// Attaches exemplars to a task, excluding every option and reference text.
FewShotSource attach_few_shot(TaskInstance& task, const VideoRecord& target,
                              const std::vector<VideoRecord>& train, std::uint64_t seed);

}  // namespace cbench
