#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "cbench/runner.hpp"
#include "cbench/tasks.hpp"

namespace httplib {
class Server;
}

namespace cbench {

/// One submission from the annotation UI. Payload shape depends on kind:
///   selection       {"label": "B"}
///   ranking         {"order": ["C", "A", ...]}
///   classification  {"tiers": {"A": "god", ...}}
///   preference      {"scores": {"A": 4, ...}}   (1..5)
///   explanation     {"tags": [...], "text": "..."}
///   creation        {"text": "..."}
struct AnnotationResponse {
  std::string annotator_id;
  std::string task_id;
  TaskKind kind = TaskKind::selection;
  json payload;
  bool final = true;
  double wall_time_ms = 0.0;
  std::string submitted_at;

  json to_json() const;
  static AnnotationResponse from_json(const json& j);
};

class StoreError : public Error {
 public:
  using Error::Error;
};

/// Append-only JSONL file. Each response is one O_APPEND write, so a crash
/// leaves at most a torn final line, which load() skips.
class ResponseStore {
 public:
  explicit ResponseStore(std::string path);
  void append(const AnnotationResponse& r);
  std::vector<AnnotationResponse> load() const;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Preference-study tasks. Each creation task becomes one task whose options
/// are the reference comment (source "human") and every run's generation for
/// it (source = run_id), in a per-video seeded order. Tasks missing a
/// generation from any run are left out.
std::vector<TaskInstance> build_preference_tasks(const std::vector<TaskInstance>& creation_tasks,
                                                 const std::vector<RunRecord>& runs, std::uint64_t seed);

/// Validates a payload against its task and converts it to an Answer.
/// Throws ConfigError describing the first problem.
Answer answer_from_payload(const TaskInstance& task, const json& payload);

/// Human run record: one entry per annotator and task (latest final response
/// wins). Kind-level metrics are averaged per task first, then across tasks,
/// so heavily annotated tasks do not dominate. Throws on an empty store.
RunRecord merge_human_responses(const std::vector<AnnotationResponse>& responses,
                                const std::vector<TaskInstance>& tasks);

struct HttpReply {
  int status = 200;
  json body;
};

/// Serves tasks to annotators and collects their responses.
///
///   GET  /api/health
///   GET  /api/tasks/next?annotator=ID  next unanswered task, keys stripped
///   POST /api/responses                AnnotationResponse JSON
///   GET  /api/progress?annotator=ID
///   GET  /api/results                  merged human aggregates
///
/// Each annotator sees every task once, in an order seeded by their id.
class AnnotationService {
 public:
  AnnotationService(std::vector<TaskInstance> tasks, ResponseStore& store, std::uint64_t seed);
  ~AnnotationService();

  HttpReply next_task(const std::string& annotator);
  HttpReply submit(const json& body);
  HttpReply progress(const std::string& annotator);
  HttpReply results();

  void mount(httplib::Server& server);
  /// Blocks until stop(). Returns false when the port cannot be bound.
  bool serve(const std::string& host, int port);
  /// Binds an ephemeral port and returns it; call serve_bound() afterwards.
  int bind_any(const std::string& host);
  bool serve_bound();
  void stop();

  const std::vector<std::size_t>& order_for(const std::string& annotator);

 private:
  std::vector<TaskInstance> tasks_;
  std::map<std::string, std::size_t> index_;
  ResponseStore& store_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::map<std::string, std::vector<std::size_t>> orders_;
  std::map<std::string, std::set<std::string>> finished_;  // annotator -> task ids
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cbench
