#include "cbench/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <numeric>

#include <fmt/format.h>

#include "httplib.h"

namespace cbench {

json AnnotationResponse::to_json() const {
  return {{"annotator_id", annotator_id}, {"task_id", task_id},           {"kind", to_string(kind)},
          {"payload", payload},           {"final", final},               {"wall_time_ms", wall_time_ms},
          {"submitted_at", submitted_at}};
}

AnnotationResponse AnnotationResponse::from_json(const json& j) {
  AnnotationResponse r;
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  if (j.contains("kind")) {
    auto kind = parse_task_kind(j["kind"].get<std::string>());
    if (!kind) throw ConfigError("unknown kind " + j["kind"].dump());
    r.kind = *kind;
  }
  r.payload = j.value("payload", json::object());
  r.final = j.value("final", true);
  r.wall_time_ms = j.value("wall_time_ms", 0.0);
  r.submitted_at = j.value("submitted_at", std::string());
  return r;
}

// --- store -------------------------------------------------------------------------

ResponseStore::ResponseStore(std::string path) : path_(std::move(path)) {}

void ResponseStore::append(const AnnotationResponse& r) {
  const std::string line = r.to_json().dump() + "\n";
  const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw StoreError(fmt::format("cannot open {}: {}", path_, std::strerror(errno)));
  const ssize_t n = ::write(fd, line.data(), line.size());
  const int write_errno = errno;
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size())) {
    throw StoreError(fmt::format("short write to {}: {}", path_, n < 0 ? std::strerror(write_errno) : "partial"));
  }
}

std::vector<AnnotationResponse> ResponseStore::load() const {
  std::vector<AnnotationResponse> out;
  if (::access(path_.c_str(), F_OK) != 0) return out;
  for (const auto& line : split_lines(read_file(path_))) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // torn tail
    out.push_back(AnnotationResponse::from_json(j));
  }
  return out;
}

// --- preference tasks ---------------------------------------------------------------

std::vector<TaskInstance> build_preference_tasks(const std::vector<TaskInstance>& creation_tasks,
                                                 const std::vector<RunRecord>& runs, std::uint64_t seed) {
  std::vector<std::map<std::string, std::string>> texts(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& e : runs[r].entries) {
      if (e.kind == TaskKind::creation && e.answer.parsed) texts[r][e.task_id] = e.answer.text;
    }
  }
  std::vector<TaskInstance> out;
  for (const auto& c : creation_tasks) {
    if (c.kind != TaskKind::creation) throw ConfigError("preference tasks need creation tasks, got " + c.task_id);
    std::vector<std::pair<std::string, std::string>> sources = {{"human", c.key.reference_text}};
    bool complete = true;
    for (std::size_t r = 0; r < runs.size() && complete; ++r) {
      auto it = texts[r].find(c.task_id);
      complete = it != texts[r].end();
      if (complete) sources.emplace_back(runs[r].run_id, it->second);
    }
    if (!complete) continue;
    SeededRng rng(derive_seed(seed, "preference:" + c.video_id));
    rng.shuffle(sources);

    TaskInstance t;
    t.task_id = "preference:" + c.video_id;
    t.video_id = c.video_id;
    t.kind = TaskKind::preference;
    t.context = c.context;
    t.key.dimensions = c.key.dimensions;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const std::string label = option_label(i);
      t.options.push_back({label, "", sources[i].second});
      t.key.sources[label] = sources[i].first;
    }
    out.push_back(std::move(t));
  }
  return out;
}

// --- payloads ------------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::set<std::string> label_set(const TaskInstance& t) {
  const auto ls = t.labels();
  return {ls.begin(), ls.end()};
}

}  // namespace

Answer answer_from_payload(const TaskInstance& task, const json& payload) {
  require(payload.is_object(), "payload must be an object");
  const auto labels = label_set(task);
  Answer a;
  a.parsed = true;
  switch (task.kind) {
    case TaskKind::selection: {
      require(payload.contains("label") && payload["label"].is_string(), "selection payload needs a string 'label'");
      const auto l = payload["label"].get<std::string>();
      require(labels.count(l) > 0, "unknown label '" + l + "'");
      a.labels = {l};
      break;
    }
    case TaskKind::ranking: {
      require(payload.contains("order") && payload["order"].is_array(), "ranking payload needs an 'order' array");
      require(payload["order"].size() == labels.size(),
              fmt::format("order must list all {} labels, got {}", labels.size(), payload["order"].size()));
      std::set<std::string> seen;
      for (const auto& l : payload["order"]) {
        require(l.is_string() && labels.count(l.get<std::string>()), "order has an unknown label " + l.dump());
        require(seen.insert(l.get<std::string>()).second, "order repeats " + l.dump());
        a.labels.push_back(l.get<std::string>());
      }
      break;
    }
    case TaskKind::classification: {
      require(payload.contains("tiers") && payload["tiers"].is_object(), "classification payload needs a 'tiers' object");
      for (const auto& [l, t] : payload["tiers"].items()) {
        require(labels.count(l) > 0, "unknown label '" + l + "'");
        auto tier = t.is_string() ? parse_tier(t.get<std::string>()) : std::nullopt;
        require(tier.has_value(), "bad tier for " + l + ": " + t.dump());
        a.tiers[l] = *tier;
      }
      require(a.tiers.size() == labels.size(), "every label needs a tier");
      break;
    }
    case TaskKind::preference: {
      require(payload.contains("scores") && payload["scores"].is_object(), "preference payload needs a 'scores' object");
      for (const auto& [l, s] : payload["scores"].items()) {
        require(labels.count(l) > 0, "unknown label '" + l + "'");
        require(s.is_number_integer() && s.get<int>() >= 1 && s.get<int>() <= 5, "score for " + l + " must be 1..5");
        a.scores[l] = s.get<int>();
      }
      require(a.scores.size() == labels.size(), "every label needs a score");
      break;
    }
    case TaskKind::explanation:
      a.tags = payload.value("tags", std::vector<std::string>{});
      a.text = payload.value("text", std::string());
      require(!a.tags.empty() || !trim(a.text).empty(), "explanation payload needs tags or text");
      break;
    case TaskKind::creation:
      require(payload.contains("text") && payload["text"].is_string() && !trim(payload["text"].get<std::string>()).empty(),
              "creation payload needs non-empty 'text'");
      a.text = payload["text"].get<std::string>();
      break;
  }
  return a;
}

// --- merging --------------------------------------------------------------------------

RunRecord merge_human_responses(const std::vector<AnnotationResponse>& responses,
                                const std::vector<TaskInstance>& tasks) {
  if (responses.empty()) throw Error("no annotation responses to merge");
  std::map<std::string, const TaskInstance*> by_id;
  for (const auto& t : tasks) by_id[t.task_id] = &t;

  // Latest final response per (task, annotator); drafts are ignored.
  std::map<std::pair<std::string, std::string>, const AnnotationResponse*> latest;
  for (const auto& r : responses) {
    if (r.final && by_id.count(r.task_id)) latest[{r.task_id, r.annotator_id}] = &r;
  }

  RunRecord record;
  record.run_id = "human";
  record.mode = "human";
  record.model = "human";
  std::set<std::string> annotators;
  for (const auto& [key, r] : latest) {
    const TaskInstance& t = *by_id[key.first];
    RunEntry e;
    e.task_id = t.task_id;
    e.video_id = t.video_id;
    e.kind = t.kind;
    e.annotator = r->annotator_id;
    e.dimensions = t.key.dimensions;
    e.latency_ms = r->wall_time_ms;
    e.raw_text = r->payload.dump();
    annotators.insert(r->annotator_id);
    try {
      e.answer = answer_from_payload(t, r->payload);
    } catch (const ConfigError& err) {
      e.error = err.what();
    }
    if (is_discriminative(t.kind)) {
      e.metrics = score_discriminative(t, e.answer);
    } else if (t.kind == TaskKind::preference) {
      for (const auto& [label, score] : e.answer.scores) {
        auto src = t.key.sources.find(label);
        if (src != t.key.sources.end()) e.metrics["pref:" + src->second] = score;
      }
    }
    record.entries.push_back(std::move(e));
  }

  // Task-weighted pooling: collapse annotators per task, then aggregate.
  RunRecord pooled;
  std::map<std::string, std::vector<const RunEntry*>> per_task;
  for (const auto& e : record.entries) per_task[e.task_id].push_back(&e);
  for (const auto& [id, es] : per_task) {
    RunEntry p = *es.front();
    p.annotator.clear();
    std::map<std::string, std::pair<double, std::size_t>> acc;
    std::size_t parsed = 0;
    for (const RunEntry* e : es) {
      parsed += e->answer.parsed ? 1 : 0;
      for (const auto& [k, v] : e->metrics) {
        acc[k].first += v;
        ++acc[k].second;
      }
    }
    p.metrics.clear();
    for (const auto& [k, sn] : acc) p.metrics[k] = sn.first / static_cast<double>(sn.second);
    p.answer.parsed = parsed > 0;
    pooled.entries.push_back(std::move(p));
  }
  json full = compute_aggregates(record);
  const json pooled_agg = compute_aggregates(pooled);
  full["kinds"] = pooled_agg["kinds"];
  full["annotators"] = annotators.size();
  full["responses"] = record.entries.size();
  record.aggregates = full;
  record.config = {{"pooling", "task_weighted"}};
  return record;
}

// --- service --------------------------------------------------------------------------

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

HttpReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

}  // namespace

AnnotationService::AnnotationService(std::vector<TaskInstance> tasks, ResponseStore& store, std::uint64_t seed)
    : tasks_(std::move(tasks)), store_(store), seed_(seed) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (!index_.emplace(tasks_[i].task_id, i).second) throw ConfigError("duplicate task id " + tasks_[i].task_id);
  }
  for (const auto& r : store_.load()) {
    if (r.final && index_.count(r.task_id)) finished_[r.annotator_id].insert(r.task_id);
  }
}

AnnotationService::~AnnotationService() { stop(); }

const std::vector<std::size_t>& AnnotationService::order_for(const std::string& annotator) {
  auto it = orders_.find(annotator);
  if (it != orders_.end()) return it->second;
  std::vector<std::size_t> order(tasks_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(derive_seed(seed_, "annotator:" + annotator));
  rng.shuffle(order);
  return orders_.emplace(annotator, std::move(order)).first->second;
}

HttpReply AnnotationService::next_task(const std::string& annotator) {
  if (trim(annotator).empty()) return error_reply(400, "annotator is required");
  std::lock_guard lock(mu_);
  const auto& done = finished_[annotator];
  const auto& order = order_for(annotator);
  for (std::size_t i : order) {
    const TaskInstance& t = tasks_[i];
    if (done.count(t.task_id)) continue;
    return {200, {{"done", false}, {"task", t.to_json()}, {"remaining", tasks_.size() - done.size()}}};
  }
  return {200, {{"done", true}, {"task", nullptr}, {"remaining", 0}}};
}

HttpReply AnnotationService::submit(const json& body) {
  AnnotationResponse r;
  try {
    if (!body.is_object()) return error_reply(400, "body must be a JSON object");
    r = AnnotationResponse::from_json(body);
  } catch (const std::exception& e) {
    return error_reply(400, std::string("malformed response: ") + e.what());
  }
  if (trim(r.annotator_id).empty()) return error_reply(400, "annotator_id is required");
  auto it = index_.find(r.task_id);
  if (it == index_.end()) return error_reply(404, "unknown task " + r.task_id);
  const TaskInstance& t = tasks_[it->second];
  if (body.contains("kind") && r.kind != t.kind) {
    return error_reply(400, fmt::format("task {} is {}, not {}", t.task_id, to_string(t.kind), to_string(r.kind)));
  }
  r.kind = t.kind;
  try {
    answer_from_payload(t, r.payload);
  } catch (const ConfigError& e) {
    return error_reply(400, e.what());
  }
  if (r.submitted_at.empty()) r.submitted_at = now_iso8601();

  std::lock_guard lock(mu_);
  auto& done = finished_[r.annotator_id];
  if (done.count(r.task_id)) return error_reply(409, "final response already recorded for " + r.task_id);
  try {
    store_.append(r);
  } catch (const StoreError& e) {
    return error_reply(503, e.what());
  }
  if (r.final) done.insert(r.task_id);
  return {200, {{"accepted", true}, {"task_id", r.task_id}, {"final", r.final}}};
}

HttpReply AnnotationService::progress(const std::string& annotator) {
  if (trim(annotator).empty()) return error_reply(400, "annotator is required");
  std::lock_guard lock(mu_);
  auto it = finished_.find(annotator);
  const std::size_t completed = it == finished_.end() ? 0 : it->second.size();
  return {200, {{"annotator", annotator}, {"completed", completed}, {"total", tasks_.size()}}};
}

HttpReply AnnotationService::results() {
  std::vector<AnnotationResponse> responses;
  try {
    responses = store_.load();
  } catch (const std::exception& e) {
    return error_reply(503, e.what());
  }
  if (responses.empty()) return {200, {{"responses", 0}, {"aggregates", json::object()}}};
  const RunRecord merged = merge_human_responses(responses, tasks_);
  return {200, {{"responses", responses.size()}, {"aggregates", merged.aggregates}}};
}

void AnnotationService::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(reply.body.dump(), "application/json");
  };
  server.Get("/api/health", [send](const httplib::Request&, httplib::Response& res) {
    send(res, {200, {{"status", "ok"}}});
  });
  server.Get("/api/tasks/next", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, next_task(req.get_param_value("annotator")));
  });
  server.Get("/api/progress", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, progress(req.get_param_value("annotator")));
  });
  server.Get("/api/results", [this, send](const httplib::Request&, httplib::Response& res) { send(res, results()); });
  server.Post("/api/responses", [this, send](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body, nullptr, false);
    send(res, body.is_discarded() ? error_reply(400, "body is not valid JSON") : submit(body));
  });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

bool AnnotationService::serve(const std::string& host, int port) {
  if (!server_) {
    server_ = std::make_unique<httplib::Server>();
    mount(*server_);
  }
  return server_->listen(host, port);
}

int AnnotationService::bind_any(const std::string& host) {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  return server_->bind_to_any_port(host);
}

bool AnnotationService::serve_bound() { return server_ && server_->listen_after_bind(); }

void AnnotationService::stop() {
  if (server_) server_->stop();
}

}  // namespace cbench
