#include "cbench/runner.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "cbench/kernels.hpp"
#include "cbench/metrics.hpp"

namespace cbench {

// --- configuration -----------------------------------------------------------

TaskConfig TaskSpec::to_config(std::uint64_t seed) const {
  switch (kind) {
    case TaskKind::selection: return TaskConfig::selection(m, n, seed);
    case TaskKind::ranking: return TaskConfig::ranking(seed);
    case TaskKind::classification: return TaskConfig::classification(seed);
    case TaskKind::explanation: return TaskConfig::explanation();
    case TaskKind::creation: return TaskConfig::creation();
    case TaskKind::preference: break;
  }
  throw ConfigError("preference tasks are not built from records");
}

Config Config::from_json(const json& j) {
  Config c;
  const json endpoints = j.value("endpoints", json::object());
  for (const auto& [name, e] : endpoints.items()) {
    c.endpoints.emplace(name, EndpointConfig::from_json(name, e));
  }
  c.model_endpoint = j.value("model_endpoint", std::string());
  c.judge_endpoint = j.value("judge_endpoint", c.model_endpoint);
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    c.embedding = EndpointConfig::from_json("embedding", j["embedding"]);
  }

  const json seeds = j.value("seeds", json::object());
  c.split_seed = seeds.value("split", c.split_seed);
  c.task_seed = seeds.value("tasks", c.task_seed);
  c.fewshot_seed = seeds.value("fewshot", c.fewshot_seed);
  c.baseline_seed = seeds.value("baseline", c.baseline_seed);
  c.baseline_trials = j.value("baseline_trials", c.baseline_trials);

  for (const auto& t : j.value("tasks", json::array())) {
    TaskSpec s;
    auto kind = parse_task_kind(t.at("kind").get<std::string>());
    if (!kind) throw ConfigError("unknown task kind " + t.at("kind").dump());
    s.kind = *kind;
    s.m = t.value("m", s.kind == TaskKind::ranking ? 4 : s.kind == TaskKind::classification ? 3 : 1);
    s.n = t.value("n", s.kind == TaskKind::ranking ? 0 : s.kind == TaskKind::classification ? 5 : 1);
    s.to_config(0).validate();
    c.tasks.push_back(s);
  }

  c.prompt_pack = j.value("prompt_pack", std::string());
  c.concurrency = j.value("concurrency", c.concurrency);
  if (c.concurrency < 1) throw ConfigError("concurrency must be >= 1");

  const json retry = j.value("retry", json::object());
  c.retry.max_attempts = retry.value("max_attempts", c.retry.max_attempts);
  c.retry.base_delay_s = retry.value("base_delay_s", c.retry.base_delay_s);
  c.retry.factor = retry.value("factor", c.retry.factor);
  c.retry.jitter = retry.value("jitter", c.retry.jitter);
  c.retry.jitter_seed = retry.value("jitter_seed", c.retry.jitter_seed);
  if (c.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");

  if (j.contains("frame_policy")) {
    auto p = parse_frame_policy(j["frame_policy"].get<std::string>());
    if (!p) throw ConfigError("unknown frame_policy " + j["frame_policy"].dump());
    c.frame_policy = *p;
  }
  const json temp = j.value("temperature", json::object());
  c.discriminative_temperature = temp.value("discriminative", c.discriminative_temperature);
  c.generation_temperature = temp.value("generation", c.generation_temperature);

  const json jd = j.value("judge", json::object());
  c.judge_enabled = jd.value("enabled", false);
  c.judge.retries = jd.value("retries", c.judge.retries);
  c.judge.temperature = jd.value("temperature", c.judge.temperature);
  c.online_entities = jd.value("online_entities", false);

  const json rot = j.value("rot", json::object());
  c.rot.k = rot.value("k", c.rot.k);
  if (rot.contains("m") && !rot["m"].is_null()) c.rot.m = rot["m"].get<int>();
  c.rot.retries = rot.value("retries", c.rot.retries);
  c.rot.max_chars = rot.value("max_chars", c.rot.max_chars);
  c.rot.dimensions = rot.value("dimensions", c.rot.dimensions);
  c.rot.temperature = rot.value("temperature", c.generation_temperature);
  c.rot.frame_policy = c.frame_policy;
  if (c.rot.k < 2) throw ConfigError("rot.k must be >= 2");
  if (c.rot.m && *c.rot.m < 1) throw ConfigError("rot.m must be >= 1");

  if (!c.model_endpoint.empty() && !c.endpoints.count(c.model_endpoint)) {
    throw ConfigError("model_endpoint '" + c.model_endpoint + "' is not among the endpoints");
  }
  if (!c.judge_endpoint.empty() && !c.endpoints.count(c.judge_endpoint)) {
    throw ConfigError("judge_endpoint '" + c.judge_endpoint + "' is not among the endpoints");
  }
  return c;
}

Config Config::load(const std::string& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  return from_json(j);
}

json Config::to_json() const {
  json eps = json::object();
  for (const auto& [name, e] : endpoints) {
    eps[name] = {{"base_url", e.base_url},
                 {"model", e.model_id},
                 {"api_key_env", e.api_key_env},
                 {"dialect", e.dialect == Dialect::openai ? "openai" : "anthropic"},
                 {"requests_per_minute", e.requests_per_minute},
                 {"max_in_flight", e.max_in_flight},
                 {"timeout_s", e.timeout_s}};
  }
  json tasks_j = json::array();
  for (const auto& t : tasks) tasks_j.push_back({{"kind", to_string(t.kind)}, {"m", t.m}, {"n", t.n}});
  json j = {{"endpoints", eps},
            {"model_endpoint", model_endpoint},
            {"judge_endpoint", judge_endpoint},
            {"seeds", {{"split", split_seed}, {"tasks", task_seed}, {"fewshot", fewshot_seed}, {"baseline", baseline_seed}}},
            {"baseline_trials", baseline_trials},
            {"tasks", tasks_j},
            {"prompt_pack", prompt_pack},
            {"prompt_pack_hash", prompts().hash()},
            {"concurrency", concurrency},
            {"retry",
             {{"max_attempts", retry.max_attempts},
              {"base_delay_s", retry.base_delay_s},
              {"factor", retry.factor},
              {"jitter", retry.jitter},
              {"jitter_seed", retry.jitter_seed}}},
            {"frame_policy", frame_policy == FramePolicy::dynamic ? "dynamic" : "fixed_50"},
            {"temperature", {{"discriminative", discriminative_temperature}, {"generation", generation_temperature}}},
            {"judge", {{"enabled", judge_enabled}, {"retries", judge.retries}, {"temperature", judge.temperature},
                       {"online_entities", online_entities}}},
            {"rot", {{"k", rot.k}, {"m", rot.m ? json(*rot.m) : json(nullptr)}, {"retries", rot.retries},
                     {"max_chars", rot.max_chars}, {"dimensions", rot.dimensions}, {"temperature", rot.temperature}}}};
  if (embedding) {
    j["embedding"] = {{"base_url", embedding->base_url}, {"model", embedding->model_id}, {"api_key_env", embedding->api_key_env}};
  }
  return j;
}

const EndpointConfig& Config::endpoint(const std::string& name) const {
  auto it = endpoints.find(name);
  if (it == endpoints.end()) throw ConfigError("no endpoint named '" + name + "'");
  return it->second;
}

PromptPack Config::prompts() const {
  return prompt_pack.empty() ? PromptPack::builtin() : PromptPack::from_directory(prompt_pack);
}

// --- records -------------------------------------------------------------------

json RunEntry::to_json() const {
  json dims = json::array();
  for (Dimension d : dimensions) dims.push_back(to_string(d));
  json j = {{"task_id", task_id},   {"video_id", video_id}, {"kind", to_string(kind)},
            {"raw_text", raw_text}, {"answer", answer.to_json()}, {"latency_ms", latency_ms},
            {"attempts", attempts}, {"metrics", metrics},   {"dimensions", dims}};
  if (trial != 0) j["trial"] = trial;
  if (!annotator.empty()) j["annotator"] = annotator;
  if (!generated_entities.empty() || !reference_entities.empty()) {
    j["generated_entities"] = generated_entities;
    j["reference_entities"] = reference_entities;
  }
  if (!trace_file.empty()) j["trace_file"] = trace_file;
  if (!judge.is_null()) j["judge"] = judge;
  if (!error.empty()) j["error"] = error;
  return j;
}

RunEntry RunEntry::from_json(const json& j) {
  RunEntry e;
  e.task_id = j.at("task_id").get<std::string>();
  e.video_id = j.value("video_id", std::string());
  auto kind = parse_task_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error("run entry with unknown kind " + j.at("kind").dump());
  e.kind = *kind;
  e.trial = j.value("trial", 0);
  e.annotator = j.value("annotator", std::string());
  e.raw_text = j.value("raw_text", std::string());
  e.answer = Answer::from_json(j.value("answer", json::object()));
  e.latency_ms = j.value("latency_ms", 0.0);
  e.attempts = j.value("attempts", 0);
  e.metrics = j.value("metrics", std::map<std::string, double>{});
  for (const auto& d : j.value("dimensions", std::vector<std::string>{})) {
    if (auto dim = parse_dimension(d)) e.dimensions.push_back(*dim);
  }
  e.generated_entities = j.value("generated_entities", std::vector<std::string>{});
  e.reference_entities = j.value("reference_entities", std::vector<std::string>{});
  e.trace_file = j.value("trace_file", std::string());
  e.judge = j.value("judge", json());
  e.error = j.value("error", std::string());
  return e;
}

json RunRecord::to_json() const {
  json es = json::array();
  for (const auto& e : entries) es.push_back(e.to_json());
  return {{"run_id", run_id},         {"mode", mode},       {"model", model},
          {"config", config},         {"entries", es},      {"aggregates", aggregates},
          {"baseline", baseline},     {"complete", complete}, {"abort_reason", abort_reason},
          {"gateway_calls", gateway_calls}};
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.mode = j.value("mode", std::string());
  r.model = j.value("model", std::string());
  r.config = j.value("config", json::object());
  for (const auto& e : j.value("entries", json::array())) r.entries.push_back(RunEntry::from_json(e));
  r.aggregates = j.value("aggregates", json::object());
  r.baseline = j.value("baseline", false);
  r.complete = j.value("complete", true);
  r.abort_reason = j.value("abort_reason", std::string());
  r.gateway_calls = j.value("gateway_calls", std::size_t{0});
  return r;
}

void RunRecord::save(const std::string& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

RunRecord RunRecord::load(const std::string& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error("run record " + path + " is not valid JSON");
  return from_json(j);
}

namespace {

// Mean of each metric over the entries that carry it, summed in entry order.
json metric_means(const std::vector<const RunEntry*>& entries) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const RunEntry* e : entries) {
    for (const auto& [k, v] : e->metrics) {
      auto& [sum, n] = acc[k];
      sum += v;
      ++n;
    }
  }
  json out = json::object();
  for (const auto& [k, sn] : acc) out[k] = sn.first / static_cast<double>(sn.second);
  return out;
}

json kind_aggregate(const std::vector<const RunEntry*>& entries) {
  json k;
  int max_trial = 0;
  std::size_t unparsed = 0;
  for (const RunEntry* e : entries) {
    max_trial = std::max(max_trial, e->trial);
    unparsed += e->answer.parsed ? 0 : 1;
  }
  k["count"] = entries.size();
  k["unparsed"] = unparsed;

  if (max_trial > 0) {
    std::vector<std::vector<const RunEntry*>> per_trial(static_cast<std::size_t>(max_trial) + 1);
    for (const RunEntry* e : entries) per_trial[static_cast<std::size_t>(e->trial)].push_back(e);
    json trials = json::array();
    std::map<std::string, double> sums;
    for (const auto& t : per_trial) {
      json m = metric_means(t);
      for (const auto& [name, v] : m.items()) sums[name] += v.get<double>();
      trials.push_back(m);
    }
    json means = json::object();
    for (const auto& [name, s] : sums) means[name] = s / static_cast<double>(per_trial.size());
    k["metrics"] = means;
    k["trials"] = trials;
  } else {
    k["metrics"] = metric_means(entries);
  }

  json by_dim = json::object();
  for (Dimension d : {Dimension::RT, Dimension::DA, Dimension::WT, Dimension::IV, Dimension::ER}) {
    std::vector<const RunEntry*> slice;
    for (const RunEntry* e : entries) {
      if (std::find(e->dimensions.begin(), e->dimensions.end(), d) != e->dimensions.end()) slice.push_back(e);
    }
    if (!slice.empty()) by_dim[std::string(to_string(d))] = {{"count", slice.size()}, {"metrics", metric_means(slice)}};
  }
  k["by_dimension"] = by_dim;

  std::vector<metrics::Tokens> texts;
  for (const RunEntry* e : entries) {
    if ((e->kind == TaskKind::creation) && e->answer.parsed) texts.push_back(metrics::tokenize(e->answer.text));
  }
  std::size_t tokens = 0;
  for (const auto& t : texts) tokens += t.size();
  if (tokens > 0) k["dist_1"] = metrics::dist_1(texts);
  return k;
}

}  // namespace

json compute_aggregates(const RunRecord& record) {
  std::map<TaskKind, std::vector<const RunEntry*>> by_kind;
  std::map<std::string, std::map<TaskKind, std::vector<const RunEntry*>>> by_annotator;
  for (const auto& e : record.entries) {
    by_kind[e.kind].push_back(&e);
    if (!e.annotator.empty()) by_annotator[e.annotator][e.kind].push_back(&e);
  }
  json out;
  out["kinds"] = json::object();
  for (const auto& [kind, es] : by_kind) {
    if (kind != TaskKind::preference) out["kinds"][std::string(to_string(kind))] = kind_aggregate(es);
  }

  if (!by_annotator.empty()) {
    json ann = json::object();
    for (const auto& [id, kinds] : by_annotator) {
      for (const auto& [kind, es] : kinds) {
        if (kind == TaskKind::preference) continue;
        ann[id][std::string(to_string(kind))] = {{"count", es.size()}, {"metrics", metric_means(es)}};
      }
    }
    out["by_annotator"] = ann;
  }

  if (by_kind.count(TaskKind::preference)) {
    std::map<std::string, std::pair<double, std::size_t>> per_source;
    double total = 0;
    for (const RunEntry* e : by_kind[TaskKind::preference]) {
      for (const auto& [k, v] : e->metrics) {
        if (k.rfind("pref:", 0) != 0) continue;
        auto& [sum, n] = per_source[k.substr(5)];
        sum += v;
        ++n;
        total += v;
      }
    }
    json mean = json::object(), shares = json::object();
    for (const auto& [src, sn] : per_source) {
      mean[src] = sn.first / static_cast<double>(sn.second);
      shares[src] = total > 0 ? sn.first / total : 0.0;
    }
    out["preference"] = {{"responses", by_kind[TaskKind::preference].size()}, {"mean_score", mean}, {"shares", shares}};
  }
  return out;
}

// --- task files ----------------------------------------------------------------

std::vector<TaskInstance> load_tasks(const std::string& manifest_path, const std::string& keys_path) {
  std::map<std::string, json> keys;
  for (const auto& line : split_lines(read_file(keys_path))) {
    if (trim(line).empty()) continue;
    json k = json::parse(line);
    keys[k.at("task_id").get<std::string>()] = k;
  }
  std::vector<TaskInstance> tasks;
  for (const auto& line : split_lines(read_file(manifest_path))) {
    if (trim(line).empty()) continue;
    TaskInstance t = task_from_json(json::parse(line));
    auto it = keys.find(t.task_id);
    if (it == keys.end()) throw Error("no key for task " + t.task_id + " in " + keys_path);
    t.key = key_from_json(it->second, t.kind);
    const json ids = it->second.value("comment_ids", json::object());
    for (auto& o : t.options) o.comment_id = ids.value(o.label, std::string());
    tasks.push_back(std::move(t));
  }
  return tasks;
}

void save_tasks(const std::vector<TaskInstance>& tasks, const std::string& manifest_path, const std::string& keys_path) {
  std::string manifest, keys;
  for (const auto& t : tasks) {
    manifest += t.to_json().dump() + "\n";
    keys += t.key_json().dump() + "\n";
  }
  write_file_atomic(manifest_path, manifest);
  write_file_atomic(keys_path, keys);
}

// --- runs -------------------------------------------------------------------------

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads until `stop` is set.
template <typename Fn>
void run_pool(std::size_t n, int workers, std::atomic<bool>& stop, Fn fn) {
  std::atomic<std::size_t> next{0};
  const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
}

std::string comments_block(const TaskInstance& t) {
  std::string out;
  for (const auto& o : t.options) out += o.label + ": " + o.text + "\n";
  if (!out.empty()) out.pop_back();
  return out;
}

std::string all_subcategories() {
  std::vector<std::string> names;
  for (Dimension d : {Dimension::RT, Dimension::DA, Dimension::WT, Dimension::IV, Dimension::ER}) {
    for (const auto& s : Taxonomy::builtin().subcategories(d)) names.push_back(s);
  }
  return join(names, ", ");
}

RunEntry entry_for(const TaskInstance& t) {
  RunEntry e;
  e.task_id = t.task_id;
  e.video_id = t.video_id;
  e.kind = t.kind;
  e.dimensions = t.key.dimensions;
  return e;
}

std::map<std::string, const RunEntry*> resumable(const RunOptions& options) {
  std::map<std::string, const RunEntry*> done;
  if (options.resume) {
    for (const auto& e : options.resume->entries) done[e.task_id] = &e;
  }
  return done;
}

bool aborts_run(const GatewayError& e) { return e.kind() != GatewayError::Kind::content_policy; }

struct Collector {
  std::vector<std::optional<RunEntry>> slots;
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::string abort_reason;

  explicit Collector(std::size_t n) : slots(n) {}
  void abort(const std::string& why) {
    std::lock_guard lock(mu);
    if (abort_reason.empty()) abort_reason = why;
    stop = true;
  }
};

RunRecord finish_record(RunRecord record, Collector& c, const RunOptions& options) {
  for (auto& s : c.slots) {
    if (s) record.entries.push_back(std::move(*s));
  }
  record.complete = c.abort_reason.empty();
  record.abort_reason = c.abort_reason;
  record.aggregates = compute_aggregates(record);
  if (!options.record_path.empty()) record.save(options.record_path);
  if (!record.complete) throw RunAborted("run " + record.run_id + " aborted: " + record.abort_reason, record);
  return record;
}

std::string safe_file_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

}  // namespace

ModelRequest discriminative_request(const TaskInstance& task, const PromptPack& prompts, const RunOptions& options) {
  if (!is_discriminative(task.kind)) throw ConfigError("not a discriminative task: " + task.task_id);
  const FramePlan plan =
      frame_plan(task.context.duration_s, static_cast<int>(task.context.frame_paths.size()), options.frame_policy);
  ModelRequest req = assemble_request(options.model_id, task.context.frame_paths, plan, describe_context(task.context),
                                      prompts.get("task_" + std::string(to_string(task.kind))), comments_block(task));
  req.temperature = options.temperature;
  req.max_tokens = options.max_tokens;
  req.metadata["phase"] = "task." + std::string(to_string(task.kind));
  req.metadata["task_id"] = task.task_id;
  return req;
}

RunRecord run_discriminative(const std::vector<TaskInstance>& tasks, Gateway& gateway, const PromptPack& prompts,
                             const RunOptions& options) {
  for (const auto& t : tasks) {
    if (!is_discriminative(t.kind)) throw ConfigError("run_discriminative got a " + std::string(to_string(t.kind)) + " task");
    if (t.kind != tasks.front().kind) throw ConfigError("run_discriminative needs tasks of one kind");
  }
  RunRecord record;
  record.run_id = options.run_id;
  record.mode = "discriminative";
  record.model = options.model_id;
  record.config = options.config_snapshot;
  const std::size_t calls_before = gateway.call_count();
  const auto done = resumable(options);

  Collector c(tasks.size());
  run_pool(tasks.size(), options.concurrency, c.stop, [&](std::size_t i) {
    const TaskInstance& t = tasks[i];
    if (auto it = done.find(t.task_id); it != done.end()) {
      c.slots[i] = *it->second;
      return;
    }
    RunEntry e = entry_for(t);
    try {
      const ModelResponse resp = gateway.complete(discriminative_request(t, prompts, options));
      e.raw_text = resp.text;
      e.latency_ms = resp.latency_ms;
      e.attempts = resp.attempts;
      e.answer = parse_answer(t.kind, resp.text, t.labels());
      if (!e.answer.parsed) e.error = "unparseable answer";
    } catch (const GatewayError& g) {
      if (aborts_run(g)) return c.abort(g.what());
      e.error = g.what();
    } catch (const ScriptError& s) {
      return c.abort(s.what());
    }
    e.metrics = score_discriminative(t, e.answer);
    c.slots[i] = std::move(e);
  });
  record.gateway_calls = gateway.call_count() - calls_before;
  return finish_record(std::move(record), c, options);
}

std::string_view to_string(GenerationMode m) {
  switch (m) {
    case GenerationMode::plain: return "plain";
    case GenerationMode::five_shot: return "five_shot";
    case GenerationMode::rot: return "rot";
  }
  return "?";
}

std::optional<GenerationMode> parse_generation_mode(std::string_view s) {
  for (GenerationMode m : {GenerationMode::plain, GenerationMode::five_shot, GenerationMode::rot}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

namespace {

std::string generation_prompt(const TaskInstance& t, GenerationMode mode, const PromptPack& prompts) {
  if (t.kind == TaskKind::explanation) {
    return prompts.render("task_explanation",
                          {{"comment", t.options.empty() ? std::string() : t.options[0].text},
                           {"tag_list", all_subcategories()}});
  }
  if (mode == GenerationMode::five_shot) {
    std::string examples;
    for (std::size_t i = 0; i < t.fewshot.size(); ++i) examples += fmt::format("{}. {}\n", i + 1, t.fewshot[i].text);
    return prompts.render("task_creation_five_shot", {{"examples", examples}});
  }
  return prompts.get("task_creation");
}

std::vector<std::string> gold_tag_names(const TaskInstance& t) {
  std::vector<std::string> out;
  for (const auto& g : t.key.gold_tags) out.push_back(g.subcategory);
  return out;
}

}  // namespace

RunRecord run_generative(const std::vector<TaskInstance>& tasks, Gateway& gateway, const PromptPack& prompts,
                         const RunOptions& options, const GenerationOptions& generation) {
  for (const auto& t : tasks) {
    if (t.kind != TaskKind::creation && t.kind != TaskKind::explanation) {
      throw ConfigError("run_generative got a " + std::string(to_string(t.kind)) + " task");
    }
    if (generation.mode != GenerationMode::plain && t.kind != TaskKind::creation) {
      throw ConfigError(std::string(to_string(generation.mode)) + " mode applies to creation tasks only");
    }
    if (generation.mode == GenerationMode::five_shot && t.fewshot.empty()) {
      throw ConfigError("five_shot task " + t.task_id + " has no exemplars attached");
    }
  }
  if (!options.trace_dir.empty()) std::filesystem::create_directories(options.trace_dir);

  RunRecord record;
  record.run_id = options.run_id;
  record.mode = std::string(to_string(generation.mode));
  record.model = options.model_id;
  record.config = options.config_snapshot;
  const std::size_t calls_before = gateway.call_count();
  const auto done = resumable(options);

  rot::Params rot_params = generation.rot;
  rot_params.model_id = options.model_id;
  rot_params.frame_policy = options.frame_policy;

  Collector c(tasks.size());
  run_pool(tasks.size(), options.concurrency, c.stop, [&](std::size_t i) {
    const TaskInstance& t = tasks[i];
    if (auto it = done.find(t.task_id); it != done.end()) {
      c.slots[i] = *it->second;
      return;
    }
    RunEntry e = entry_for(t);
    try {
      if (generation.mode == GenerationMode::rot) {
        rot::Pipeline pipeline(gateway, rot_params, prompts);
        const rot::RoTTrace trace = pipeline.run(t.video_id, t.context);
        e.raw_text = trace.final_text;
        e.answer.text = trace.final_text;
        e.answer.parsed = !trace.final_text.empty();
        e.attempts = static_cast<int>(trace.gateway_calls());
        if (!options.trace_dir.empty()) {
          const auto path = std::filesystem::path(options.trace_dir) / (safe_file_name(t.task_id) + ".json");
          write_file_atomic(path.string(), trace.to_json().dump(2) + "\n");
          e.trace_file = path.string();
        }
      } else {
        const FramePlan plan = frame_plan(t.context.duration_s, static_cast<int>(t.context.frame_paths.size()),
                                          options.frame_policy);
        ModelRequest req = assemble_request(options.model_id, t.context.frame_paths, plan,
                                            describe_context(t.context), generation_prompt(t, generation.mode, prompts), "");
        req.temperature = options.temperature;
        req.max_tokens = options.max_tokens;
        req.metadata["phase"] = "task." + std::string(to_string(t.kind));
        req.metadata["task_id"] = t.task_id;
        const ModelResponse resp = gateway.complete(req);
        e.raw_text = resp.text;
        e.latency_ms = resp.latency_ms;
        e.attempts = resp.attempts;
        e.answer = parse_answer(t.kind, resp.text, {});
      }
      if (!e.answer.parsed) e.error = "empty answer";
    } catch (const rot::PhaseError& p) {
      if (p.kind() == rot::PhaseError::Kind::transport) return c.abort(p.what());
      e.error = p.what();
    } catch (const GatewayError& g) {
      if (aborts_run(g)) return c.abort(g.what());
      e.error = g.what();
    } catch (const ScriptError& s) {
      return c.abort(s.what());
    }
    c.slots[i] = std::move(e);
  });

  // Scoring pass over the finished creations, in task order.
  std::vector<std::size_t> creations;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (c.slots[i] && tasks[i].kind == TaskKind::creation && !done.count(tasks[i].task_id)) creations.push_back(i);
  }
  if (!creations.empty()) {
    std::vector<std::string> cands, refs;
    for (std::size_t i : creations) {
      cands.push_back(c.slots[i]->answer.parsed ? c.slots[i]->answer.text : std::string());
      refs.push_back(tasks[i].key.reference_text);
    }
    const auto pairs = options.use_parallel_kernels ? parallel::score_pairs(cands, refs) : serial::score_pairs(cands, refs);

    std::vector<metrics::EntitySet> gen_sets, ref_sets;
    std::map<std::string, metrics::EntitySet> ref_cache;
    auto extract = [&](const std::string& text) {
      if (trim(text).empty()) return metrics::EntitySet{};
      if (generation.online_entities && generation.judge) return generation.judge->extract_entities(text).entities;
      return judge::extract_entities_offline(text).entities;
    };
    for (std::size_t j = 0; j < creations.size(); ++j) {
      try {
        gen_sets.push_back(extract(cands[j]));
        if (!ref_cache.count(refs[j])) ref_cache[refs[j]] = extract(refs[j]);
        ref_sets.push_back(ref_cache[refs[j]]);
      } catch (const Error& err) {
        gen_sets.push_back({});
        ref_sets.push_back({});
        c.slots[creations[j]]->error += std::string(c.slots[creations[j]]->error.empty() ? "" : "; ") + err.what();
      }
    }
    const metrics::EntityWeights weights = metrics::entity_weights(ref_sets);
    std::vector<std::size_t> weo_idx;
    std::vector<metrics::EntitySet> wg, wr;
    for (std::size_t j = 0; j < creations.size(); ++j) {
      if (!c.slots[creations[j]]->answer.parsed || (gen_sets[j].empty() && ref_sets[j].empty())) continue;
      weo_idx.push_back(j);
      wg.push_back(gen_sets[j]);
      wr.push_back(ref_sets[j]);
    }
    const auto weos = options.use_parallel_kernels ? parallel::weo_pairs(wg, wr, weights) : serial::weo_pairs(wg, wr, weights);

    for (std::size_t j = 0; j < creations.size(); ++j) {
      RunEntry& e = *c.slots[creations[j]];
      e.metrics["bleu1"] = pairs[j].bleu1;
      e.metrics["bleu2"] = pairs[j].bleu2;
      e.metrics["rouge_l"] = pairs[j].rouge_l;
      e.generated_entities.assign(gen_sets[j].begin(), gen_sets[j].end());
      e.reference_entities.assign(ref_sets[j].begin(), ref_sets[j].end());
    }
    for (std::size_t w = 0; w < weo_idx.size(); ++w) c.slots[creations[weo_idx[w]]]->metrics["weo"] = weos[w];
  }

  if (generation.judge) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!c.slots[i] || done.count(tasks[i].task_id) || !c.slots[i]->answer.parsed) continue;
      RunEntry& e = *c.slots[i];
      const TaskInstance& t = tasks[i];
      try {
        judge::CriterionScores s =
            t.kind == TaskKind::creation
                ? generation.judge->judge_creation(e.answer.text, t.key.reference_text, describe_context(t.context))
                : generation.judge->judge_explanation(e.answer.tags, e.answer.text, gold_tag_names(t),
                                                      t.key.gold_explanation);
        e.judge = s.to_json();
        e.metrics["judge_raw"] = s.composite_raw;
        e.metrics["judge_norm"] = s.composite_norm;
      } catch (const judge::JudgeError& j) {
        e.error += std::string(e.error.empty() ? "" : "; ") + j.what();
        e.judge = {{"error", j.what()}, {"raw_text", j.raw_text()}};
      } catch (const GatewayError& g) {
        e.error += std::string(e.error.empty() ? "" : "; ") + "judge: " + g.what();
      }
    }
  }

  record.gateway_calls = gateway.call_count() - calls_before;
  return finish_record(std::move(record), c, options);
}

RunRecord baseline_random(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed,
                          bool use_parallel_kernels) {
  if (trials < 1) throw ConfigError("baseline_random needs at least one trial");
  RunRecord record;
  record.run_id = "baseline_random";
  record.mode = "baseline_random";
  record.model = "random";
  record.baseline = true;
  record.config = {{"trials", trials}, {"seed", seed}};
  if (tasks.empty()) {
    record.aggregates = compute_aggregates(record);
    return record;
  }
  const auto answers = use_parallel_kernels ? parallel::random_answers(tasks, trials, seed)
                                            : serial::random_answers(tasks, trials, seed);
  record.entries.reserve(answers.size());
  for (std::size_t j = 0; j < answers.size(); ++j) {
    const TaskInstance& t = tasks[j % tasks.size()];
    RunEntry e = entry_for(t);
    e.trial = static_cast<int>(j / tasks.size());
    e.answer = answers[j];
    e.metrics = score_discriminative(t, e.answer);
    record.entries.push_back(std::move(e));
  }
  record.aggregates = compute_aggregates(record);
  return record;
}

RunRecord baseline_frequent(const std::vector<TaskInstance>& tasks) {
  RunRecord record;
  record.run_id = "baseline_frequent";
  record.mode = "baseline_frequent";
  record.model = "most_frequent";
  record.baseline = true;

  // Serialized key -> count, per kind.
  std::map<TaskKind, std::map<std::string, std::size_t>> counts;
  auto serialize = [](const TaskInstance& t) {
    json k = t.key_json();
    k.erase("task_id");
    k.erase("dimensions");
    return k.dump();
  };
  for (const auto& t : tasks) {
    if (!is_discriminative(t.kind)) throw ConfigError("baseline_frequent needs discriminative tasks");
    ++counts[t.kind][serialize(t)];
  }
  std::map<TaskKind, Answer> modal;
  json chosen = json::object();
  for (const auto& [kind, table] : counts) {
    auto best = table.begin();  // map order: ties resolve to the smallest key
    for (auto it = table.begin(); it != table.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const json k = json::parse(best->first);
    Answer a;
    a.parsed = true;
    if (kind == TaskKind::selection) a.labels = {k.at("correct_label").get<std::string>()};
    if (kind == TaskKind::ranking) a.labels = k.at("reference_order").get<std::vector<std::string>>();
    if (kind == TaskKind::classification) {
      for (const auto& [l, tier] : k.at("tiers").items()) a.tiers[l] = *parse_tier(tier.get<std::string>());
    }
    modal[kind] = a;
    chosen[std::string(to_string(kind))] = k;
  }
  record.config = {{"modal_keys", chosen}};
  for (const auto& t : tasks) {
    RunEntry e = entry_for(t);
    e.answer = modal[t.kind];
    e.metrics = score_discriminative(t, e.answer);
    record.entries.push_back(std::move(e));
  }
  record.aggregates = compute_aggregates(record);
  return record;
}

// --- reports ----------------------------------------------------------------------

namespace {

struct Column {
  const char* header;
  const char* kind;
  const char* metric;  // "dist_1" is read from the kind block itself
  double scale;
};

constexpr Column kColumns[] = {
    {"Sel Acc", "selection", "accuracy", 100},   {"Sel Top-2", "selection", "top2", 100},
    {"Rank NDCG", "ranking", "ndcg", 100},       {"Rank EMA", "ranking", "ema", 100},
    {"Cls EMA", "classification", "ema", 100},   {"BLEU-1", "creation", "bleu1", 100},
    {"BLEU-2", "creation", "bleu2", 100},        {"DIST-1", "creation", "dist_1", 100},
    {"ROUGE-L", "creation", "rouge_l", 100},     {"WEO", "creation", "weo", 100},
    {"Judge Raw", "creation", "judge_raw", 1},   {"Judge Norm", "creation", "judge_norm", 100},
    {"Expl Judge Raw", "explanation", "judge_raw", 1}, {"Expl Judge Norm", "explanation", "judge_norm", 100},
};

std::optional<double> cell(const json& agg, const Column& c) {
  if (!agg.contains("kinds") || !agg["kinds"].contains(c.kind)) return std::nullopt;
  const json& k = agg["kinds"][c.kind];
  if (std::string_view(c.metric) == "dist_1") {
    if (!k.contains("dist_1")) return std::nullopt;
    return k["dist_1"].get<double>() * c.scale;
  }
  if (!k.contains("metrics") || !k["metrics"].contains(c.metric)) return std::nullopt;
  return k["metrics"][c.metric].get<double>() * c.scale;
}

const char* primary_metric(const std::string& kind) {
  if (kind == "selection") return "accuracy";
  if (kind == "ranking") return "ndcg";
  if (kind == "classification") return "ema";
  return "judge_norm";
}

std::string row_label(const RunRecord& r) { return r.mode == "human" ? "Human" : r.run_id; }

}  // namespace

Report build_report(const std::vector<RunRecord>& records) {
  Report rep;
  std::string md = "| Run | Mode | Model | N |";
  std::string rule = "|---|---|---|---:|";
  json columns = json::array({"Run", "Mode", "Model", "N"});
  for (const auto& c : kColumns) {
    md += fmt::format(" {} |", c.header);
    rule += "---:|";
    columns.push_back(c.header);
  }
  md += "\n" + rule + "\n";

  json rows = json::array();
  for (const auto& r : records) {
    const json agg = r.aggregates.is_null() || r.aggregates.empty() ? compute_aggregates(r) : r.aggregates;
    std::set<std::string> tasks;
    for (const auto& e : r.entries) tasks.insert(e.task_id);
    md += fmt::format("| {} | {} | {} | {} |", row_label(r), r.mode, r.model.empty() ? "n/a" : r.model, tasks.size());
    json row = {{"Run", row_label(r)}, {"Mode", r.mode}, {"Model", r.model}, {"N", tasks.size()}};
    for (const auto& c : kColumns) {
      auto v = cell(agg, c);
      md += v ? fmt::format(" {:.2f} |", *v) : std::string(" n/a |");
      row[c.header] = v ? json(*v) : json(nullptr);
    }
    md += "\n";
    rows.push_back(row);
  }

  // Per-dimension slices of each kind's primary metric.
  static constexpr const char* kDims[] = {"RT", "DA", "WT", "IV", "ER"};
  std::string dim_md = "| Run | Task | Metric | RT | DA | WT | IV | ER |\n|---|---|---|---:|---:|---:|---:|---:|\n";
  json dims = json::array();
  bool any_dim = false;
  for (const auto& r : records) {
    const json agg = r.aggregates.is_null() || r.aggregates.empty() ? compute_aggregates(r) : r.aggregates;
    if (!agg.contains("kinds")) continue;
    for (const auto& [kind, k] : agg["kinds"].items()) {
      const char* metric = primary_metric(kind);
      if (kind == "creation" && !(k.contains("metrics") && k["metrics"].contains("judge_norm"))) metric = "rouge_l";
      json drow = {{"Run", row_label(r)}, {"Task", kind}, {"Metric", metric}};
      std::string line = fmt::format("| {} | {} | {} |", row_label(r), kind, metric);
      bool has = false;
      for (const char* d : kDims) {
        const json* slice = k.contains("by_dimension") && k["by_dimension"].contains(d) ? &k["by_dimension"][d] : nullptr;
        if (slice && (*slice)["metrics"].contains(metric)) {
          const double v = (*slice)["metrics"][metric].get<double>() * 100;
          line += fmt::format(" {:.2f} |", v);
          drow[d] = v;
          has = true;
        } else {
          line += " n/a |";
          drow[d] = nullptr;
        }
      }
      if (!has) continue;
      any_dim = true;
      dim_md += line + "\n";
      dims.push_back(drow);
    }
  }

  std::string pref_md;
  json prefs = json::array();
  for (const auto& r : records) {
    if (!r.aggregates.contains("preference")) continue;
    const json& p = r.aggregates["preference"];
    if (pref_md.empty()) pref_md = "| Run | Source | Mean score | Share (%) |\n|---|---|---:|---:|\n";
    for (const auto& [src, mean] : p["mean_score"].items()) {
      const double share = p["shares"][src].get<double>() * 100;
      pref_md += fmt::format("| {} | {} | {:.2f} | {:.2f} |\n", row_label(r), src, mean.get<double>(), share);
      prefs.push_back({{"Run", row_label(r)}, {"Source", src}, {"mean_score", mean}, {"share", share}});
    }
  }

  rep.markdown = "## Leaderboard\n\n" + md;
  if (any_dim) rep.markdown += "\n## Per-dimension\n\n" + dim_md;
  if (!pref_md.empty()) rep.markdown += "\n## Preference\n\n" + pref_md;
  rep.data = {{"columns", columns}, {"rows", rows}, {"dimensions", dims}, {"preference", prefs}};
  return rep;
}

}  // namespace cbench
