#include "cbench/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"

namespace cbench {

// --- frame planning -------------------------------------------------------

std::string_view to_string(FrameMode m) {
  switch (m) {
    case FrameMode::fps_1: return "fps_1";
    case FrameMode::fps_half: return "fps_half";
    case FrameMode::uniform_384: return "uniform_384";
    case FrameMode::uniform_fixed: return "uniform_fixed";
  }
  return "?";
}

std::optional<FramePolicy> parse_frame_policy(std::string_view s) {
  if (s == "dynamic") return FramePolicy::dynamic;
  if (s == "fixed_50") return FramePolicy::fixed_50;
  return std::nullopt;
}

std::vector<int> uniform_indices(int available, int count) {
  std::vector<int> out;
  if (available <= 0 || count <= 0) return out;
  count = std::min(count, available);
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(static_cast<int>(i * available / count));
  }
  return out;
}

FramePlan frame_plan(double duration_s, int available_frames, FramePolicy policy) {
  FramePlan plan;
  int wanted = 0;
  const double d = std::max(0.0, duration_s);
  if (policy == FramePolicy::fixed_50) {
    plan.mode = FrameMode::uniform_fixed;
    plan.fixed_count = 50;
    wanted = 50;
  } else if (d < 128.0) {
    plan.mode = FrameMode::fps_1;
    wanted = static_cast<int>(std::ceil(d));
  } else if (d < 768.0) {
    plan.mode = FrameMode::fps_half;
    wanted = static_cast<int>(std::ceil(d * 0.5));
  } else {
    plan.mode = FrameMode::uniform_384;
    wanted = 384;
  }
  if (available_frames > 0) wanted = std::max(wanted, 1);
  plan.selected_indices = uniform_indices(available_frames, wanted);
  plan.frame_count = static_cast<int>(plan.selected_indices.size());
  return plan;
}

// --- requests -------------------------------------------------------------

std::string ModelRequest::prompt_text() const {
  std::vector<std::string> texts;
  for (const auto& p : parts) {
    if (p.kind == ContentPart::Kind::text) texts.push_back(p.text);
  }
  return join(texts, "\n\n");
}

std::string ModelRequest::phase() const {
  auto it = metadata.find("phase");
  return it == metadata.end() ? std::string() : it->second;
}

json ModelRequest::to_json() const {
  json parts_j = json::array();
  for (const auto& p : parts) {
    if (p.kind == ContentPart::Kind::text) {
      parts_j.push_back({{"type", "text"}, {"text", p.text}});
    } else {
      parts_j.push_back({{"type", "image"}, {"path", p.image_path}});
    }
  }
  return json{{"model", model_id},
              {"parts", parts_j},
              {"temperature", temperature},
              {"max_tokens", max_tokens},
              {"metadata", metadata}};
}

ModelRequest ModelRequest::from_json(const json& j) {
  ModelRequest r;
  r.model_id = j.value("model", std::string());
  for (const auto& p : j.value("parts", json::array())) {
    if (p.value("type", std::string()) == "image") {
      r.parts.push_back(ContentPart::of_image(p.value("path", std::string())));
    } else {
      r.parts.push_back(ContentPart::of_text(p.value("text", std::string())));
    }
  }
  r.temperature = j.value("temperature", 0.0);
  r.max_tokens = j.value("max_tokens", 1024);
  r.metadata = j.value("metadata", std::map<std::string, std::string>{});
  return r;
}

std::string ModelRequest::content_hash() const { return hex64(fnv1a64(to_json().dump())); }

json ModelResponse::to_json() const {
  return json{{"text", text},
              {"usage", {{"prompt_tokens", usage.prompt_tokens},
                         {"completion_tokens", usage.completion_tokens}}},
              {"latency_ms", latency_ms},
              {"status", status},
              {"attempts", attempts}};
}

ModelResponse ModelResponse::from_json(const json& j) {
  ModelResponse r;
  r.text = j.value("text", std::string());
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
  }
  r.latency_ms = j.value("latency_ms", 0.0);
  r.status = j.value("status", 200);
  r.attempts = j.value("attempts", 1);
  return r;
}

ModelRequest assemble_request(const std::string& model_id, const std::vector<std::string>& frame_paths,
                              const FramePlan& plan, const std::string& surrogate,
                              const std::string& prompt, const std::string& comments) {
  ModelRequest req;
  req.model_id = model_id;
  bool any_frame = false;
  for (int idx : plan.selected_indices) {
    if (idx >= 0 && static_cast<std::size_t>(idx) < frame_paths.size()) {
      req.parts.push_back(ContentPart::of_image(frame_paths[static_cast<std::size_t>(idx)]));
      any_frame = true;
    }
  }
  if (!any_frame && !surrogate.empty()) req.parts.push_back(ContentPart::of_text(surrogate));
  req.parts.push_back(ContentPart::of_text(prompt));
  if (!comments.empty()) req.parts.push_back(ContentPart::of_text(comments));
  return req;
}

// --- failures -------------------------------------------------------------

std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::transient: return "transient";
    case FailureKind::authentication: return "authentication";
    case FailureKind::content_policy: return "content_policy";
    case FailureKind::fatal: return "fatal";
  }
  return "?";
}

std::optional<FailureKind> parse_failure_kind(std::string_view s) {
  for (FailureKind k : {FailureKind::transient, FailureKind::authentication,
                        FailureKind::content_policy, FailureKind::fatal}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// --- scripted transport ---------------------------------------------------

bool ScriptMatcher::matches(const ModelRequest& request) const {
  switch (kind) {
    case Kind::any: return true;
    case Kind::contains: return request.prompt_text().find(value) != std::string::npos;
    case Kind::phase: {
      const std::string p = request.phase();
      return p == value || (p.size() > value.size() && p.compare(0, value.size(), value) == 0 &&
                            p[value.size()] == '.');
    }
  }
  return false;
}

std::string ScriptMatcher::describe() const {
  switch (kind) {
    case Kind::any: return "any";
    case Kind::contains: return "contains \"" + value + "\"";
    case Kind::phase: return "phase " + value;
  }
  return "?";
}

namespace {

std::string describe_request(const ModelRequest& r) {
  std::string head = r.prompt_text().substr(0, 80);
  std::replace(head.begin(), head.end(), '\n', ' ');
  std::string phase = r.phase().empty() ? "-" : r.phase();
  return "request[phase=" + phase + ", hash=" + r.content_hash() + ", prompt=\"" + head + "\"]";
}

}  // namespace

ScriptedTransport::ScriptedTransport(std::vector<ScriptEntry> script)
    : script_(std::move(script)), used_(script_.size(), 0) {
  if (script_.empty()) throw ConfigError("scripted transport needs a non-empty script");
}

std::vector<ScriptEntry> ScriptedTransport::parse_script(const json& j) {
  std::vector<ScriptEntry> out;
  for (const auto& e : j) {
    ScriptEntry entry;
    const json& m = e.contains("match") ? e.at("match") : json("any");
    if (m.is_string() && m.get<std::string>() == "any") {
      entry.matcher = ScriptMatcher::any();
    } else if (m.is_object() && m.contains("phase")) {
      entry.matcher = ScriptMatcher::phase(m.at("phase").get<std::string>());
    } else if (m.is_object() && m.contains("contains")) {
      entry.matcher = ScriptMatcher::contains(m.at("contains").get<std::string>());
    } else {
      throw ConfigError("bad script matcher: " + m.dump());
    }
    entry.text = e.value("text", std::string());
    if (e.contains("fail")) {
      auto k = parse_failure_kind(e.at("fail").get<std::string>());
      if (!k) throw ConfigError("bad failure kind in script: " + e.at("fail").dump());
      entry.failure = k;
    }
    entry.times = e.value("times", 1);
    out.push_back(std::move(entry));
  }
  return out;
}

ModelResponse ScriptedTransport::send(const ModelRequest& request) {
  std::lock_guard lock(mu_);
  seen_.push_back(request);
  bool any_match = false;
  for (std::size_t i = 0; i < script_.size(); ++i) {
    if (!script_[i].matcher.matches(request)) continue;
    any_match = true;
    if (used_[i] >= script_[i].times) continue;
    ++used_[i];
    const ScriptEntry& e = script_[i];
    if (e.failure) {
      throw TransportFailure(*e.failure, "scripted " + std::string(to_string(*e.failure)) + " failure",
                             *e.failure == FailureKind::authentication ? 401 : 503);
    }
    ModelResponse resp;
    resp.text = e.text;
    return resp;
  }
  if (any_match) {
    throw ScriptError(ScriptError::Kind::exhausted, "script exhausted at " + describe_request(request));
  }
  throw ScriptError(ScriptError::Kind::unmatched, "no script entry matches " + describe_request(request));
}

std::vector<ModelRequest> ScriptedTransport::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

std::size_t ScriptedTransport::remaining() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (std::size_t i = 0; i < script_.size(); ++i) {
    n += static_cast<std::size_t>(std::max(0, script_[i].times - used_[i]));
  }
  return n;
}

// --- request log + replay -------------------------------------------------

RequestLog::RequestLog(std::string path) : path_(std::move(path)) {}

void RequestLog::append(const ModelRequest& request, const ModelResponse& response) {
  std::lock_guard lock(mu_);
  LogEntry e{entries_.size(), request.content_hash(), request.to_json(), response.to_json()};
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to request log " + path_);
    json line{{"seq", e.seq}, {"hash", e.hash}, {"request", e.request}, {"response", e.response}};
    out << line.dump() << '\n';
    out.flush();
    if (!out) throw Error("short write to request log " + path_);
  }
  entries_.push_back(std::move(e));
}

std::vector<LogEntry> RequestLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::optional<ModelResponse> RequestLog::lookup(const std::string& hash) const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.hash == hash) return ModelResponse::from_json(e.response);
  }
  return std::nullopt;
}

std::size_t RequestLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<LogEntry> RequestLog::read(const std::string& path) {
  std::vector<LogEntry> out;
  for (const auto& line : split_lines(read_file(path))) {
    if (trim(line).empty()) continue;
    json j = json::parse(line);
    out.push_back({j.value("seq", out.size()), j.at("hash").get<std::string>(), j.at("request"),
                   j.at("response")});
  }
  return out;
}

ReplayTransport::ReplayTransport(const std::vector<LogEntry>& entries) {
  for (const auto& e : entries) by_hash_[e.hash].push_back(ModelResponse::from_json(e.response));
}

std::shared_ptr<ReplayTransport> ReplayTransport::from_file(const std::string& path) {
  return std::make_shared<ReplayTransport>(RequestLog::read(path));
}

ModelResponse ReplayTransport::send(const ModelRequest& request) {
  std::lock_guard lock(mu_);
  auto it = by_hash_.find(request.content_hash());
  if (it == by_hash_.end() || it->second.empty()) {
    throw ScriptError(it == by_hash_.end() ? ScriptError::Kind::unmatched : ScriptError::Kind::exhausted,
                      "replay log has no response for " + describe_request(request));
  }
  ModelResponse r = it->second.front();
  it->second.pop_front();
  return r;
}

// --- HTTP transport -------------------------------------------------------

std::optional<Dialect> parse_dialect(std::string_view s) {
  if (s == "openai") return Dialect::openai;
  if (s == "anthropic") return Dialect::anthropic;
  return std::nullopt;
}

EndpointConfig EndpointConfig::from_json(const std::string& name, const json& j) {
  EndpointConfig c;
  c.name = name;
  c.base_url = j.at("base_url").get<std::string>();
  c.model_id = j.at("model").get<std::string>();
  c.api_key_env = j.value("api_key_env", std::string());
  auto d = parse_dialect(j.value("dialect", std::string("openai")));
  if (!d) throw ConfigError("endpoint " + name + ": unknown dialect " + j.value("dialect", std::string()));
  c.dialect = *d;
  c.requests_per_minute = j.value("requests_per_minute", 0);
  c.max_in_flight = j.value("max_in_flight", 4);
  c.timeout_s = j.value("timeout_s", 120.0);
  return c;
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto slash = url.find('/', host_start);
  SplitUrl out;
  if (slash == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, slash);
    out.prefix = url.substr(slash);
  }
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

std::string media_type_for(const std::string& path) {
  std::string ext = to_lower_ascii(path.substr(path.find_last_of('.') + 1));
  if (ext == "png") return "image/png";
  if (ext == "webp") return "image/webp";
  if (ext == "gif") return "image/gif";
  return "image/jpeg";
}

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

}  // namespace

HttpTransport::HttpTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

std::string HttpTransport::endpoint_path() const {
  const std::string prefix = split_url(cfg_.base_url).prefix;
  return prefix + (cfg_.dialect == Dialect::openai ? "/chat/completions" : "/messages");
}

json HttpTransport::build_body(const ModelRequest& request) const {
  json content = json::array();
  for (const auto& p : request.parts) {
    if (p.kind == ContentPart::Kind::text) {
      content.push_back({{"type", "text"}, {"text", p.text}});
      continue;
    }
    const bool remote = is_url(p.image_path);
    std::string data = remote ? std::string() : httplib::detail::base64_encode(read_file(p.image_path));
    if (cfg_.dialect == Dialect::openai) {
      std::string url = remote ? p.image_path : "data:" + media_type_for(p.image_path) + ";base64," + data;
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
    } else if (remote) {
      content.push_back({{"type", "image"}, {"source", {{"type", "url"}, {"url", p.image_path}}}});
    } else {
      content.push_back({{"type", "image"},
                         {"source", {{"type", "base64"},
                                     {"media_type", media_type_for(p.image_path)},
                                     {"data", data}}}});
    }
  }
  const std::string model = request.model_id.empty() ? cfg_.model_id : request.model_id;
  return json{{"model", model},
              {"max_tokens", request.max_tokens},
              {"temperature", request.temperature},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
}

ModelResponse HttpTransport::parse_reply(int status, const std::string& body) const {
  if (status == 401 || status == 403) {
    throw TransportFailure(FailureKind::authentication, "endpoint rejected credentials", status);
  }
  if (status == 408 || status == 409 || status == 429 || status >= 500) {
    throw TransportFailure(FailureKind::transient, "endpoint returned " + std::to_string(status), status);
  }
  if (status != 200) {
    const std::string lower = to_lower_ascii(body);
    if (lower.find("content_policy") != std::string::npos ||
        lower.find("content_filter") != std::string::npos) {
      throw TransportFailure(FailureKind::content_policy, "content policy rejection", status);
    }
    throw TransportFailure(FailureKind::fatal, "endpoint returned " + std::to_string(status) + ": " +
                                                   body.substr(0, 200), status);
  }
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    throw TransportFailure(FailureKind::fatal, "endpoint returned non-JSON body", status);
  }
  ModelResponse r;
  r.status = status;
  if (cfg_.dialect == Dialect::openai) {
    if (!j.contains("choices") || j["choices"].empty()) {
      throw TransportFailure(FailureKind::fatal, "reply has no choices", status);
    }
    const json& choice = j["choices"][0];
    if (choice.value("finish_reason", std::string()) == "content_filter") {
      throw TransportFailure(FailureKind::content_policy, "completion stopped by content filter", status);
    }
    const json& content = choice["message"]["content"];
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) r.text += part.value("text", std::string());
    }
    if (j.contains("usage")) {
      r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
  } else {
    if (j.value("stop_reason", std::string()) == "refusal") {
      throw TransportFailure(FailureKind::content_policy, "model refused", status);
    }
    for (const auto& block : j.value("content", json::array())) {
      if (block.value("type", std::string()) == "text") r.text += block.value("text", std::string());
    }
    if (j.contains("usage")) {
      r.usage.prompt_tokens = j["usage"].value("input_tokens", 0);
      r.usage.completion_tokens = j["usage"].value("output_tokens", 0);
    }
  }
  return r;
}

ModelResponse HttpTransport::send(const ModelRequest& request) {
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key) {
      throw TransportFailure(FailureKind::authentication,
                             "credential variable " + cfg_.api_key_env + " is not set");
    }
    if (cfg_.dialect == Dialect::openai) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    } else {
      headers.emplace("x-api-key", key);
    }
  }
  if (cfg_.dialect == Dialect::anthropic) headers.emplace("anthropic-version", "2023-06-01");

  const SplitUrl url = split_url(cfg_.base_url);
  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);
  client.set_connection_timeout(10, 0);
  auto res = client.Post(endpoint_path(), headers, build_body(request).dump(), "application/json");
  if (!res) {
    throw TransportFailure(FailureKind::transient, "connection failed: " + httplib::to_string(res.error()));
  }
  return parse_reply(res->status, res->body);
}

// --- gateway --------------------------------------------------------------

double RetryPolicy::nominal_delay(int attempt) const {
  return base_delay_s * std::pow(factor, std::max(0, attempt - 1));
}

Gateway::Gateway(std::shared_ptr<Transport> transport, RetryPolicy retry, GatewayOptions options)
    : transport_(std::move(transport)),
      retry_(std::move(retry)),
      options_(std::move(options)),
      in_flight_(std::clamp(options_.max_in_flight, 1, 1024)),
      jitter_rng_(retry_.jitter_seed) {
  if (!transport_) throw ConfigError("gateway needs a transport");
  if (retry_.max_attempts < 1) throw ConfigError("retry policy needs max_attempts >= 1");
  if (!retry_.sleep) {
    retry_.sleep = [](double s) {
      std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
  }
}

void Gateway::pace() {
  if (options_.requests_per_minute <= 0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(60.0 / options_.requests_per_minute));
  std::chrono::steady_clock::duration wait{};
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    if (next_slot_ > now) wait = next_slot_ - now;
    next_slot_ = std::max(now, next_slot_) + interval;
  }
  if (wait.count() > 0) retry_.sleep(std::chrono::duration<double>(wait).count());
}

ModelResponse Gateway::complete(const ModelRequest& request) {
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  if (options_.use_cache && options_.log) {
    if (auto hit = options_.log->lookup(request.content_hash())) {
      std::lock_guard lock(mu_);
      ++calls_;
      return *hit;
    }
  }

  for (int attempt = 1;; ++attempt) {
    pace();
    const auto start = std::chrono::steady_clock::now();
    try {
      ModelResponse resp = transport_->send(request);
      resp.attempts = attempt;
      resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (options_.log) options_.log->append(request, resp);
      std::lock_guard lock(mu_);
      ++calls_;
      return resp;
    } catch (const TransportFailure& f) {
      switch (f.kind()) {
        case FailureKind::authentication:
          throw GatewayError(GatewayError::Kind::authentication, f.what(), attempt);
        case FailureKind::content_policy:
          throw GatewayError(GatewayError::Kind::content_policy, f.what(), attempt);
        case FailureKind::fatal:
          throw GatewayError(GatewayError::Kind::fatal, f.what(), attempt);
        case FailureKind::transient:
          break;
      }
      if (attempt >= retry_.max_attempts) {
        throw GatewayError(GatewayError::Kind::exhausted_retries,
                           "gave up after " + std::to_string(attempt) + " attempts: " + f.what(), attempt);
      }
      double u;
      {
        std::lock_guard lock(mu_);
        u = jitter_rng_.unit();
      }
      retry_.sleep(retry_.nominal_delay(attempt) * (1.0 + retry_.jitter * (2.0 * u - 1.0)));
    }
  }
}

std::size_t Gateway::call_count() const {
  std::lock_guard lock(mu_);
  return calls_;
}

}  // namespace cbench
