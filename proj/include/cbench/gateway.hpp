#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "cbench/util.hpp"
#include "json.hpp"

namespace cbench {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Frame sampling
// ---------------------------------------------------------------------------

enum class FrameMode { fps_1, fps_half, uniform_384, uniform_fixed };
enum class FramePolicy { dynamic, fixed_50 };

std::string_view to_string(FrameMode m);
std::optional<FramePolicy> parse_frame_policy(std::string_view s);

struct FramePlan {
  FrameMode mode = FrameMode::fps_1;
  int fixed_count = 0;  // k for uniform_fixed
  int frame_count = 0;
  std::vector<int> selected_indices;
};

/// Dynamic policy: under 128 s at 1 fps, under 768 s at 0.5 fps, otherwise
/// 384 frames spread uniformly. fixed_50 always asks for 50 uniform frames.
/// The count is capped at available_frames; indices are evenly spaced over
/// the available frames starting at 0.
FramePlan frame_plan(double duration_s, int available_frames, FramePolicy policy);

/// `count` evenly spaced indices over [0, available), first index 0.
std::vector<int> uniform_indices(int available, int count);

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

struct ContentPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;        // kind == text
  std::string image_path;  // kind == image

  static ContentPart of_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ContentPart of_image(std::string p) { return {Kind::image, {}, std::move(p)}; }
  bool operator==(const ContentPart&) const = default;
};

struct ModelRequest {
  std::string model_id;
  std::vector<ContentPart> parts;
  double temperature = 0.0;
  int max_tokens = 1024;
  /// Routing and audit tags, e.g. {"phase": "ripple_focalization"}.
  std::map<std::string, std::string> metadata;

  /// All text parts joined by blank lines.
  std::string prompt_text() const;
  std::string phase() const;
  json to_json() const;
  static ModelRequest from_json(const json& j);
  /// Content address used by the request log and the replay transport.
  std::string content_hash() const;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ModelResponse {
  std::string text;
  TokenUsage usage;
  double latency_ms = 0.0;
  int status = 200;
  int attempts = 1;

  json to_json() const;
  static ModelResponse from_json(const json& j);
};

/// Builds a request in <frames> + <prompt> + <comments> order. With no
/// frames the textual surrogate takes the frames' place.
ModelRequest assemble_request(const std::string& model_id, const std::vector<std::string>& frame_paths,
                              const FramePlan& plan, const std::string& surrogate,
                              const std::string& prompt, const std::string& comments);

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

enum class FailureKind { transient, authentication, content_policy, fatal };
std::string_view to_string(FailureKind k);
std::optional<FailureKind> parse_failure_kind(std::string_view s);

/// A failed exchange with an endpoint. Only transient failures are retried.
class TransportFailure : public Error {
 public:
  TransportFailure(FailureKind kind, std::string message, int status = 0)
      : Error(std::move(message)), kind_(kind), status_(status) {}
  FailureKind kind() const { return kind_; }
  int status() const { return status_; }

 private:
  FailureKind kind_;
  int status_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Must be callable from several threads at once.
  virtual ModelResponse send(const ModelRequest& request) = 0;
};

/// Offline playback failure: the script ran out or nothing matched.
class ScriptError : public Error {
 public:
  enum class Kind { exhausted, unmatched };
  ScriptError(Kind kind, std::string message) : Error(std::move(message)), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct ScriptMatcher {
  enum class Kind { any, contains, phase };
  Kind kind = Kind::any;
  std::string value;

  static ScriptMatcher any() { return {Kind::any, {}}; }
  static ScriptMatcher contains(std::string s) { return {Kind::contains, std::move(s)}; }
  static ScriptMatcher phase(std::string s) { return {Kind::phase, std::move(s)}; }
  bool matches(const ModelRequest& request) const;
  std::string describe() const;
};

struct ScriptEntry {
  ScriptMatcher matcher;
  std::string text;
  std::optional<FailureKind> failure;
  int times = 1;

  static ScriptEntry reply(ScriptMatcher m, std::string text, int times = 1) {
    return {std::move(m), std::move(text), std::nullopt, times};
  }
  static ScriptEntry fail(ScriptMatcher m, FailureKind kind, int times = 1) {
    return {std::move(m), {}, kind, times};
  }
};

/// Deterministic stand-in for an endpoint. Each request consumes the first
/// entry (in script order) that still has uses left and whose matcher accepts
/// the request.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::vector<ScriptEntry> script);
  /// JSON array of {"match": "any" | {"phase": s} | {"contains": s},
  ///                "text": s, "fail": kind, "times": n}.
  static std::vector<ScriptEntry> parse_script(const json& j);

  ModelResponse send(const ModelRequest& request) override;

  std::vector<ModelRequest> requests() const;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::vector<ScriptEntry> script_;
  std::vector<int> used_;
  std::vector<ModelRequest> seen_;
};

struct LogEntry {
  std::size_t seq = 0;
  std::string hash;
  json request;
  json response;
};

/// Append-only JSONL record of every completed exchange.
class RequestLog {
 public:
  RequestLog() = default;  // in-memory only
  explicit RequestLog(std::string path);

  void append(const ModelRequest& request, const ModelResponse& response);
  std::vector<LogEntry> entries() const;
  std::optional<ModelResponse> lookup(const std::string& hash) const;
  std::size_t size() const;

  static std::vector<LogEntry> read(const std::string& path);

 private:
  mutable std::mutex mu_;
  std::string path_;
  std::vector<LogEntry> entries_;
};

/// Plays back a recorded log. Identical requests are answered in the order
/// they were recorded.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::vector<LogEntry>& entries);
  static std::shared_ptr<ReplayTransport> from_file(const std::string& path);

  ModelResponse send(const ModelRequest& request) override;

 private:
  std::mutex mu_;
  std::map<std::string, std::deque<ModelResponse>> by_hash_;
};

enum class Dialect { openai, anthropic };
std::optional<Dialect> parse_dialect(std::string_view s);

struct EndpointConfig {
  std::string name;
  std::string base_url;
  std::string model_id;
  std::string api_key_env;
  Dialect dialect = Dialect::openai;
  int requests_per_minute = 0;  // 0 = uncapped
  int max_in_flight = 4;
  double timeout_s = 120.0;

  static EndpointConfig from_json(const std::string& name, const json& j);
};

/// Chat-completion client over HTTP(S) speaking either the OpenAI chat
/// completions or the Anthropic messages wire format.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(EndpointConfig cfg);
  ModelResponse send(const ModelRequest& request) override;

  /// Exposed for tests: the JSON body this transport would POST.
  json build_body(const ModelRequest& request) const;
  /// Exposed for tests: maps a status code + body to text or a failure.
  ModelResponse parse_reply(int status, const std::string& body) const;
  std::string endpoint_path() const;

 private:
  EndpointConfig cfg_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 5;
  double base_delay_s = 1.0;
  double factor = 2.0;
  double jitter = 0.2;  // +/- fraction of each delay
  std::uint64_t jitter_seed = 0;
  /// Injected so tests never sleep.
  std::function<void(double seconds)> sleep;

  /// Nominal delay before attempt `attempt + 1` (attempt is 1-based).
  double nominal_delay(int attempt) const;
};

class GatewayError : public Error {
 public:
  enum class Kind { exhausted_retries, authentication, content_policy, fatal };
  GatewayError(Kind kind, std::string message, int attempts)
      : Error(std::move(message)), kind_(kind), attempts_(attempts) {}
  Kind kind() const { return kind_; }
  int attempts() const { return attempts_; }

 private:
  Kind kind_;
  int attempts_;
};

struct GatewayOptions {
  int max_in_flight = 4;
  int requests_per_minute = 0;
  std::shared_ptr<RequestLog> log;  // optional
  bool use_cache = false;           // answer repeated requests from the log
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Transport> transport, RetryPolicy retry = {}, GatewayOptions options = {});

  /// Sends with retry on transient failures; logs the successful exchange.
  ModelResponse complete(const ModelRequest& request);

  std::size_t call_count() const;
  std::shared_ptr<RequestLog> log() const { return options_.log; }
  Transport& transport() { return *transport_; }

 private:
  void pace();

  std::shared_ptr<Transport> transport_;
  RetryPolicy retry_;
  GatewayOptions options_;
  std::counting_semaphore<1024> in_flight_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
  SeededRng jitter_rng_;
  std::chrono::steady_clock::time_point next_slot_{};
};

}  // namespace cbench
