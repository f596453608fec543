#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sieve/alignment.hpp"
#include "sieve/annotation.hpp"
#include "sieve/manifest.hpp"
#include "sieve/scoring.hpp"

namespace sieve {

enum class AdapterKind {
  /// POST {base_url}/chat/completions, chat-completions style.
  kChat,
  /// POST {base_url}/v1/score with {image_ref, caption, rubric}.
  kNative,
  /// In-process deterministic scorer (mock_score); no network.
  kMock,
};

std::string_view to_string(AdapterKind kind) noexcept;
std::optional<AdapterKind> adapter_kind_from_string(std::string_view s) noexcept;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EndpointConfig {
  AdapterKind adapter = AdapterKind::kChat;
  std::string base_url;
  std::string model_id;
  /// Name of the environment variable holding the bearer token; empty for none.
  std::string auth_token_env_name;
  int max_parallel = 4;
  double requests_per_second = 2.0;
  int max_retries = 3;
  /// Delay before retry k is entry min(k-1, size-1); must be non-decreasing.
  std::vector<int> retry_backoff_ms{500, 1000, 2000, 4000};
  /// Empty disables the response cache.
  std::filesystem::path cache_dir;
  int timeout_ms = 60000;

  /// Throws ConfigError.
  void validate() const;
  /// Model id used for annotator and cache keys ("mock" for the mock adapter).
  std::string effective_model_id() const;

  static EndpointConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct HttpResponse {
  /// 0 for a transport-level failure (connect, timeout, ...).
  int status = 0;
  std::string body;
  std::string error;
};

using HttpHeaders = std::multimap<std::string, std::string>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) = 0;
};

/// cpp-httplib backed transport; one connection per request, safe to share across threads.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::chrono::milliseconds timeout = std::chrono::seconds(60));
  HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) override;

 private:
  std::chrono::milliseconds timeout_;
};

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
  void sleep_for(std::chrono::nanoseconds d) { sleep_until(now() + d); }
};

class SystemClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_until(time_point t) override;
  static SystemClock& instance();
};

/// Minimum-spacing limiter: consecutive grants are at least 1/rate apart, so any
/// half-open one-second window holds at most ceil(rate) grants.
class RateLimiter {
 public:
  RateLimiter(double requests_per_second, Clock& clock);
  void acquire();

 private:
  Clock& clock_;
  std::chrono::nanoseconds spacing_;
  std::mutex mu_;
  std::optional<Clock::time_point> next_slot_;
};

/// Content-addressed response cache: one JSON file per key under `dir`,
/// written via temp file + rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  bool enabled() const noexcept { return !dir_.empty(); }
  std::optional<ScorerResponse> get(const std::string& key) const;
  void put(const std::string& key, const ScorerResponse& response) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path dir_;
};

/// Hex FNV-1a-64 over the canonical prompt payload and model id.
std::string cache_key(const PromptPayload& payload, std::string_view model_id);

class EndpointError : public std::runtime_error {
 public:
  EndpointError(std::string detail, int attempts, int last_status);
  int attempts() const noexcept { return attempts_; }
  int last_status() const noexcept { return last_status_; }

 private:
  int attempts_;
  int last_status_;
};

struct ScoreCall {
  Annotation annotation;
  /// Transport attempts made (0 on a cache hit or for the mock adapter).
  int attempts = 0;
  bool cache_hit = false;
};

struct ScoreOutcome {
  enum class Status { kScored, kUnparseable, kFailed };

  Status status = Status::kFailed;
  std::optional<ScoreCall> call;
  std::string error;
  /// Model text for unparseable replies, kept for audit.
  std::string raw;
};

struct ClientOptions {
  std::shared_ptr<Transport> transport;  // defaults to HttpTransport
  Clock* clock = nullptr;                // defaults to SystemClock
  std::function<std::string()> timestamp;
  /// Overrides the environment lookup for the bearer token (tests).
  std::function<std::optional<std::string>(const std::string&)> getenv;
};

class ScoringClient {
 public:
  ScoringClient(EndpointConfig config, Rubric rubric, ClientOptions options = {});

  /// Cache first; on a miss, a rate-limited request with retries on transport
  /// errors, 429 and 5xx. Throws EndpointError or ScoreParseError.
  ScoreCall score_pair(const PairRecord& rec);

  /// Scores every record with at most max_parallel requests in flight.
  /// Results are in input order.
  std::vector<ScoreOutcome> score_many(std::span<const PairRecord> records);

  /// Sends a text-only prompt and returns the model text (chat adapter; the
  /// mock adapter returns a deterministic verdict line).
  std::string complete_text(const std::string& prompt);

  std::size_t network_requests() const noexcept { return requests_.load(); }
  std::size_t retries() const noexcept { return retries_.load(); }
  std::size_t cache_hits() const noexcept { return cache_hits_.load(); }

  const EndpointConfig& config() const noexcept { return config_; }

 private:
  HttpResponse post_with_retries(const std::string& url, const std::string& body, int& attempts);
  HttpHeaders headers() const;
  std::string request_text(const PairRecord& rec, const PromptPayload& payload, int& attempts);

  EndpointConfig config_;
  Rubric rubric_;
  std::shared_ptr<Transport> transport_;
  Clock* clock_;
  RateLimiter limiter_;
  ResponseCache cache_;
  std::function<std::string()> timestamp_;
  std::optional<std::string> token_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> retries_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

/// Embedder backed by POST {base_url}/v1/embed {"kind", "content"} -> {"embedding"}.
class EndpointEmbedder final : public Embedder {
 public:
  EndpointEmbedder(EndpointConfig config, ClientOptions options = {});
  EmbeddingPair embed(const PairRecord& rec) override;

 private:
  EmbeddingVector fetch(std::string_view kind, const std::string& content);

  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  Clock* clock_;
  RateLimiter limiter_;
  std::optional<std::string> token_;
};

/// Runs fn(i) for i in [0, n) on at most `parallelism` threads.
void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn);

}  // namespace sieve
