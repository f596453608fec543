#include "sieve/endpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include "httplib.h"

#include "sieve/hash.hpp"
#include "sieve/io.hpp"

namespace sieve {

using ojson = nlohmann::ordered_json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string join_url(const std::string& base, std::string_view suffix) {
  std::string out = base;
  while (!out.empty() && out.back() == '/') out.pop_back();
  out += suffix;
  return out;
}

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

std::optional<std::string> resolve_token(const EndpointConfig& config, const ClientOptions& options) {
  if (config.auth_token_env_name.empty()) return std::nullopt;
  std::optional<std::string> value;
  if (options.getenv) {
    value = options.getenv(config.auth_token_env_name);
  } else if (const char* v = std::getenv(config.auth_token_env_name.c_str())) {
    value = v;
  }
  if (!value || value->empty()) {
    throw ConfigError("environment variable " + config.auth_token_env_name + " is not set");
  }
  return value;
}

HttpHeaders auth_headers(const std::optional<std::string>& token) {
  HttpHeaders h;
  if (token) h.emplace("Authorization", "Bearer " + *token);
  return h;
}

HttpResponse post_with_retries(Transport& transport, RateLimiter& limiter, Clock& clock,
                               const EndpointConfig& config, const std::string& url, const std::string& body,
                               const HttpHeaders& headers, int& attempts, std::atomic<std::size_t>* requests,
                               std::atomic<std::size_t>* retries) {
  HttpResponse last;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      if (retries) ++*retries;
      if (!config.retry_backoff_ms.empty()) {
        const auto idx = std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), config.retry_backoff_ms.size() - 1);
        clock.sleep_for(std::chrono::milliseconds(config.retry_backoff_ms[idx]));
      }
    }
    limiter.acquire();
    ++attempts;
    if (requests) ++*requests;
    last = transport.post(url, body, headers);
    if (last.status >= 200 && last.status < 300) return last;
    if (!retryable(last.status)) break;
  }
  std::string detail = last.status == 0 ? "transport error: " + last.error
                                        : "HTTP " + std::to_string(last.status) + ": " + last.body.substr(0, 200);
  throw EndpointError(url + " failed after " + std::to_string(attempts) + " attempt(s): " + detail, attempts,
                      last.status);
}

std::string chat_content_text(const nlohmann::json& response) {
  const auto& content = response.at("choices").at(0).at("message").at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  for (const auto& part : content) {
    if (part.value("type", "") == "text") text += part.value("text", "");
  }
  return text;
}

}  // namespace

std::string_view to_string(AdapterKind kind) noexcept {
  switch (kind) {
    case AdapterKind::kChat: return "chat";
    case AdapterKind::kNative: return "native";
    case AdapterKind::kMock: return "mock";
  }
  return "?";
}

std::optional<AdapterKind> adapter_kind_from_string(std::string_view s) noexcept {
  if (s == "chat") return AdapterKind::kChat;
  if (s == "native") return AdapterKind::kNative;
  if (s == "mock") return AdapterKind::kMock;
  return std::nullopt;
}

void EndpointConfig::validate() const {
  if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  if (!(requests_per_second > 0.0) || !std::isfinite(requests_per_second)) {
    throw ConfigError("requests_per_second must be positive");
  }
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  for (std::size_t i = 0; i < retry_backoff_ms.size(); ++i) {
    if (retry_backoff_ms[i] < 0) throw ConfigError("retry backoff entries must be >= 0");
    if (i && retry_backoff_ms[i] < retry_backoff_ms[i - 1]) throw ConfigError("retry backoff schedule must be non-decreasing");
  }
  if (timeout_ms <= 0) throw ConfigError("timeout_ms must be positive");
  if (adapter != AdapterKind::kMock) {
    if (base_url.empty()) throw ConfigError("base_url is required for the " + std::string(to_string(adapter)) + " adapter");
    split_url(base_url);
  }
  if (adapter == AdapterKind::kChat && model_id.empty()) throw ConfigError("model is required for the chat adapter");
}

std::string EndpointConfig::effective_model_id() const {
  if (!model_id.empty()) return model_id;
  return adapter == AdapterKind::kMock ? "mock" : std::string(to_string(adapter));
}

EndpointConfig EndpointConfig::from_json(const nlohmann::json& j) {
  EndpointConfig c;
  try {
    if (j.contains("adapter")) {
      const auto k = adapter_kind_from_string(j.at("adapter").get<std::string>());
      if (!k) throw ConfigError("unknown adapter " + j.at("adapter").get<std::string>());
      c.adapter = *k;
    }
    c.base_url = j.value("base_url", c.base_url);
    c.model_id = j.value("model", c.model_id);
    c.auth_token_env_name = j.value("auth_token_env_name", c.auth_token_env_name);
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    c.requests_per_second = j.value("requests_per_second", c.requests_per_second);
    c.max_retries = j.value("max_retries", c.max_retries);
    if (j.contains("retry_backoff_ms")) c.retry_backoff_ms = j.at("retry_backoff_ms").get<std::vector<int>>();
    c.cache_dir = j.value("cache_dir", std::string{});
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid endpoint config: ") + e.what());
  }
  c.validate();
  return c;
}

ojson EndpointConfig::to_json() const {
  ojson j;
  j["adapter"] = std::string(to_string(adapter));
  j["base_url"] = base_url;
  j["model"] = model_id;
  j["auth_token_env_name"] = auth_token_env_name;
  j["max_parallel"] = max_parallel;
  j["requests_per_second"] = requests_per_second;
  j["max_retries"] = max_retries;
  j["retry_backoff_ms"] = retry_backoff_ms;
  j["cache_dir"] = cache_dir.string();
  j["timeout_ms"] = timeout_ms;
  return j;
}

HttpTransport::HttpTransport(std::chrono::milliseconds timeout) : timeout_(timeout) {}

HttpResponse HttpTransport::post(const std::string& url, const std::string& body, const HttpHeaders& headers) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers h(headers.begin(), headers.end());
  auto res = client.Post(parts.path, h, body, "application/json");
  HttpResponse out;
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

void SystemClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

SystemClock& SystemClock::instance() {
  static SystemClock clock;
  return clock;
}

RateLimiter::RateLimiter(double requests_per_second, Clock& clock)
    : clock_(clock),
      spacing_(std::chrono::nanoseconds(static_cast<std::int64_t>(std::ceil(1e9 / requests_per_second)))) {}

void RateLimiter::acquire() {
  Clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = clock_.now();
    slot = next_slot_ ? std::max(now, *next_slot_) : now;
    next_slot_ = slot + spacing_;
  }
  if (slot > clock_.now()) clock_.sleep_until(slot);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (enabled()) std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::optional<ScorerResponse> ResponseCache::get(const std::string& key) const {
  if (!enabled()) return std::nullopt;
  const auto path = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  try {
    ScorerResponse r;
    r.score = j.at("score").get<int>();
    r.raw_score = j.value("raw_score", static_cast<double>(r.score));
    r.rationale = j.value("rationale", "");
    r.raw = j.value("raw", "");
    r.model_id = j.value("model_id", "");
    if (r.score < 1 || r.score > 10) return std::nullopt;
    return r;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

void ResponseCache::put(const std::string& key, const ScorerResponse& response) const {
  if (!enabled()) return;
  ojson j;
  j["score"] = response.score;
  j["raw_score"] = response.raw_score;
  j["rationale"] = response.rationale;
  j["raw"] = response.raw;
  j["model_id"] = response.model_id;
  write_file_atomic(path_for(key), j.dump() + "\n");
}

std::string cache_key(const PromptPayload& payload, std::string_view model_id) {
  std::string material = payload.canonical();
  material += "\nmodel:";
  material += model_id;
  return hex16(fnv1a64(material));
}

EndpointError::EndpointError(std::string detail, int attempts, int last_status)
    : std::runtime_error(std::move(detail)), attempts_(attempts), last_status_(last_status) {}

ScoringClient::ScoringClient(EndpointConfig config, Rubric rubric, ClientOptions options)
    : config_(std::move(config)),
      rubric_(std::move(rubric)),
      transport_(options.transport ? options.transport
                                   : std::make_shared<HttpTransport>(std::chrono::milliseconds(config_.timeout_ms))),
      clock_(options.clock ? options.clock : &SystemClock::instance()),
      limiter_(config_.requests_per_second, *clock_),
      cache_(config_.cache_dir),
      timestamp_(options.timestamp ? options.timestamp : utc_timestamp_now) {
  config_.validate();
  rubric_.validate();
  if (config_.adapter != AdapterKind::kMock) token_ = resolve_token(config_, options);
}

HttpHeaders ScoringClient::headers() const { return auth_headers(token_); }

HttpResponse ScoringClient::post_with_retries(const std::string& url, const std::string& body, int& attempts) {
  return sieve::post_with_retries(*transport_, limiter_, *clock_, config_, url, body, headers(), attempts, &requests_,
                                  &retries_);
}

std::string ScoringClient::request_text(const PairRecord& rec, const PromptPayload& payload, int& attempts) {
  switch (config_.adapter) {
    case AdapterKind::kMock: {
      ojson j{{"score", mock_score(rec)}, {"rationale", "deterministic mock score"}};
      return j.dump();
    }
    case AdapterKind::kNative: {
      ojson body{{"image_ref", rec.image_ref}, {"caption", rec.caption}, {"rubric", rubric_.to_json()}};
      return post_with_retries(join_url(config_.base_url, "/v1/score"), body.dump(), attempts).body;
    }
    case AdapterKind::kChat: {
      ojson body;
      body["model"] = config_.model_id;
      body["messages"] = ojson::array({ojson{
          {"role", "user"},
          {"content", ojson::array({ojson{{"type", "image_url"}, {"image_url", {{"url", payload.image_ref}}}},
                                    ojson{{"type", "text"}, {"text", payload.text}}})}}});
      body["temperature"] = 0;
      const auto res = post_with_retries(join_url(config_.base_url, "/chat/completions"), body.dump(), attempts);
      try {
        return chat_content_text(nlohmann::json::parse(res.body));
      } catch (const nlohmann::json::exception& e) {
        throw EndpointError(std::string("malformed chat completion response: ") + e.what(), attempts, res.status);
      }
    }
  }
  return {};
}

ScoreCall ScoringClient::score_pair(const PairRecord& rec) {
  const PromptPayload payload = build_score_prompt(rec, rubric_);
  const std::string model = config_.effective_model_id();
  const std::string key = cache_key(payload, model);
  ScoreCall call;
  std::optional<ScorerResponse> response = cache_.get(key);
  if (response) {
    call.cache_hit = true;
    ++cache_hits_;
  } else {
    const std::string text = request_text(rec, payload, call.attempts);
    response = parse_scorer_output(text);
    response->model_id = model;
    cache_.put(key, *response);
  }
  Annotation& a = call.annotation;
  a.pair_id = rec.id;
  a.score = response->score;
  a.rationale = response->rationale;
  a.annotator = model;
  a.review_state = ReviewState::kPending;
  a.ts = timestamp_();
  if (response->raw_score != static_cast<double>(response->score)) a.raw_score = response->raw_score;
  a.raw = response->raw;
  return call;
}

std::vector<ScoreOutcome> ScoringClient::score_many(std::span<const PairRecord> records) {
  std::vector<ScoreOutcome> out(records.size());
  parallel_for(records.size(), config_.max_parallel, [&](std::size_t i) {
    ScoreOutcome& o = out[i];
    try {
      o.call = score_pair(records[i]);
      o.status = ScoreOutcome::Status::kScored;
    } catch (const ScoreParseError& e) {
      o.status = ScoreOutcome::Status::kUnparseable;
      o.error = e.what();
      o.raw = e.raw();
    } catch (const std::exception& e) {
      o.status = ScoreOutcome::Status::kFailed;
      o.error = e.what();
    }
  });
  return out;
}

std::string ScoringClient::complete_text(const std::string& prompt) {
  switch (config_.adapter) {
    case AdapterKind::kMock: {
      static constexpr const char* kVerdicts[] = {"Verdict: A", "Verdict: B", "Verdict: tie"};
      return std::string("mock judgment\n") + kVerdicts[fnv1a64(prompt) % 3];
    }
    case AdapterKind::kNative:
      throw ConfigError("text completion needs the chat adapter");
    case AdapterKind::kChat: {
      ojson body;
      body["model"] = config_.model_id;
      body["messages"] = ojson::array({ojson{{"role", "user"}, {"content", prompt}}});
      body["temperature"] = 0;
      int attempts = 0;
      const auto res = post_with_retries(join_url(config_.base_url, "/chat/completions"), body.dump(), attempts);
      try {
        return chat_content_text(nlohmann::json::parse(res.body));
      } catch (const nlohmann::json::exception& e) {
        throw EndpointError(std::string("malformed chat completion response: ") + e.what(), attempts, res.status);
      }
    }
  }
  return {};
}

EndpointEmbedder::EndpointEmbedder(EndpointConfig config, ClientOptions options)
    : config_(std::move(config)),
      transport_(options.transport ? options.transport
                                   : std::make_shared<HttpTransport>(std::chrono::milliseconds(config_.timeout_ms))),
      clock_(options.clock ? options.clock : &SystemClock::instance()),
      limiter_(config_.requests_per_second, *clock_) {
  if (config_.base_url.empty()) throw ConfigError("embedder endpoint needs base_url");
  token_ = resolve_token(config_, options);
}

EmbeddingVector EndpointEmbedder::fetch(std::string_view kind, const std::string& content) {
  ojson body{{"kind", kind}, {"content", content}};
  int attempts = 0;
  HttpResponse res;
  try {
    res = post_with_retries(*transport_, limiter_, *clock_, config_, join_url(config_.base_url, "/v1/embed"),
                            body.dump(), auth_headers(token_), attempts, nullptr, nullptr);
  } catch (const EndpointError& e) {
    throw EmbeddingError(e.what());
  }
  const auto j = nlohmann::json::parse(res.body, nullptr, false);
  if (j.is_discarded() || !j.contains("embedding") || !j.at("embedding").is_array()) {
    throw EmbeddingError("embedder response lacks an 'embedding' array");
  }
  EmbeddingVector v;
  for (const auto& x : j.at("embedding")) {
    if (!x.is_number()) throw EmbeddingError("non-numeric embedding entry");
    v.push_back(x.get<double>());
  }
  return v;
}

EmbeddingPair EndpointEmbedder::embed(const PairRecord& rec) {
  return {fetch("image", rec.image_ref), fetch("text", rec.caption)};
}

void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, parallelism)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace sieve
