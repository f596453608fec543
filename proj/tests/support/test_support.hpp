#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iterator>
#include <filesystem>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "sieve/endpoint.hpp"

namespace sieve::testing {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sieve-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Time only moves when someone sleeps.
class FakeClock final : public Clock {
 public:
  time_point now() override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void sleep_until(time_point t) override {
    std::lock_guard lock(mu_);
    sleeps_.push_back(t - now_);
    if (t > now_) now_ = t;
  }
  std::vector<std::chrono::nanoseconds> sleeps() {
    std::lock_guard lock(mu_);
    return sleeps_;
  }

 private:
  std::mutex mu_;
  time_point now_{};
  std::vector<std::chrono::nanoseconds> sleeps_;
};

struct RecordedRequest {
  std::string url;
  std::string body;
  HttpHeaders headers;
};

// Replays scripted responses in order; the last one repeats.
class ScriptedTransport final : public Transport {
 public:
  explicit ScriptedTransport(std::vector<HttpResponse> script) : script_(script.begin(), script.end()) {}

  HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) override {
    std::lock_guard lock(mu_);
    requests_.push_back({url, body, headers});
    if (script_.size() > 1) {
      HttpResponse r = script_.front();
      script_.pop_front();
      return r;
    }
    return script_.empty() ? HttpResponse{0, "", "no script"} : script_.front();
  }

  std::vector<RecordedRequest> requests() {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  std::mutex mu_;
  std::deque<HttpResponse> script_;
  std::vector<RecordedRequest> requests_;
};

inline std::string chat_reply(const std::string& content) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}});
  return j.dump();
}

}  // namespace sieve::testing

namespace sieve::testing {

// Compares against a committed golden file. With SIEVE_UPDATE_GOLDEN=1 the
// file is rewritten instead and the comparison trivially passes.
inline bool matches_golden(const std::filesystem::path& golden, const std::string& actual) {
  if (const char* update = std::getenv("SIEVE_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    std::ofstream(golden, std::ios::binary) << actual;
    return true;
  }
  std::ifstream in(golden, std::ios::binary);
  if (!in) return false;
  std::string expected((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return expected == actual;
}

}  // namespace sieve::testing
