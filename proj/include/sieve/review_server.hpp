#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "sieve/annotation.hpp"
#include "sieve/manifest.hpp"

namespace httplib {
class Server;
}

namespace sieve {

/// JSON review API over an annotation store:
///   GET  /api/queue?state=pending&limit=N   -> [{pair, annotation}]
///   GET  /api/pairs/{id}                    -> {pair, annotation}
///   POST /api/pairs/{id}/review             -> {annotation}
///   GET  /api/stats                         -> counts by review_state
/// `pair` is null when no manifest was supplied or the id is not in it.
/// Errors are {"error": kind, "message": text} with 400/404/409.
class ReviewService {
 public:
  ReviewService(AnnotationStore& store, const Manifest* manifest);

  /// Registers the API routes, plus static files from `static_dir` if given.
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = std::nullopt);

 private:
  AnnotationStore& store_;
  const Manifest* manifest_;
  std::unordered_map<std::string, const PairRecord*> pairs_;
};

}  // namespace sieve
