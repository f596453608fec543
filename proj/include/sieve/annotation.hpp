#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sieve/filter.hpp"
#include "sieve/manifest.hpp"

namespace sieve {

enum class ReviewState { kPending, kAccepted, kOverridden };

std::string_view to_string(ReviewState s) noexcept;
std::optional<ReviewState> review_state_from_string(std::string_view s) noexcept;

/// A score with its rationale and review status. override_* are set iff the
/// state is overridden.
struct Annotation {
  std::string pair_id;
  int score = 0;
  std::string rationale;
  /// model id, or "human:<name>"
  std::string annotator;
  ReviewState review_state = ReviewState::kPending;
  std::optional<int> override_score;
  std::optional<std::string> override_rationale;
  std::string ts;
  std::optional<std::string> reviewer;
  /// Unrounded score and original model text, kept for audit.
  std::optional<double> raw_score;
  std::optional<std::string> raw;

  int effective_score() const noexcept { return override_score ? *override_score : score; }
  const std::string& effective_rationale() const noexcept {
    return override_rationale ? *override_rationale : rationale;
  }

  /// Throws AnnotationError(kInvalid) when an invariant is broken.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static Annotation from_json(const nlohmann::json& j);

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

class AnnotationError : public std::runtime_error {
 public:
  enum class Kind { kNotFound, kAlreadyReviewed, kInvalid, kCorruptJournal, kEmptyExport, kIo };

  AnnotationError(Kind kind, std::string detail);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct ReviewDecision {
  enum class Action { kAccept, kOverride };

  Action action = Action::kAccept;
  int score = 0;
  std::string rationale;

  static ReviewDecision accept() { return {}; }
  static ReviewDecision override_with(int score, std::string rationale) {
    return {Action::kOverride, score, std::move(rationale)};
  }
};

struct ReviewCounts {
  std::size_t pending = 0;
  std::size_t accepted = 0;
  std::size_t overridden = 0;

  std::size_t total() const noexcept { return pending + accepted + overridden; }
};

/// Append-only JSONL journal with an in-memory latest-wins index.
///
/// Opening replays the journal. A final line that is not LF-terminated or does
/// not parse is treated as a torn write: it is dropped and, when the store is
/// writable, truncated away before the next append. A bad line anywhere else
/// is reported as kCorruptJournal.
///
/// One writer at a time (appends are serialized internally); lookups may run
/// concurrently with appends.
class AnnotationStore {
 public:
  struct Options {
    bool read_only = false;
    /// fdatasync after each append.
    bool sync = true;
    std::function<std::string()> clock;
  };

  static AnnotationStore open(const std::filesystem::path& journal);
  static AnnotationStore open(const std::filesystem::path& journal, Options options);
  /// Journal-less store, for tests and dry runs.
  static AnnotationStore in_memory();

  AnnotationStore(AnnotationStore&&) noexcept;
  AnnotationStore& operator=(AnnotationStore&&) noexcept;
  ~AnnotationStore();

  void append(const Annotation& a);
  std::optional<Annotation> lookup(std::string_view pair_id) const;

  Annotation review(std::string_view pair_id, const ReviewDecision& decision, std::string_view reviewer);

  /// Pair ids in first-seen journal order.
  std::vector<std::string> pair_ids() const;
  std::vector<Annotation> latest(std::optional<ReviewState> state = std::nullopt,
                                 std::size_t limit = static_cast<std::size_t>(-1)) const;
  ReviewCounts counts() const;
  std::size_t journal_records() const;
  /// Number of torn trailing lines dropped while opening (0 or 1).
  std::size_t dropped_tail_lines() const noexcept { return dropped_tail_; }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  AnnotationStore() = default;
  void replay(std::string_view contents);
  void index_record(Annotation a);
  void append_unlocked(const Annotation& a);
  std::string now() const;

  std::filesystem::path path_;
  Options options_;
  int fd_ = -1;
  std::size_t dropped_tail_ = 0;
  // Bytes of the journal that replayed cleanly.
  std::size_t valid_prefix_ = 0;
  std::size_t records_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Annotation> index_;
  mutable std::shared_mutex mu_;
};

/// Score table for a manifest, using effective (post-review) scores. Ids with no
/// annotation are reported through FilterError(kMissingScores).
ScoreTable effective_scores(const Manifest& manifest, const AnnotationStore& store);

struct Hyperparams {
  double learning_rate = 2e-6;
  int batch_size = 128;
  int epochs = 1;
  std::string scheduler = "cosine";
};

struct ExportSummary {
  std::size_t exported = 0;
  std::size_t pending_excluded = 0;
  /// Manifest pairs with no annotation at all.
  std::size_t unannotated = 0;
};

/// Writes one JSONL object per reviewed pair (accepted or overridden), in
/// manifest order. Pending annotations are skipped and counted. Throws
/// kEmptyExport when nothing qualifies.
ExportSummary export_sft(const AnnotationStore& store, const Manifest& manifest, std::ostream& out,
                         const Hyperparams& hyperparams = {});

}  // namespace sieve
