#include "sieve/annotation.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <ostream>
#include <sstream>
#include <utility>

#include "sieve/io.hpp"

namespace sieve {

using ojson = nlohmann::ordered_json;

namespace {

std::string kind_label(AnnotationError::Kind kind) {
  switch (kind) {
    case AnnotationError::Kind::kNotFound: return "NotFound";
    case AnnotationError::Kind::kAlreadyReviewed: return "AlreadyReviewed";
    case AnnotationError::Kind::kInvalid: return "InvalidAnnotation";
    case AnnotationError::Kind::kCorruptJournal: return "CorruptJournal";
    case AnnotationError::Kind::kEmptyExport: return "EmptyExport";
    case AnnotationError::Kind::kIo: return "Io";
  }
  return "AnnotationError";
}

bool score_in_range(int s) noexcept { return s >= kScoreMin && s <= kScoreMax; }

}  // namespace

std::string_view to_string(ReviewState s) noexcept {
  switch (s) {
    case ReviewState::kPending: return "pending";
    case ReviewState::kAccepted: return "accepted";
    case ReviewState::kOverridden: return "overridden";
  }
  return "?";
}

std::optional<ReviewState> review_state_from_string(std::string_view s) noexcept {
  if (s == "pending") return ReviewState::kPending;
  if (s == "accepted") return ReviewState::kAccepted;
  if (s == "overridden") return ReviewState::kOverridden;
  return std::nullopt;
}

AnnotationError::AnnotationError(Kind kind, std::string detail)
    : std::runtime_error(kind_label(kind) + ": " + detail), kind_(kind) {}

void Annotation::validate() const {
  auto fail = [&](const std::string& why) {
    throw AnnotationError(AnnotationError::Kind::kInvalid, "pair " + pair_id + ": " + why);
  };
  if (pair_id.empty()) fail("empty pair_id");
  if (!score_in_range(score)) fail("score " + std::to_string(score) + " outside [1,10]");
  const bool overridden = review_state == ReviewState::kOverridden;
  if (overridden != override_score.has_value() || overridden != override_rationale.has_value()) {
    fail("override fields must be present exactly when overridden");
  }
  if (override_score && !score_in_range(*override_score)) fail("override score outside [1,10]");
}

ojson Annotation::to_json() const {
  ojson j;
  j["pair_id"] = pair_id;
  j["score"] = score;
  j["rationale"] = rationale;
  j["annotator"] = annotator;
  j["review_state"] = std::string(to_string(review_state));
  if (override_score) j["override_score"] = *override_score;
  if (override_rationale) j["override_rationale"] = *override_rationale;
  if (reviewer) j["reviewer"] = *reviewer;
  if (raw_score) j["raw_score"] = *raw_score;
  if (raw) j["raw"] = *raw;
  j["ts"] = ts;
  return j;
}

Annotation Annotation::from_json(const nlohmann::json& j) {
  Annotation a;
  try {
    a.pair_id = j.at("pair_id").get<std::string>();
    a.score = j.at("score").get<int>();
    a.rationale = j.value("rationale", std::string{});
    a.annotator = j.value("annotator", std::string{});
    const auto state = review_state_from_string(j.value("review_state", std::string("pending")));
    if (!state) throw AnnotationError(AnnotationError::Kind::kInvalid, "unknown review_state");
    a.review_state = *state;
    if (j.contains("override_score")) a.override_score = j.at("override_score").get<int>();
    if (j.contains("override_rationale")) a.override_rationale = j.at("override_rationale").get<std::string>();
    if (j.contains("reviewer")) a.reviewer = j.at("reviewer").get<std::string>();
    if (j.contains("raw_score")) a.raw_score = j.at("raw_score").get<double>();
    if (j.contains("raw")) a.raw = j.at("raw").get<std::string>();
    a.ts = j.value("ts", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw AnnotationError(AnnotationError::Kind::kInvalid, e.what());
  }
  a.validate();
  return a;
}

AnnotationStore AnnotationStore::open(const std::filesystem::path& journal) { return open(journal, Options{}); }

AnnotationStore AnnotationStore::open(const std::filesystem::path& journal, Options options) {
  AnnotationStore store;
  store.path_ = journal;
  store.options_ = std::move(options);
  std::string contents;
  if (std::filesystem::exists(journal)) {
    contents = read_file(journal);
  } else if (store.options_.read_only) {
    throw AnnotationError(AnnotationError::Kind::kIo, "journal not found: " + journal.string());
  }
  store.replay(contents);
  if (!store.options_.read_only) {
    if (journal.has_parent_path()) std::filesystem::create_directories(journal.parent_path());
    store.fd_ = ::open(journal.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (store.fd_ < 0) {
      throw AnnotationError(AnnotationError::Kind::kIo, "cannot open " + journal.string() + ": " + std::strerror(errno));
    }
    if (store.dropped_tail_) {
      // drop the torn tail so the next append starts on a line boundary
      if (::ftruncate(store.fd_, static_cast<off_t>(store.valid_prefix_)) != 0) {
        throw AnnotationError(AnnotationError::Kind::kIo, "cannot truncate torn journal tail");
      }
    }
  }
  return store;
}

AnnotationStore AnnotationStore::in_memory() { return AnnotationStore{}; }

AnnotationStore::AnnotationStore(AnnotationStore&& other) noexcept
    : path_(std::move(other.path_)),
      options_(std::move(other.options_)),
      fd_(std::exchange(other.fd_, -1)),
      dropped_tail_(other.dropped_tail_),
      valid_prefix_(other.valid_prefix_),
      records_(other.records_),
      order_(std::move(other.order_)),
      index_(std::move(other.index_)) {}

AnnotationStore& AnnotationStore::operator=(AnnotationStore&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(other.path_);
    options_ = std::move(other.options_);
    fd_ = std::exchange(other.fd_, -1);
    dropped_tail_ = other.dropped_tail_;
    valid_prefix_ = other.valid_prefix_;
    records_ = other.records_;
    order_ = std::move(other.order_);
    index_ = std::move(other.index_);
  }
  return *this;
}

AnnotationStore::~AnnotationStore() {
  if (fd_ >= 0) ::close(fd_);
}

void AnnotationStore::replay(std::string_view contents) {
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < contents.size()) {
    ++line_no;
    const auto nl = contents.find('\n', start);
    const bool terminated = nl != std::string_view::npos;
    const auto line = contents.substr(start, terminated ? nl - start : std::string_view::npos);
    const std::size_t next = terminated ? nl + 1 : contents.size();
    const bool last = next >= contents.size();
    start = next;
    if (trim(line).empty()) {
      if (terminated) valid_prefix_ = next;
      continue;
    }
    if (!terminated) {
      dropped_tail_ = 1;
      break;
    }
    try {
      index_record(Annotation::from_json(nlohmann::json::parse(line)));
      valid_prefix_ = next;
    } catch (const std::exception& e) {
      if (last) {
        dropped_tail_ = 1;
        break;
      }
      throw AnnotationError(AnnotationError::Kind::kCorruptJournal,
                            path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void AnnotationStore::index_record(Annotation a) {
  ++records_;
  auto it = index_.find(a.pair_id);
  if (it == index_.end()) {
    order_.push_back(a.pair_id);
    index_.emplace(a.pair_id, std::move(a));
  } else {
    it->second = std::move(a);
  }
}

std::string AnnotationStore::now() const { return options_.clock ? options_.clock() : utc_timestamp_now(); }

void AnnotationStore::append(const Annotation& a) {
  a.validate();
  std::unique_lock lock(mu_);
  append_unlocked(a);
}

void AnnotationStore::append_unlocked(const Annotation& a) {
  if (options_.read_only) throw AnnotationError(AnnotationError::Kind::kIo, "store is read-only");
  std::string line = a.to_json().dump();
  line.push_back('\n');
  if (fd_ >= 0) {
    const off_t before = ::lseek(fd_, 0, SEEK_END);
    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        // best effort; a partial line left behind is dropped on the next open
        [[maybe_unused]] const int rc = before >= 0 ? ::ftruncate(fd_, before) : 0;
        throw AnnotationError(AnnotationError::Kind::kIo, std::string("journal write failed: ") + std::strerror(errno));
      }
      written += static_cast<std::size_t>(n);
    }
    if (options_.sync && ::fdatasync(fd_) != 0) {
      throw AnnotationError(AnnotationError::Kind::kIo, std::string("journal sync failed: ") + std::strerror(errno));
    }
  }
  index_record(a);
}

std::optional<Annotation> AnnotationStore::lookup(std::string_view pair_id) const {
  std::shared_lock lock(mu_);
  const auto it = index_.find(std::string(pair_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Annotation AnnotationStore::review(std::string_view pair_id, const ReviewDecision& decision,
                                   std::string_view reviewer) {
  std::unique_lock lock(mu_);
  const auto it = index_.find(std::string(pair_id));
  if (it == index_.end()) throw AnnotationError(AnnotationError::Kind::kNotFound, std::string(pair_id));
  if (it->second.review_state != ReviewState::kPending) {
    throw AnnotationError(AnnotationError::Kind::kAlreadyReviewed,
                          std::string(pair_id) + " is " + std::string(to_string(it->second.review_state)));
  }
  Annotation next = it->second;
  if (decision.action == ReviewDecision::Action::kOverride) {
    if (!score_in_range(decision.score)) {
      throw AnnotationError(AnnotationError::Kind::kInvalid,
                            "override score " + std::to_string(decision.score) + " outside [1,10]");
    }
    next.review_state = ReviewState::kOverridden;
    next.override_score = decision.score;
    next.override_rationale = decision.rationale;
  } else {
    next.review_state = ReviewState::kAccepted;
  }
  next.reviewer = std::string(reviewer);
  next.ts = now();
  next.validate();
  append_unlocked(next);
  return next;
}

std::vector<std::string> AnnotationStore::pair_ids() const {
  std::shared_lock lock(mu_);
  return order_;
}

std::vector<Annotation> AnnotationStore::latest(std::optional<ReviewState> state, std::size_t limit) const {
  std::shared_lock lock(mu_);
  std::vector<Annotation> out;
  for (const auto& id : order_) {
    if (out.size() >= limit) break;
    const auto& a = index_.at(id);
    if (!state || a.review_state == *state) out.push_back(a);
  }
  return out;
}

ReviewCounts AnnotationStore::counts() const {
  std::shared_lock lock(mu_);
  ReviewCounts c;
  for (const auto& [id, a] : index_) {
    switch (a.review_state) {
      case ReviewState::kPending: ++c.pending; break;
      case ReviewState::kAccepted: ++c.accepted; break;
      case ReviewState::kOverridden: ++c.overridden; break;
    }
  }
  return c;
}

std::size_t AnnotationStore::journal_records() const {
  std::shared_lock lock(mu_);
  return records_;
}

ScoreTable effective_scores(const Manifest& manifest, const AnnotationStore& store) {
  ScoreTable out;
  out.reserve(manifest.size());
  std::vector<std::string> missing;
  for (const auto& r : manifest.records) {
    if (auto a = store.lookup(r.id)) {
      out.push_back({r.id, a->effective_score()});
    } else {
      missing.push_back(r.id);
    }
  }
  if (!missing.empty()) {
    throw FilterError(FilterError::Kind::kMissingScores,
                      std::to_string(missing.size()) + " manifest id(s) have no annotation", std::move(missing));
  }
  return out;
}

ExportSummary export_sft(const AnnotationStore& store, const Manifest& manifest, std::ostream& out,
                         const Hyperparams& hyperparams) {
  ExportSummary summary;
  std::ostringstream buf;
  for (const auto& r : manifest.records) {
    const auto a = store.lookup(r.id);
    if (!a) {
      ++summary.unannotated;
      continue;
    }
    if (a->review_state == ReviewState::kPending) {
      ++summary.pending_excluded;
      continue;
    }
    ojson row;
    row["image_ref"] = r.image_ref;
    row["caption"] = r.caption;
    row["score"] = a->effective_score();
    row["rationale"] = a->effective_rationale();
    row["meta"]["teacher"] = a->annotator;
    row["meta"]["hyperparams_hint"] = {{"lr", hyperparams.learning_rate},
                                       {"batch_size", hyperparams.batch_size},
                                       {"epochs", hyperparams.epochs},
                                       {"scheduler", hyperparams.scheduler}};
    buf << row.dump() << '\n';
    ++summary.exported;
  }
  if (summary.exported == 0) {
    throw AnnotationError(AnnotationError::Kind::kEmptyExport,
                          "no accepted or overridden annotations (" + std::to_string(summary.pending_excluded) +
                              " pending)");
  }
  out << buf.str();
  return summary;
}

}  // namespace sieve
