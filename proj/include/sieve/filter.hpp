#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sieve/manifest.hpp"

namespace sieve {

inline constexpr int kScoreMin = 1;
inline constexpr int kScoreMax = 10;
inline constexpr int kDefaultThreshold = 9;

class FilterError : public std::runtime_error {
 public:
  enum class Kind { kSampleTooLarge, kInvalidThreshold, kInvalidBucketSpec, kScoreOutOfRange, kMissingScores };

  FilterError(Kind kind, std::string detail, std::vector<std::string> ids = {});
  Kind kind() const noexcept { return kind_; }
  /// Offending pair ids, for kMissingScores and kScoreOutOfRange.
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  Kind kind_;
  std::vector<std::string> ids_;
};

struct ScoredId {
  std::string id;
  int score = 0;
};

/// Scores in parent-manifest order.
using ScoreTable = std::vector<ScoredId>;

struct Provenance {
  std::optional<int> threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> bucket;
  /// Digest of the parent manifest (see manifest_digest).
  std::string parent;
  std::string created_ts;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct SplitManifest {
  /// full | filtered | random | bucket:<lo>-<hi>
  std::string name;
  std::vector<std::string> pair_ids;
  Provenance provenance;

  std::size_t size() const noexcept { return pair_ids.size(); }
  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

/// Inclusive score range.
struct ScoreRange {
  int lo = kScoreMin;
  int hi = kScoreMax;

  bool contains(int score) const noexcept { return score >= lo && score <= hi; }
  std::string label() const;
  friend bool operator==(const ScoreRange&, const ScoreRange&) = default;
};

struct BucketSpec {
  std::vector<ScoreRange> ranges;

  /// 1-3, 4-6, 7-8, 9-10
  static BucketSpec standard();
  /// Comma-separated inclusive ranges, e.g. "1-3,4-6,7-8,9-10" (a lone "5" is 5-5).
  static BucketSpec parse(std::string_view text);

  /// Ranges must be ordered, disjoint and jointly cover [1,10].
  void validate() const;
};

struct Bucket {
  ScoreRange range;
  std::vector<std::string> pair_ids;
};

struct Splits {
  SplitManifest full;
  SplitManifest filtered;
  SplitManifest random;
};

/// FNV-1a-64 over the newline-joined ids of a manifest, hex encoded.
std::string manifest_digest(const Manifest& m);

void validate_threshold(int threshold);

SplitManifest apply_threshold(const ScoreTable& scores, int threshold, std::string parent_digest = {},
                              std::string created_ts = {});

/// Sorts ids, then runs a partial Fisher–Yates shuffle driven by
/// splitmix64(seed): for i < n, swap i with i + next() mod (N - i).
/// Returns the first n ids in selection order.
SplitManifest sample_random(std::span<const std::string> parent_ids, std::size_t n, std::uint64_t seed,
                            std::string parent_digest = {}, std::string created_ts = {});

std::vector<Bucket> bucketize(const ScoreTable& scores, const BucketSpec& spec = BucketSpec::standard());

/// full = parent, filtered = score >= threshold, random = seeded sample of
/// parent with |random| == |filtered|.
Splits build_splits(const Manifest& parent, const ScoreTable& scores, int threshold, std::uint64_t seed,
                    std::string created_ts = {});

SplitManifest bucket_split(const Bucket& bucket, std::string parent_digest, std::string created_ts);

/// Resolves split ids against the parent, keeping split order.
Manifest materialize(const SplitManifest& split, const Manifest& parent);

std::string provenance_json(const SplitManifest& split);

/// File stem used on disk: "bucket:1-3" becomes "bucket_1-3".
std::string split_file_stem(std::string_view name);

/// Writes `<dir>/<stem>.tsv` (tsv3) and `<dir>/<stem>.provenance.json`.
void write_split(const std::filesystem::path& dir, const SplitManifest& split, const Manifest& parent);

struct LoadedSplit {
  SplitManifest split;
  Manifest records;
};

/// Reads a split written by write_split; `tsv_path` is the .tsv file. The
/// provenance sidecar is optional; without it the name is the file stem.
LoadedSplit read_split(const std::filesystem::path& tsv_path);

}  // namespace sieve
