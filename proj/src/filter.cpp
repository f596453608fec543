#include "sieve/filter.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "sieve/hash.hpp"
#include "sieve/io.hpp"

namespace sieve {

using json = nlohmann::ordered_json;

namespace {

std::string kind_label(FilterError::Kind kind) {
  switch (kind) {
    case FilterError::Kind::kSampleTooLarge: return "SampleTooLarge";
    case FilterError::Kind::kInvalidThreshold: return "InvalidThreshold";
    case FilterError::Kind::kInvalidBucketSpec: return "InvalidBucketSpec";
    case FilterError::Kind::kScoreOutOfRange: return "ScoreOutOfRange";
    case FilterError::Kind::kMissingScores: return "MissingScores";
  }
  return "FilterError";
}

void check_scores(const ScoreTable& scores) {
  std::vector<std::string> bad;
  for (const auto& s : scores) {
    if (s.score < kScoreMin || s.score > kScoreMax) bad.push_back(s.id);
  }
  if (!bad.empty()) {
    throw FilterError(FilterError::Kind::kScoreOutOfRange,
                      std::to_string(bad.size()) + " score(s) outside [1,10]", std::move(bad));
  }
}

int parse_int(std::string_view text) {
  text = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw FilterError(FilterError::Kind::kInvalidBucketSpec, "not an integer: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

FilterError::FilterError(Kind kind, std::string detail, std::vector<std::string> ids)
    : std::runtime_error(kind_label(kind) + ": " + detail), kind_(kind), ids_(std::move(ids)) {}

std::string ScoreRange::label() const { return std::to_string(lo) + "-" + std::to_string(hi); }

BucketSpec BucketSpec::standard() { return BucketSpec{{{1, 3}, {4, 6}, {7, 8}, {9, 10}}}; }

BucketSpec BucketSpec::parse(std::string_view text) {
  BucketSpec spec;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto part = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    const auto dash = part.find('-');
    ScoreRange r;
    if (dash == std::string_view::npos) {
      r.lo = r.hi = parse_int(part);
    } else {
      r.lo = parse_int(part.substr(0, dash));
      r.hi = parse_int(part.substr(dash + 1));
    }
    spec.ranges.push_back(r);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  spec.validate();
  return spec;
}

void BucketSpec::validate() const {
  if (ranges.empty()) throw FilterError(FilterError::Kind::kInvalidBucketSpec, "no ranges");
  int expected_lo = kScoreMin;
  for (const auto& r : ranges) {
    if (r.lo > r.hi) {
      throw FilterError(FilterError::Kind::kInvalidBucketSpec, "empty range " + r.label());
    }
    if (r.lo != expected_lo) {
      throw FilterError(FilterError::Kind::kInvalidBucketSpec,
                        "ranges must be ordered, disjoint and contiguous; expected a range starting at " +
                            std::to_string(expected_lo) + ", got " + r.label());
    }
    expected_lo = r.hi + 1;
  }
  if (expected_lo != kScoreMax + 1) {
    throw FilterError(FilterError::Kind::kInvalidBucketSpec, "ranges do not cover up to 10");
  }
}

std::string manifest_digest(const Manifest& m) {
  std::string joined;
  for (const auto& r : m.records) {
    joined += r.id;
    joined.push_back('\n');
  }
  return hex16(fnv1a64(joined));
}

void validate_threshold(int threshold) {
  if (threshold < kScoreMin || threshold > kScoreMax) {
    throw FilterError(FilterError::Kind::kInvalidThreshold,
                      "threshold " + std::to_string(threshold) + " outside [1,10]");
  }
}

SplitManifest apply_threshold(const ScoreTable& scores, int threshold, std::string parent_digest,
                              std::string created_ts) {
  validate_threshold(threshold);
  check_scores(scores);
  SplitManifest out;
  out.name = "filtered";
  out.provenance.threshold = threshold;
  out.provenance.parent = std::move(parent_digest);
  out.provenance.created_ts = std::move(created_ts);
  for (const auto& s : scores) {
    if (s.score >= threshold) out.pair_ids.push_back(s.id);
  }
  return out;
}

SplitManifest sample_random(std::span<const std::string> parent_ids, std::size_t n, std::uint64_t seed,
                            std::string parent_digest, std::string created_ts) {
  if (n > parent_ids.size()) {
    throw FilterError(FilterError::Kind::kSampleTooLarge,
                      "requested " + std::to_string(n) + " of " + std::to_string(parent_ids.size()));
  }
  std::vector<std::string> ids(parent_ids.begin(), parent_ids.end());
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(seed);
  const std::size_t total = ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (total - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  SplitManifest out;
  out.name = "random";
  out.pair_ids = std::move(ids);
  out.provenance.seed = seed;
  out.provenance.parent = std::move(parent_digest);
  out.provenance.created_ts = std::move(created_ts);
  return out;
}

std::vector<Bucket> bucketize(const ScoreTable& scores, const BucketSpec& spec) {
  spec.validate();
  check_scores(scores);
  std::vector<Bucket> buckets;
  buckets.reserve(spec.ranges.size());
  for (const auto& r : spec.ranges) buckets.push_back(Bucket{r, {}});
  for (const auto& s : scores) {
    for (auto& b : buckets) {
      if (b.range.contains(s.score)) {
        b.pair_ids.push_back(s.id);
        break;
      }
    }
  }
  return buckets;
}

Splits build_splits(const Manifest& parent, const ScoreTable& scores, int threshold, std::uint64_t seed,
                    std::string created_ts) {
  validate_threshold(threshold);
  std::unordered_set<std::string> scored;
  for (const auto& s : scores) scored.insert(s.id);
  std::vector<std::string> missing;
  std::vector<std::string> parent_ids;
  parent_ids.reserve(parent.size());
  for (const auto& r : parent.records) {
    if (!scored.contains(r.id)) missing.push_back(r.id);
    parent_ids.push_back(r.id);
  }
  if (!missing.empty()) {
    throw FilterError(FilterError::Kind::kMissingScores,
                      std::to_string(missing.size()) + " manifest id(s) have no score", std::move(missing));
  }
  const std::unordered_set<std::string> parent_set(parent_ids.begin(), parent_ids.end());
  std::vector<std::string> foreign;
  for (const auto& s : scores) {
    if (!parent_set.contains(s.id)) foreign.push_back(s.id);
  }
  if (!foreign.empty()) {
    throw FilterError(FilterError::Kind::kMissingScores,
                      std::to_string(foreign.size()) + " scored id(s) are not in the manifest", std::move(foreign));
  }

  // Score order must follow the parent for the filtered split to keep parent order.
  std::unordered_map<std::string, int> by_id;
  for (const auto& s : scores) by_id[s.id] = s.score;
  ScoreTable ordered;
  ordered.reserve(parent.size());
  for (const auto& id : parent_ids) ordered.push_back({id, by_id.at(id)});

  const std::string digest = manifest_digest(parent);
  Splits out;
  out.full.name = "full";
  out.full.pair_ids = parent_ids;
  out.full.provenance.parent = digest;
  out.full.provenance.created_ts = created_ts;
  out.filtered = apply_threshold(ordered, threshold, digest, created_ts);
  out.random = sample_random(parent_ids, out.filtered.size(), seed, digest, created_ts);
  return out;
}

SplitManifest bucket_split(const Bucket& bucket, std::string parent_digest, std::string created_ts) {
  SplitManifest out;
  out.name = "bucket:" + bucket.range.label();
  out.pair_ids = bucket.pair_ids;
  out.provenance.bucket = bucket.range.label();
  out.provenance.parent = std::move(parent_digest);
  out.provenance.created_ts = std::move(created_ts);
  return out;
}

Manifest materialize(const SplitManifest& split, const Manifest& parent) {
  std::unordered_map<std::string_view, const PairRecord*> index;
  for (const auto& r : parent.records) index.emplace(r.id, &r);
  Manifest out;
  out.records.reserve(split.size());
  std::vector<std::string> missing;
  for (const auto& id : split.pair_ids) {
    const auto it = index.find(id);
    if (it == index.end()) {
      missing.push_back(id);
      continue;
    }
    out.records.push_back(*it->second);
  }
  if (!missing.empty()) {
    throw FilterError(FilterError::Kind::kMissingScores,
                      std::to_string(missing.size()) + " split id(s) not in parent manifest", std::move(missing));
  }
  return out;
}

std::string provenance_json(const SplitManifest& split) {
  json j;
  j["name"] = split.name;
  j["count"] = split.size();
  if (split.provenance.threshold) j["threshold"] = *split.provenance.threshold;
  if (split.provenance.seed) j["seed"] = *split.provenance.seed;
  if (split.provenance.bucket) j["bucket"] = *split.provenance.bucket;
  j["parent"] = split.provenance.parent;
  j["created_ts"] = split.provenance.created_ts;
  return j.dump(2) + "\n";
}

std::string split_file_stem(std::string_view name) {
  std::string out(name);
  std::replace(out.begin(), out.end(), ':', '_');
  return out;
}

void write_split(const std::filesystem::path& dir, const SplitManifest& split, const Manifest& parent) {
  const auto stem = split_file_stem(split.name);
  write_manifest_file(dir / (stem + ".tsv"), materialize(split, parent), ManifestFormat::kTsv3);
  write_file_atomic(dir / (stem + ".provenance.json"), provenance_json(split));
}

LoadedSplit read_split(const std::filesystem::path& tsv_path) {
  LoadedSplit out;
  out.records = read_manifest_file(tsv_path, ManifestFormat::kTsv3);
  for (const auto& r : out.records.records) out.split.pair_ids.push_back(r.id);
  auto sidecar = tsv_path;
  sidecar.replace_extension(".provenance.json");
  out.split.name = tsv_path.stem().string();
  if (std::filesystem::exists(sidecar)) {
    const json j = json::parse(read_file(sidecar));
    out.split.name = j.value("name", out.split.name);
    if (j.contains("threshold")) out.split.provenance.threshold = j.at("threshold").get<int>();
    if (j.contains("seed")) out.split.provenance.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("bucket")) out.split.provenance.bucket = j.at("bucket").get<std::string>();
    out.split.provenance.parent = j.value("parent", "");
    out.split.provenance.created_ts = j.value("created_ts", "");
  }
  return out;
}

}  // namespace sieve
