#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sieve/filter.hpp"
#include "sieve/manifest.hpp"
#include "sieve/stats.hpp"

namespace sieve {

using stats::EmbeddingVector;

struct EmbeddingPair {
  EmbeddingVector image;
  EmbeddingVector caption;
};

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Throws EmbeddingError (or StatsError) when the pair cannot be embedded.
  virtual EmbeddingPair embed(const PairRecord& rec) = 0;
};

enum class EmbeddingRole { kImage, kCaption };

inline constexpr std::size_t kMockEmbeddingDim = 16;

/// Unit vector of `dim` draws from splitmix64 seeded with FNV-1a-64(text).
EmbeddingVector mock_base_vector(std::string_view text, std::size_t dim = kMockEmbeddingDim);

/// Stand-in for an image/text encoder whose caption vector is pulled toward the
/// image vector as quality rises: caption = unit(a v(image) + (1-a) v(caption)),
/// a = quality / 10.
EmbeddingVector mock_embed(const PairRecord& rec, EmbeddingRole role, int quality,
                           std::size_t dim = kMockEmbeddingDim);

class MockEmbedder final : public Embedder {
 public:
  using QualityFn = std::function<int(const PairRecord&)>;

  explicit MockEmbedder(QualityFn quality, std::size_t dim = kMockEmbeddingDim);
  EmbeddingPair embed(const PairRecord& rec) override;

 private:
  QualityFn quality_;
  std::size_t dim_;
};

/// Embeddings loaded from JSONL rows {"pair_id", "image_embedding", "caption_embedding"}.
class FileEmbedder final : public Embedder {
 public:
  /// Throws EmbeddingError listing every malformed row (bad JSON, mismatched or
  /// inconsistent dimension, D < 2, non-finite entries, duplicate ids).
  static FileEmbedder load(const std::filesystem::path& path);
  static FileEmbedder parse(std::string_view jsonl);

  EmbeddingPair embed(const PairRecord& rec) override;
  bool contains(const std::string& pair_id) const { return rows_.contains(pair_id); }
  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::unordered_map<std::string, EmbeddingPair> rows_;
  std::size_t dim_ = 0;
};

struct ItemValue {
  std::string pair_id;
  double value = 0.0;
};

struct Exclusion {
  std::string pair_id;
  std::string reason;
};

struct AlignmentResult {
  /// Unset when no pair could be evaluated.
  std::optional<double> mean;
  std::vector<ItemValue> values;
  std::vector<Exclusion> excluded;

  std::vector<double> raw_values() const;
};

/// Mean image/caption cosine over the records; pairs whose embedding fails are
/// excluded and listed.
AlignmentResult mean_alignment(const std::vector<PairRecord>& records, Embedder& embedder);

struct BucketRow {
  ScoreRange range;
  std::size_t n = 0;
  std::optional<double> mean_alignment;
  std::size_t excluded = 0;
};

/// One row per bucket in edge order; empty buckets get n = 0 and no mean.
std::vector<BucketRow> bucket_alignment_table(const std::vector<Bucket>& buckets, const Manifest& parent,
                                              Embedder& embedder);

}  // namespace sieve
