#include "sieve/alignment.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sieve/hash.hpp"
#include "sieve/io.hpp"

namespace sieve {

namespace {

EmbeddingVector normalized(EmbeddingVector v) {
  long double ss = 0.0L;
  for (double x : v) ss += static_cast<long double>(x) * x;
  const long double norm = std::sqrt(ss);
  for (double& x : v) x = static_cast<double>(x / norm);
  return v;
}

}  // namespace

EmbeddingVector mock_base_vector(std::string_view text, std::size_t dim) {
  SplitMix64 rng(fnv1a64(text));
  EmbeddingVector v(dim);
  for (double& x : v) x = rng.next_signed_unit();
  return normalized(std::move(v));
}

EmbeddingVector mock_embed(const PairRecord& rec, EmbeddingRole role, int quality, std::size_t dim) {
  EmbeddingVector image = mock_base_vector(rec.image_ref, dim);
  if (role == EmbeddingRole::kImage || quality >= 10) return image;
  const double alpha = quality / 10.0;
  const EmbeddingVector text = mock_base_vector(rec.caption, dim);
  EmbeddingVector mixed(dim);
  for (std::size_t i = 0; i < dim; ++i) mixed[i] = alpha * image[i] + (1.0 - alpha) * text[i];
  return normalized(std::move(mixed));
}

MockEmbedder::MockEmbedder(QualityFn quality, std::size_t dim) : quality_(std::move(quality)), dim_(dim) {}

EmbeddingPair MockEmbedder::embed(const PairRecord& rec) {
  const int q = quality_(rec);
  return {mock_embed(rec, EmbeddingRole::kImage, q, dim_), mock_embed(rec, EmbeddingRole::kCaption, q, dim_)};
}

FileEmbedder FileEmbedder::load(const std::filesystem::path& path) { return parse(read_file(path)); }

FileEmbedder FileEmbedder::parse(std::string_view jsonl) {
  FileEmbedder out;
  std::vector<std::string> problems;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  auto vec = [](const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array()) {
      throw EmbeddingError(std::string("missing array '") + key + "'");
    }
    EmbeddingVector v;
    for (const auto& x : j.at(key)) {
      if (!x.is_number()) throw EmbeddingError(std::string("non-numeric entry in '") + key + "'");
      v.push_back(x.get<double>());
      if (!std::isfinite(v.back())) throw EmbeddingError(std::string("non-finite entry in '") + key + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("pair_id") || !j.at("pair_id").is_string()) {
        throw EmbeddingError("missing string 'pair_id'");
      }
      EmbeddingPair p{vec(j, "image_embedding"), vec(j, "caption_embedding")};
      if (p.image.size() != p.caption.size()) {
        throw EmbeddingError("dimension mismatch " + std::to_string(p.image.size()) + " vs " +
                             std::to_string(p.caption.size()));
      }
      if (p.image.size() < 2) throw EmbeddingError("dimension must be at least 2");
      if (out.dim_ == 0) {
        out.dim_ = p.image.size();
      } else if (p.image.size() != out.dim_) {
        throw EmbeddingError("dimension " + std::to_string(p.image.size()) + " differs from file dimension " +
                             std::to_string(out.dim_));
      }
      const auto id = j.at("pair_id").get<std::string>();
      if (!out.rows_.emplace(id, std::move(p)).second) throw EmbeddingError("duplicate pair_id " + id);
    } catch (const nlohmann::json::exception& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const EmbeddingError& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " bad embedding row(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw EmbeddingError(msg);
  }
  return out;
}

EmbeddingPair FileEmbedder::embed(const PairRecord& rec) {
  const auto it = rows_.find(rec.id);
  if (it == rows_.end()) throw EmbeddingError("no embedding for pair " + rec.id);
  return it->second;
}

std::vector<double> AlignmentResult::raw_values() const {
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& v : values) out.push_back(v.value);
  return out;
}

AlignmentResult mean_alignment(const std::vector<PairRecord>& records, Embedder& embedder) {
  AlignmentResult out;
  out.values.reserve(records.size());
  long double sum = 0.0L;
  for (const auto& rec : records) {
    try {
      const auto e = embedder.embed(rec);
      const double c = stats::cosine_similarity(e.image, e.caption);
      out.values.push_back({rec.id, c});
      sum += c;
    } catch (const EmbeddingError& err) {
      out.excluded.push_back({rec.id, err.what()});
    } catch (const stats::StatsError& err) {
      out.excluded.push_back({rec.id, err.what()});
    }
  }
  if (!out.values.empty()) out.mean = static_cast<double>(sum / static_cast<long double>(out.values.size()));
  return out;
}

std::vector<BucketRow> bucket_alignment_table(const std::vector<Bucket>& buckets, const Manifest& parent,
                                              Embedder& embedder) {
  std::vector<BucketRow> rows;
  rows.reserve(buckets.size());
  for (const auto& b : buckets) {
    BucketRow row;
    row.range = b.range;
    row.n = b.pair_ids.size();
    if (!b.pair_ids.empty()) {
      SplitManifest split;
      split.pair_ids = b.pair_ids;
      const auto result = mean_alignment(materialize(split, parent).records, embedder);
      row.mean_alignment = result.mean;
      row.excluded = result.excluded.size();
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sieve
