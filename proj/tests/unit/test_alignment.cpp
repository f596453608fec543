#include "doctest.h"

#include <cmath>

#include "sieve/alignment.hpp"
#include "sieve/hash.hpp"
#include "sieve/scoring.hpp"

using namespace sieve;

namespace {

PairRecord rec(int i) { return make_pair_record("img" + std::to_string(i), "caption " + std::to_string(i)); }

// Straight transcription of the mock construction, in long double.
double reference_quality_cosine(const PairRecord& r, int q) {
  auto base = [](const std::string& s) {
    SplitMix64 rng(fnv1a64(s));
    std::vector<long double> v(16);
    long double n = 0;
    for (auto& x : v) {
      x = static_cast<long double>(rng.next() >> 11) / 9007199254740992.0L * 2 - 1;
      n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    return v;
  };
  const auto vi = base(r.image_ref);
  const auto vc = base(r.caption);
  const long double a = q / 10.0L;
  std::vector<long double> c(16);
  long double dot = 0, nc = 0;
  for (int k = 0; k < 16; ++k) {
    c[k] = a * vi[k] + (1 - a) * vc[k];
    nc += c[k] * c[k];
    dot += c[k] * vi[k];
  }
  return static_cast<double>(dot / std::sqrt(nc));
}

}  // namespace

TEST_CASE("mock base vectors are unit and deterministic") {
  const auto v = mock_base_vector("hello");
  REQUIRE(v.size() == kMockEmbeddingDim);
  double n = 0;
  for (double x : v) n += x * x;
  CHECK(n == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mock_base_vector("hello") == v);
  CHECK(mock_base_vector("hellp") != v);
}

TEST_CASE("quality 10 copies the image vector exactly") {
  const auto r = rec(3);
  CHECK(mock_embed(r, EmbeddingRole::kCaption, 10) == mock_embed(r, EmbeddingRole::kImage, 10));
  CHECK(mock_embed(r, EmbeddingRole::kImage, 1) == mock_base_vector(r.image_ref));
}

TEST_CASE("mock cosine matches a direct transcription") {
  for (int i = 0; i < 50; ++i) {
    for (int q = 1; q <= 10; ++q) {
      const auto r = rec(i);
      MockEmbedder e([q](const PairRecord&) { return q; });
      const auto p = e.embed(r);
      REQUIRE(stats::cosine_similarity(p.image, p.caption) == doctest::Approx(reference_quality_cosine(r, q)).epsilon(1e-12));
    }
  }
}

TEST_CASE("Monte Carlo mean cosine at quality 5") {
  // Independent estimate: same PRNG construction, different records, so the two
  // means agree only through the distribution of the mock.
  double sim = 0;
  for (int i = 0; i < 1000; ++i) sim += reference_quality_cosine(make_pair_record("mc-img-" + std::to_string(i), "mc-cap-" + std::to_string(i)), 5);
  sim /= 1000;
  std::vector<PairRecord> records;
  for (int i = 0; i < 1000; ++i) records.push_back(rec(i));
  MockEmbedder e([](const PairRecord&) { return 5; });
  const auto r = mean_alignment(records, e);
  REQUIRE(r.mean);
  CHECK(std::abs(*r.mean - sim) <= 0.02);
}

TEST_CASE("mean_alignment excludes failing pairs") {
  std::vector<PairRecord> records{rec(1), rec(2), rec(3)};
  MockEmbedder e([](const PairRecord& r) {
    if (r.image_ref == "img2") throw EmbeddingError("boom");
    return 10;
  });
  const auto r = mean_alignment(records, e);
  CHECK(r.mean == doctest::Approx(1.0));
  CHECK(r.values.size() == 2);
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0].pair_id == records[1].id);

  std::vector<PairRecord> none;
  CHECK_FALSE(mean_alignment(none, e).mean.has_value());
}

TEST_CASE("file embedder parsing") {
  const auto ok = FileEmbedder::parse(
      R"({"pair_id":"a","image_embedding":[1,0,0],"caption_embedding":[1,0,0]})"
      "\n"
      R"({"pair_id":"b","image_embedding":[1,2,2],"caption_embedding":[2,1,2]})"
      "\n");
  CHECK(ok.size() == 2);
  CHECK(ok.dim() == 3);
  auto e = ok;
  const auto p = e.embed({"b", "i", "c", ""});
  CHECK(stats::cosine_similarity(p.image, p.caption) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  CHECK_THROWS_AS(e.embed({"zz", "i", "c", ""}), EmbeddingError);

  auto message = [](std::string_view text) {
    try {
      FileEmbedder::parse(text);
    } catch (const EmbeddingError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const std::string bad = message(
      R"({"pair_id":"a","image_embedding":[1,0],"caption_embedding":[1,0,0]})"
      "\n"
      R"({"pair_id":"b","image_embedding":[1],"caption_embedding":[1]})"
      "\n"
      "nonsense\n");
  CHECK(bad.find("line 1") != std::string::npos);
  CHECK(bad.find("line 2") != std::string::npos);
  CHECK(bad.find("line 3") != std::string::npos);
  CHECK(message(R"({"pair_id":"a","image_embedding":[1,0],"caption_embedding":[1,0]})"
                "\n"
                R"({"pair_id":"a","image_embedding":[1,0],"caption_embedding":[1,0]})")
            .find("duplicate") != std::string::npos);
}

TEST_CASE("bucket alignment table with an empty bucket") {
  Manifest m;
  m.records = {rec(1), rec(2)};
  std::vector<Bucket> buckets{{{1, 3}, {m.records[0].id}}, {{4, 10}, {}}};
  MockEmbedder e([](const PairRecord&) { return 10; });
  const auto rows = bucket_alignment_table(buckets, m, e);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n == 1);
  CHECK(rows[0].mean_alignment == doctest::Approx(1.0));
  CHECK(rows[1].n == 0);
  CHECK_FALSE(rows[1].mean_alignment.has_value());
}
