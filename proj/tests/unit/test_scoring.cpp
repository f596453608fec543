#include "doctest.h"

#include <fstream>

#include "sieve/io.hpp"
#include "sieve/manifest.hpp"
#include "sieve/scoring.hpp"

using namespace sieve;

namespace {

const std::filesystem::path kData = SIEVE_TEST_DATA_DIR;
const std::filesystem::path kGolden = SIEVE_GOLDEN_DIR;

std::string kind_name(ScoreParseError::Kind k) {
  return k == ScoreParseError::Kind::kUnparseable ? "Unparseable" : "OutOfRange";
}

PairRecord golden_record() { return make_pair_record("https://images.example/dog-on-bench.jpg", "a brown dog sitting on a park bench"); }

}  // namespace

TEST_CASE("scorer output fixtures") {
  const auto fixtures = nlohmann::json::parse(read_file(kData / "scorer_fixtures.json"));
  REQUIRE(fixtures.size() >= 12);
  for (const auto& f : fixtures) {
    const std::string text = f.at("text");
    CAPTURE(f.at("name").get<std::string>());
    if (f.contains("error")) {
      try {
        parse_scorer_output(text);
        FAIL("expected an error");
      } catch (const ScoreParseError& e) {
        CHECK(kind_name(e.kind()) == f.at("error").get<std::string>());
        CHECK(e.raw() == text);
      }
    } else {
      const auto r = parse_scorer_output(text);
      CHECK(r.score == f.at("score").get<int>());
      CHECK(r.rationale == f.at("rationale").get<std::string>());
      CHECK(r.raw == text);
    }
  }
}

TEST_CASE("raw score is kept before rounding") {
  const auto r = parse_scorer_output(R"({"score": 8.5})");
  CHECK(r.score == 9);
  CHECK(r.raw_score == 8.5);
}

TEST_CASE("judge verdict fixtures") {
  const auto fixtures = nlohmann::json::parse(read_file(kData / "judge_fixtures.json"));
  REQUIRE(fixtures.size() >= 6);
  for (const auto& f : fixtures) {
    CAPTURE(f.at("name").get<std::string>());
    const auto order = presentation_order_from_string(f.at("order").get<std::string>());
    REQUIRE(order);
    if (f.contains("error")) {
      CHECK_THROWS_AS(parse_judge_output(f.at("text").get<std::string>(), *order), ScoreParseError);
    } else {
      CHECK(to_string(parse_judge_output(f.at("text").get<std::string>(), *order)) == f.at("expect").get<std::string>());
    }
  }
}

TEST_CASE("order de-biasing flips non-tie verdicts") {
  for (const char* text : {"Verdict: A", "Verdict: B", "x\nVerdict: tie"}) {
    const auto ab = parse_judge_output(text, PresentationOrder::kAB);
    const auto ba = parse_judge_output(text, PresentationOrder::kBA);
    if (ab == stats::Judgment::kTie) {
      CHECK(ba == stats::Judgment::kTie);
    } else {
      CHECK(ab != ba);
    }
  }
}

TEST_CASE("presentation order is a seeded coin") {
  int ab = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::string id = "item-" + std::to_string(i);
    const auto o = judge_presentation_order(7, id);
    CHECK(o == judge_presentation_order(7, id));
    ab += o == PresentationOrder::kAB;
  }
  CHECK(ab > 900);
  CHECK(ab < 1100);
}

TEST_CASE("swapping candidates with the order gives the same text") {
  const auto p = build_judge_prompt("item-1", "ref", "filtered cap", "full cap", 3);
  const std::string again = p.order == PresentationOrder::kAB ? render_judge_prompt("ref", "filtered cap", "full cap")
                                                              : render_judge_prompt("ref", "full cap", "filtered cap");
  CHECK(p.text == again);
  CHECK(p.text.find("Verdict: A\nVerdict: B\nVerdict: tie") != std::string::npos);
}

TEST_CASE("default rubric prompt") {
  const auto p = build_score_prompt(golden_record(), Rubric::standard());
  CHECK(p.image_ref == "https://images.example/dog-on-bench.jpg");
  CHECK(p.text.find("1 to 10") != std::string::npos);
  for (const auto& c : Rubric::standard().criteria) CHECK(p.text.find(c.name) != std::string::npos);
  CHECK(p.text.find("\"score\"") != std::string::npos);
  CHECK(p.text.find("\"rationale\"") != std::string::npos);
  CHECK(p.text == build_score_prompt(golden_record(), Rubric::standard()).text);
}

TEST_CASE("single criterion renders once") {
  Rubric r = Rubric::standard();
  r.criteria = {{"Only", "just this"}};
  const auto p = build_score_prompt(golden_record(), r);
  CHECK(p.text.find("1. Only: just this") != std::string::npos);
  CHECK(p.text.find("2. ") == std::string::npos);
}

TEST_CASE("placeholders in the caption are not re-expanded") {
  const auto p = build_score_prompt(make_pair_record("i", "literal {criteria} text"), Rubric::standard());
  CHECK(p.text.find("literal {criteria} text") != std::string::npos);
}

TEST_CASE("rubric validation") {
  Rubric r = Rubric::standard();
  r.prompt_template = "no placeholders {caption} {scale}";
  CHECK_THROWS_AS(r.validate(), TemplateError);
  CHECK_THROWS_AS(build_score_prompt(golden_record(), r), TemplateError);
  r = Rubric::standard();
  r.scale_min = 10;
  CHECK_THROWS_AS(r.validate(), TemplateError);
  r = Rubric::standard();
  r.criteria.clear();
  CHECK_THROWS_AS(r.validate(), TemplateError);
}

TEST_CASE("shipped rubric config equals the built-in rubric") {
  const auto shipped = Rubric::load(std::filesystem::path(SIEVE_SOURCE_DIR) / "config" / "rubric.default.json");
  CHECK(shipped == Rubric::standard());
  CHECK(Rubric::from_json(nlohmann::json::parse(Rubric::standard().to_json().dump())) == Rubric::standard());
}

TEST_CASE("golden score prompt") {
  CHECK(build_score_prompt(golden_record(), Rubric::standard()).text == read_file(kGolden / "score_prompt.txt"));
}

TEST_CASE("golden judge prompt") {
  CHECK(render_judge_prompt("A dog sits on a wooden bench in a park.", "a brown dog on a park bench",
                            "dog photo stock image 1024x768") == read_file(kGolden / "judge_prompt.txt"));
}
