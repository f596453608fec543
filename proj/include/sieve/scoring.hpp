#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sieve/manifest.hpp"
#include "sieve/stats.hpp"

namespace sieve {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Criterion {
  std::string name;
  std::string description;

  friend bool operator==(const Criterion&, const Criterion&) = default;
};

/// Scoring criteria and scale that drive prompt construction.
struct Rubric {
  std::vector<Criterion> criteria;
  int scale_min = 1;
  int scale_max = 10;
  /// Must contain {caption}, {criteria} and {scale}. {scale_min} and
  /// {scale_max} are also substituted when present.
  std::string prompt_template;

  /// Built-in rubric: image-text alignment, caption fluency/complexity, safety.
  static Rubric standard();
  static Rubric from_json(const nlohmann::json& j);
  static Rubric load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;

  /// Throws TemplateError.
  void validate() const;

  friend bool operator==(const Rubric&, const Rubric&) = default;
};

/// What gets sent to a scorer: one image part (by reference) and one text part.
struct PromptPayload {
  std::string image_ref;
  std::string text;

  /// Stable serialization used for cache keys.
  std::string canonical() const;
};

/// Appended to every score prompt so the reply format does not depend on the template.
inline constexpr std::string_view kScoreResponseInstruction =
    "Respond with a single JSON object with exactly two keys: \"score\" (an integer from 1 to 10) and "
    "\"rationale\" (a short explanation of the score).";

PromptPayload build_score_prompt(const PairRecord& rec, const Rubric& rubric);

struct ScorerResponse {
  int score = 0;
  /// Value before rounding to the nearest integer.
  double raw_score = 0.0;
  std::string rationale;
  std::string raw;
  std::string model_id;

  friend bool operator==(const ScorerResponse&, const ScorerResponse&) = default;
};

class ScoreParseError : public std::runtime_error {
 public:
  enum class Kind { kUnparseable, kOutOfRange };

  ScoreParseError(Kind kind, std::string raw, std::optional<double> score = std::nullopt);
  Kind kind() const noexcept { return kind_; }
  const std::string& raw() const noexcept { return raw_; }
  std::optional<double> score() const noexcept { return score_; }

 private:
  Kind kind_;
  std::string raw_;
  std::optional<double> score_;
};

/// Grammar, first match wins:
///   1. the first well-formed JSON object with a numeric "score" member;
///   2. a line `Score: <n>` or `Score: <n>/10` (case-insensitive).
/// The rationale comes from the "rationale" member or from a `Rationale:` line
/// through the end of the text. Scores are rounded to nearest; anything outside
/// [1,10] afterwards is rejected, never clamped.
ScorerResponse parse_scorer_output(std::string_view text);

/// (FNV-1a-64(id) mod 10) + 1.
int mock_score(const PairRecord& rec);

// ---- judge -----------------------------------------------------------------

/// AB: the filtered model's caption is shown as "Caption A"; BA: it is shown as "Caption B".
enum class PresentationOrder { kAB, kBA };

std::string_view to_string(PresentationOrder order) noexcept;
std::optional<PresentationOrder> presentation_order_from_string(std::string_view s) noexcept;

enum class VerdictLetter { kA, kB, kTie };

struct JudgePrompt {
  std::string item_id;
  PresentationOrder order = PresentationOrder::kAB;
  std::string text;
};

/// Seeded coin per item: a pure function of (seed, item_id).
PresentationOrder judge_presentation_order(std::uint64_t seed, std::string_view item_id);

/// Renders the comparison with `first` shown as Caption A and `second` as Caption B.
std::string render_judge_prompt(std::string_view reference, std::string_view first, std::string_view second);

JudgePrompt build_judge_prompt(std::string_view item_id, std::string_view reference,
                               std::string_view filtered_caption, std::string_view full_caption,
                               std::uint64_t seed);

/// Reads the last `Verdict: A|B|tie` line. Throws ScoreParseError(kUnparseable).
VerdictLetter parse_judge_verdict(std::string_view text);

/// Maps a slot letter back to the logical models through the presentation order.
stats::Judgment judgment_from_verdict(VerdictLetter letter, PresentationOrder order) noexcept;

stats::Judgment parse_judge_output(std::string_view text, PresentationOrder order);

std::string_view to_string(stats::Judgment j) noexcept;
std::optional<stats::Judgment> judgment_from_string(std::string_view s) noexcept;

}  // namespace sieve
