#include "sieve/scoring.hpp"

#include <cmath>
#include <regex>

#include "sieve/hash.hpp"
#include "sieve/io.hpp"

namespace sieve {

namespace {

constexpr std::string_view kDefaultTemplate =
    "You are assessing an image-caption pair that may be used to train a vision-language model.\n"
    "\n"
    "Caption: \"{caption}\"\n"
    "\n"
    "Evaluate the pair against these criteria:\n"
    "{criteria}\n"
    "\n"
    "Give one overall quality score on an integer scale of {scale}, where {scale_min} is the lowest "
    "quality and {scale_max} is the highest, and explain the score in one or two sentences.";

constexpr std::string_view kRequiredPlaceholders[] = {"{caption}", "{criteria}", "{scale}"};

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

// Returns the end (one past the closing brace) of the JSON object starting at
// `open`, or npos if braces never balance.
std::size_t balanced_object_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

struct Extracted {
  double score = 0.0;
  std::optional<std::string> rationale;
};

std::optional<Extracted> extract_json_score(std::string_view text) {
  for (auto open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    const auto end = balanced_object_end(text, open);
    if (end == std::string_view::npos) continue;
    nlohmann::json j = nlohmann::json::parse(text.substr(open, end - open), nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    const auto it = j.find("score");
    if (it == j.end() || !it->is_number()) continue;
    Extracted e;
    e.score = it->get<double>();
    if (auto r = j.find("rationale"); r != j.end() && r->is_string()) e.rationale = r->get<std::string>();
    return e;
  }
  return std::nullopt;
}

const std::regex& score_line_regex() {
  static const std::regex re(R"(^[\s*#>_-]*score[\s*_]*[:=][\s*_]*(-?\d+(?:\.\d+)?)\s*(?:/\s*(\d+))?)",
                             std::regex::icase);
  return re;
}

const std::regex& rationale_line_regex() {
  static const std::regex re(R"(^[\s*#>_-]*rationale[\s*_]*:[\s*_]*)", std::regex::icase);
  return re;
}

const std::regex& verdict_line_regex() {
  static const std::regex re(R"(^[\s*#>_-]*verdict[\s*_]*:[\s*_]*(?:caption\s+)?(a|b|tie)\b)", std::regex::icase);
  return re;
}

std::optional<Extracted> extract_line_score(std::string_view text) {
  for (auto line : split_lines(text)) {
    std::cmatch m;
    if (!std::regex_search(line.begin(), line.end(), m, score_line_regex())) continue;
    if (m[2].matched && m[2].str() != "10") continue;
    Extracted e;
    e.score = std::stod(m[1].str());
    return e;
  }
  return std::nullopt;
}

std::optional<std::string> extract_rationale_line(std::string_view text) {
  std::size_t offset = 0;
  for (auto line : split_lines(text)) {
    std::cmatch m;
    if (std::regex_search(line.begin(), line.end(), m, rationale_line_regex())) {
      const std::size_t from = offset + static_cast<std::size_t>(m.length(0));
      return std::string(trim(text.substr(from)));
    }
    offset += line.size() + 1;
  }
  return std::nullopt;
}

std::string render_criteria(const std::vector<Criterion>& criteria) {
  std::string out;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (i) out.push_back('\n');
    out += std::to_string(i + 1) + ". " + criteria[i].name;
    if (!criteria[i].description.empty()) out += ": " + criteria[i].description;
  }
  return out;
}

// Single pass so substituted values are never re-expanded.
std::string substitute(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string>>& vars) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : vars) {
        if (tmpl.substr(i, key.size()) == key) {
          out += value;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace

Rubric Rubric::standard() {
  Rubric r;
  r.criteria = {
      {"Image-text alignment",
       "how accurately the caption describes what is visible in the image (objects, attributes, actions, "
       "counts, setting); penalize content that is absent from the image or key content that is missing"},
      {"Caption fluency and complexity",
       "whether the caption is grammatical, coherent and informative, with useful detail rather than "
       "keyword lists, boilerplate, URLs or file names"},
      {"Safety",
       "whether the pair is free of harmful, offensive or personally identifying content that makes it "
       "unsuitable for training"},
  };
  r.scale_min = 1;
  r.scale_max = 10;
  r.prompt_template = std::string(kDefaultTemplate);
  return r;
}

Rubric Rubric::from_json(const nlohmann::json& j) {
  Rubric r;
  try {
    for (const auto& c : j.at("criteria")) {
      r.criteria.push_back({c.at("name").get<std::string>(), c.value("description", std::string{})});
    }
    r.scale_min = j.value("scale_min", 1);
    r.scale_max = j.value("scale_max", 10);
    r.prompt_template = j.at("prompt_template").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("invalid rubric: ") + e.what());
  }
  r.validate();
  return r;
}

Rubric Rubric::load(const std::filesystem::path& path) {
  const auto parsed = nlohmann::json::parse(read_file(path), nullptr, false);
  if (parsed.is_discarded()) throw TemplateError("rubric file is not valid JSON: " + path.string());
  return from_json(parsed);
}

nlohmann::ordered_json Rubric::to_json() const {
  nlohmann::ordered_json j;
  j["scale_min"] = scale_min;
  j["scale_max"] = scale_max;
  j["criteria"] = nlohmann::ordered_json::array();
  for (const auto& c : criteria) j["criteria"].push_back({{"name", c.name}, {"description", c.description}});
  j["prompt_template"] = prompt_template;
  return j;
}

void Rubric::validate() const {
  if (scale_min >= scale_max) throw TemplateError("scale_min must be below scale_max");
  if (criteria.empty()) throw TemplateError("rubric has no criteria");
  for (const auto& c : criteria) {
    if (trim(c.name).empty()) throw TemplateError("criterion with empty name");
  }
  for (auto p : kRequiredPlaceholders) {
    if (prompt_template.find(p) == std::string::npos) {
      throw TemplateError("prompt template lacks placeholder " + std::string(p));
    }
  }
}

std::string PromptPayload::canonical() const { return "image:" + image_ref + "\ntext:" + text; }

PromptPayload build_score_prompt(const PairRecord& rec, const Rubric& rubric) {
  rubric.validate();
  const std::string lo = std::to_string(rubric.scale_min);
  const std::string hi = std::to_string(rubric.scale_max);
  PromptPayload p;
  p.image_ref = rec.image_ref;
  p.text = substitute(rubric.prompt_template, {{"{caption}", rec.caption},
                                               {"{criteria}", render_criteria(rubric.criteria)},
                                               {"{scale_min}", lo},
                                               {"{scale_max}", hi},
                                               {"{scale}", lo + " to " + hi}});
  p.text += "\n\n";
  p.text += kScoreResponseInstruction;
  return p;
}

ScoreParseError::ScoreParseError(Kind kind, std::string raw, std::optional<double> score)
    : std::runtime_error(kind == Kind::kUnparseable
                             ? std::string("Unparseable scorer output")
                             : "OutOfRange score " + std::to_string(score.value_or(0.0))),
      kind_(kind),
      raw_(std::move(raw)),
      score_(score) {}

ScorerResponse parse_scorer_output(std::string_view text) {
  std::optional<Extracted> e = extract_json_score(text);
  if (!e) e = extract_line_score(text);
  if (!e) throw ScoreParseError(ScoreParseError::Kind::kUnparseable, std::string(text));
  if (!std::isfinite(e->score)) throw ScoreParseError(ScoreParseError::Kind::kOutOfRange, std::string(text), e->score);
  const double rounded = std::round(e->score);
  if (rounded < 1.0 || rounded > 10.0) {
    throw ScoreParseError(ScoreParseError::Kind::kOutOfRange, std::string(text), e->score);
  }
  ScorerResponse r;
  r.score = static_cast<int>(rounded);
  r.raw_score = e->score;
  r.raw = std::string(text);
  if (e->rationale) {
    r.rationale = *e->rationale;
  } else if (auto line = extract_rationale_line(text)) {
    r.rationale = *line;
  }
  return r;
}

int mock_score(const PairRecord& rec) { return static_cast<int>(fnv1a64(rec.id) % 10) + 1; }

std::string_view to_string(PresentationOrder order) noexcept {
  return order == PresentationOrder::kAB ? "AB" : "BA";
}

std::optional<PresentationOrder> presentation_order_from_string(std::string_view s) noexcept {
  if (s == "AB") return PresentationOrder::kAB;
  if (s == "BA") return PresentationOrder::kBA;
  return std::nullopt;
}

PresentationOrder judge_presentation_order(std::uint64_t seed, std::string_view item_id) {
  SplitMix64 coin(seed ^ fnv1a64(item_id));
  return (coin.next() & 1) ? PresentationOrder::kBA : PresentationOrder::kAB;
}

std::string render_judge_prompt(std::string_view reference, std::string_view first, std::string_view second) {
  std::string out;
  out += "You are comparing two machine-generated image captions against a reference caption.\n\n";
  out += "Reference caption: \"";
  out += reference;
  out += "\"\n\nCaption A: \"";
  out += first;
  out += "\"\nCaption B: \"";
  out += second;
  out += "\"\n\n";
  out +=
      "Decide which candidate caption matches the reference more closely in content and meaning. "
      "Explain briefly, then end your answer with a final line that is exactly one of:\n"
      "Verdict: A\n"
      "Verdict: B\n"
      "Verdict: tie\n";
  return out;
}

JudgePrompt build_judge_prompt(std::string_view item_id, std::string_view reference,
                               std::string_view filtered_caption, std::string_view full_caption,
                               std::uint64_t seed) {
  JudgePrompt p;
  p.item_id = std::string(item_id);
  p.order = judge_presentation_order(seed, item_id);
  p.text = p.order == PresentationOrder::kAB ? render_judge_prompt(reference, filtered_caption, full_caption)
                                             : render_judge_prompt(reference, full_caption, filtered_caption);
  return p;
}

VerdictLetter parse_judge_verdict(std::string_view text) {
  std::optional<VerdictLetter> last;
  for (auto line : split_lines(text)) {
    std::cmatch m;
    if (!std::regex_search(line.begin(), line.end(), m, verdict_line_regex())) continue;
    const std::string v = m[1].str();
    if (v == "a" || v == "A") {
      last = VerdictLetter::kA;
    } else if (v == "b" || v == "B") {
      last = VerdictLetter::kB;
    } else {
      last = VerdictLetter::kTie;
    }
  }
  if (!last) throw ScoreParseError(ScoreParseError::Kind::kUnparseable, std::string(text));
  return *last;
}

stats::Judgment judgment_from_verdict(VerdictLetter letter, PresentationOrder order) noexcept {
  if (letter == VerdictLetter::kTie) return stats::Judgment::kTie;
  const bool slot_a = letter == VerdictLetter::kA;
  const bool filtered_in_a = order == PresentationOrder::kAB;
  return slot_a == filtered_in_a ? stats::Judgment::kFilteredWins : stats::Judgment::kFullWins;
}

stats::Judgment parse_judge_output(std::string_view text, PresentationOrder order) {
  return judgment_from_verdict(parse_judge_verdict(text), order);
}

std::string_view to_string(stats::Judgment j) noexcept {
  switch (j) {
    case stats::Judgment::kFilteredWins: return "filtered_wins";
    case stats::Judgment::kFullWins: return "full_wins";
    case stats::Judgment::kTie: return "tie";
  }
  return "?";
}

std::optional<stats::Judgment> judgment_from_string(std::string_view s) noexcept {
  if (s == "filtered_wins") return stats::Judgment::kFilteredWins;
  if (s == "full_wins") return stats::Judgment::kFullWins;
  if (s == "tie") return stats::Judgment::kTie;
  return std::nullopt;
}

}  // namespace sieve
