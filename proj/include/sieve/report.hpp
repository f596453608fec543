#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sieve/alignment.hpp"
#include "sieve/stats.hpp"

namespace sieve {

struct SplitAlignmentRow {
  std::string split;
  std::size_t pairs = 0;
  std::size_t evaluated = 0;
  std::optional<double> mean;
};

struct SignificanceSection {
  std::string sample_a = "filtered";
  std::string sample_b = "random";
  stats::TTestResult student;
  std::optional<stats::TTestResult> welch;
};

struct PerplexityRow {
  std::string split;
  stats::PerplexityResult result;
};

struct PreferenceSection {
  stats::PreferenceResult result;
  /// Items whose verdict picked presentation slot A / B (ties excluded).
  std::size_t slot_a_wins = 0;
  std::size_t slot_b_wins = 0;
  /// Rate a pipeline would report if it assumed the filtered caption was always slot A.
  double raw_rate = 0.0;
};

struct StatsReport {
  std::vector<SplitAlignmentRow> alignment;
  std::optional<SignificanceSection> significance;
  std::vector<PerplexityRow> perplexity;
  std::optional<PreferenceSection> preference;
  std::vector<BucketRow> buckets;
  std::map<std::string, std::string> metadata;
};

/// Markdown report: alignment means, t and p,
/// perplexities, preference rate and the score-bucket table. Sections without
/// data are omitted.
std::string render_markdown(const StatsReport& report);

/// Machine-readable twin of render_markdown. Reals are rounded to 12
/// significant digits.
nlohmann::ordered_json render_json(const StatsReport& report);

// Formatting helpers, exposed for tests.
std::string format_fixed(double value, int decimals);
/// Scientific notation with a 3-significant-digit mantissa from a log10 value,
/// e.g. -55.3696 -> "4.27e-56". Works where the value itself underflows.
std::string format_p_from_log10(double log10_p);
std::string format_count(std::size_t n);

}  // namespace sieve
