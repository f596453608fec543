#include "sieve/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace sieve {

using ojson = nlohmann::ordered_json;

namespace {

double round_sig(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return std::strtod(buf, nullptr);
}

ojson real_or_null(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return round_sig(*v);
}

ojson real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return round_sig(v);
}

std::string format_t(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return format_fixed(t, 2);
}

std::string format_df(double df) {
  if (df == std::floor(df)) return format_count(static_cast<std::size_t>(df));
  return format_fixed(df, 1);
}

std::string percent(double rate) { return format_fixed(rate * 100.0, 1) + "%"; }

ojson ttest_json(const stats::TTestResult& r) {
  ojson j;
  j["t"] = real(r.t);
  j["df"] = real(r.df);
  j["p_one_sided"] = real(r.p_one_sided);
  j["p_two_sided"] = real(r.p_two_sided);
  j["log10_p_one_sided"] = real(r.log10_p_one_sided);
  j["log10_p_two_sided"] = real(r.log10_p_two_sided);
  j["mean_a"] = real(r.mean_a);
  j["mean_b"] = real(r.mean_b);
  j["n_a"] = r.n_a;
  j["n_b"] = r.n_b;
  return j;
}

}  // namespace

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string format_p_from_log10(double log10_p) {
  if (std::isinf(log10_p) && log10_p < 0) return "0";
  if (!std::isfinite(log10_p)) return "nan";
  double exponent = std::floor(log10_p);
  double mantissa = std::pow(10.0, log10_p - exponent);
  // keep 3 significant digits and renormalize when rounding reaches 10.00
  mantissa = std::round(mantissa * 100.0) / 100.0;
  if (mantissa >= 10.0) {
    mantissa /= 10.0;
    exponent += 1.0;
  }
  char buf[64];
  const int e = static_cast<int>(exponent);
  std::snprintf(buf, sizeof buf, "%.2fe%c%02d", mantissa, e < 0 ? '-' : '+', std::abs(e));
  return buf;
}

std::string format_count(std::size_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

std::string render_markdown(const StatsReport& report) {
  std::ostringstream md;
  md << "# Corpus statistics report\n";

  if (!report.alignment.empty()) {
    md << "\n## Image-text alignment\n\n";
    md << "| Split | Pairs | Evaluated | Mean cosine similarity |\n";
    md << "|---|---:|---:|---:|\n";
    for (const auto& row : report.alignment) {
      md << "| " << row.split << " | " << format_count(row.pairs) << " | " << format_count(row.evaluated) << " | "
         << (row.mean ? format_fixed(*row.mean, 3) : "n/a") << " |\n";
    }
    md << "\n";
    bool first = true;
    for (const auto& row : report.alignment) {
      if (!row.mean) continue;
      md << (first ? "" : ", ") << "S_" << row.split << " = " << format_fixed(*row.mean, 3);
      first = false;
    }
    md << "\n";
  }

  if (report.significance) {
    const auto& s = *report.significance;
    md << "\n## Significance: " << s.sample_a << " vs " << s.sample_b << "\n\n";
    md << "Student's two-sample t-test (pooled variance), H1: mean(" << s.sample_a << ") > mean(" << s.sample_b
       << ")\n\n";
    md << "t = " << format_t(s.student.t) << ", p = " << format_p_from_log10(s.student.log10_p_one_sided) << "\n\n";
    md << "| Statistic | Value |\n|---|---:|\n";
    md << "| n (" << s.sample_a << ") | " << format_count(s.student.n_a) << " |\n";
    md << "| n (" << s.sample_b << ") | " << format_count(s.student.n_b) << " |\n";
    md << "| mean (" << s.sample_a << ") | " << format_fixed(s.student.mean_a, 3) << " |\n";
    md << "| mean (" << s.sample_b << ") | " << format_fixed(s.student.mean_b, 3) << " |\n";
    md << "| t | " << format_t(s.student.t) << " |\n";
    md << "| df | " << format_df(s.student.df) << " |\n";
    md << "| p (one-sided) | " << format_p_from_log10(s.student.log10_p_one_sided) << " |\n";
    md << "| p (two-sided) | " << format_p_from_log10(s.student.log10_p_two_sided) << " |\n";
    if (s.welch) {
      md << "| Welch t | " << format_t(s.welch->t) << " |\n";
      md << "| Welch df | " << format_df(s.welch->df) << " |\n";
      md << "| Welch p (one-sided) | " << format_p_from_log10(s.welch->log10_p_one_sided) << " |\n";
      md << "| Welch p (two-sided) | " << format_p_from_log10(s.welch->log10_p_two_sided) << " |\n";
    }
  }

  if (!report.perplexity.empty()) {
    md << "\n## Caption perplexity\n\n";
    md << "| Split | Captions | Tokens | PPL (token-weighted) | Mean per-caption PPL |\n";
    md << "|---|---:|---:|---:|---:|\n";
    for (const auto& row : report.perplexity) {
      // rows built from summary figures carry no token counts or per-caption values
      const auto& pr = row.result;
      md << "| " << row.split << " | " << format_count(pr.captions) << " | "
         << (pr.tokens ? format_count(pr.tokens) : "n/a") << " | " << format_fixed(pr.corpus, 1) << " | "
         << (std::isfinite(pr.mean_per_caption) ? format_fixed(pr.mean_per_caption, 1) : "n/a") << " |\n";
    }
    md << "\n";
    for (std::size_t i = 0; i < report.perplexity.size(); ++i) {
      md << (i ? ", " : "") << "PPL_" << report.perplexity[i].split << " = "
         << format_fixed(report.perplexity[i].result.corpus, 1);
    }
    md << "\n";
  }

  if (report.preference) {
    const auto& p = *report.preference;
    const auto& r = p.result;
    md << "\n## Judge preference\n\n";
    md << "The judge preferred the filtered model's caption in " << percent(r.rate) << " of cases (" << r.wins << "/"
       << r.total << "); Wilson 95% interval [" << percent(r.wilson_lo) << ", " << percent(r.wilson_hi) << "].\n\n";
    md << "| Outcome | Count |\n|---|---:|\n";
    md << "| filtered preferred | " << format_count(r.wins) << " |\n";
    md << "| full preferred | " << format_count(r.losses) << " |\n";
    md << "| tie | " << format_count(r.ties) << " |\n";
    md << "| total | " << format_count(r.total) << " |\n\n";
    md << "Position check: slot A chosen " << p.slot_a_wins << " times, slot B " << p.slot_b_wins
       << " times; rate without order correction " << percent(p.raw_rate) << ".\n";
  }

  if (!report.buckets.empty()) {
    md << "\n## Alignment by filtration score bucket\n\n";
    md << "| Score Range |";
    for (const auto& b : report.buckets) md << " " << b.range.label() << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < report.buckets.size(); ++i) md << "---:|";
    md << "\n| Number of Samples |";
    for (const auto& b : report.buckets) md << " " << format_count(b.n) << " |";
    md << "\n| Alignment Score |";
    for (const auto& b : report.buckets) md << " " << (b.mean_alignment ? format_fixed(*b.mean_alignment, 2) : "n/a") << " |";
    md << "\n";
  }

  if (!report.metadata.empty()) {
    md << "\n## Notes\n\n";
    for (const auto& [k, v] : report.metadata) md << "- " << k << ": " << v << "\n";
  }
  return md.str();
}

ojson render_json(const StatsReport& report) {
  ojson j = ojson::object();
  if (!report.alignment.empty()) {
    j["alignment"] = ojson::array();
    for (const auto& row : report.alignment) {
      j["alignment"].push_back(
          {{"split", row.split}, {"pairs", row.pairs}, {"evaluated", row.evaluated}, {"mean", real_or_null(row.mean)}});
    }
  }
  if (report.significance) {
    const auto& s = *report.significance;
    ojson sig;
    sig["test"] = "student_pooled";
    sig["alternative"] = "greater";
    sig["sample_a"] = s.sample_a;
    sig["sample_b"] = s.sample_b;
    sig["student"] = ttest_json(s.student);
    if (s.welch) sig["welch"] = ttest_json(*s.welch);
    j["significance"] = sig;
  }
  if (!report.perplexity.empty()) {
    j["perplexity"] = ojson::array();
    for (const auto& row : report.perplexity) {
      j["perplexity"].push_back({{"split", row.split},
                                 {"captions", row.result.captions},
                                 {"tokens", row.result.tokens ? ojson(row.result.tokens) : ojson(nullptr)},
                                 {"corpus_ppl", real(row.result.corpus)},
                                 {"mean_per_caption_ppl", real(row.result.mean_per_caption)}});
    }
  }
  if (report.preference) {
    const auto& p = *report.preference;
    j["preference"] = {{"wins", p.result.wins},
                       {"losses", p.result.losses},
                       {"ties", p.result.ties},
                       {"total", p.result.total},
                       {"rate", real(p.result.rate)},
                       {"wilson_lo", real(p.result.wilson_lo)},
                       {"wilson_hi", real(p.result.wilson_hi)},
                       {"slot_a_wins", p.slot_a_wins},
                       {"slot_b_wins", p.slot_b_wins},
                       {"raw_rate", real(p.raw_rate)}};
  }
  if (!report.buckets.empty()) {
    j["buckets"] = ojson::array();
    for (const auto& b : report.buckets) {
      j["buckets"].push_back({{"range", b.range.label()}, {"n", b.n}, {"mean_alignment", real_or_null(b.mean_alignment)}});
    }
  }
  if (!report.metadata.empty()) {
    j["metadata"] = ojson::object();
    for (const auto& [k, v] : report.metadata) j["metadata"][k] = v;
  }
  return j;
}

}  // namespace sieve
