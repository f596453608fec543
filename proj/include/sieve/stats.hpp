#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sieve::stats {

class StatsError : public std::runtime_error {
 public:
  enum class Kind {
    kDimensionMismatch,
    kZeroVector,
    kNonFinite,
    kDegenerate,
    kTooFewSamples,
    kDomain,
    kNonConvergence,
    kEmptyCorpus,
    kPositiveLogprob,
    kEmptyInput,
  };

  StatsError(Kind kind, std::string detail);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

using EmbeddingVector = std::vector<double>;

/// (u.v) / (|u| |v|), accumulated in long double.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// ---- incomplete beta -------------------------------------------------------

inline constexpr int kIncompleteBetaMaxIterations = 500;

/// Regularized incomplete beta I_x(a, b) by continued fraction (modified Lentz)
/// with the symmetry switch at x > (a+1)/(a+b+2). Throws kNonConvergence past
/// the iteration cap.
double regularized_incomplete_beta(double x, double a, double b);

/// Natural log of I_x(a, b); stays finite where I_x underflows a double.
double log_regularized_incomplete_beta(double x, double a, double b);

// ---- Student t -------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  /// H1: mean_a > mean_b.
  double p_one_sided = 0.5;
  double p_two_sided = 1.0;
  /// log10 of p_one_sided; finite even when p_one_sided underflows to 0.
  double log10_p_one_sided = 0.0;
  double log10_p_two_sided = 0.0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

/// Upper tail P(T > t) for Student t with `df` degrees of freedom, as natural log.
double log_student_t_upper_tail(double t, double df);
double student_t_upper_tail(double t, double df);

/// Pooled-variance two-sample Student t-test.
TTestResult students_t_two_sample(std::span<const double> a, std::span<const double> b);

/// Welch's unequal-variance variant; df is the Welch–Satterthwaite value.
TTestResult welch_t_two_sample(std::span<const double> a, std::span<const double> b);

// ---- perplexity ------------------------------------------------------------

struct PerplexityResult {
  /// exp(-sum logprob / total tokens).
  double corpus = 0.0;
  /// Mean of per-caption perplexities.
  double mean_per_caption = 0.0;
  std::size_t captions = 0;
  std::size_t tokens = 0;
};

PerplexityResult corpus_perplexity(const std::vector<std::vector<double>>& items);

// ---- judge preference ------------------------------------------------------

enum class Judgment { kFilteredWins, kFullWins, kTie };

struct PreferenceResult {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  std::size_t total = 0;
  double rate = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
};

inline constexpr double kWilsonZ95 = 1.96;

/// Wilson score interval for k successes out of n.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double z = kWilsonZ95);

/// Ties count toward the total, so rate = filtered wins / all judgments.
PreferenceResult preference_rate(std::span<const Judgment> judgments);

// ---- descriptive -----------------------------------------------------------

double mean(std::span<const double> xs);
/// Unbiased sample variance (n - 1 denominator).
double sample_variance(std::span<const double> xs);

}  // namespace sieve::stats
