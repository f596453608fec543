#include "sieve/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

namespace sieve::stats {

namespace {

using real = long double;

constexpr real kLentzTiny = 1e-300L;
constexpr real kLentzEps = 1e-15L;

std::string kind_label(StatsError::Kind kind) {
  switch (kind) {
    case StatsError::Kind::kDimensionMismatch: return "DimensionMismatch";
    case StatsError::Kind::kZeroVector: return "ZeroVector";
    case StatsError::Kind::kNonFinite: return "NonFinite";
    case StatsError::Kind::kDegenerate: return "Degenerate";
    case StatsError::Kind::kTooFewSamples: return "TooFewSamples";
    case StatsError::Kind::kDomain: return "Domain";
    case StatsError::Kind::kNonConvergence: return "NonConvergence";
    case StatsError::Kind::kEmptyCorpus: return "EmptyCorpus";
    case StatsError::Kind::kPositiveLogprob: return "PositiveLogprob";
    case StatsError::Kind::kEmptyInput: return "EmptyInput";
  }
  return "StatsError";
}

// Continued fraction for I_x(a,b) (Numerical Recipes betacf form), evaluated
// with modified Lentz. Converges fast for x < (a+1)/(a+b+2).
real beta_continued_fraction(real x, real a, real b) {
  const real qab = a + b;
  const real qap = a + 1.0L;
  const real qam = a - 1.0L;
  real c = 1.0L;
  real d = 1.0L - qab * x / qap;
  if (std::fabs(d) < kLentzTiny) d = kLentzTiny;
  d = 1.0L / d;
  real h = d;
  for (int m = 1; m <= kIncompleteBetaMaxIterations; ++m) {
    const real rm = m;
    const real m2 = 2.0L * rm;
    real aa = rm * (b - rm) * x / ((qam + m2) * (a + m2));
    d = 1.0L + aa * d;
    if (std::fabs(d) < kLentzTiny) d = kLentzTiny;
    c = 1.0L + aa / c;
    if (std::fabs(c) < kLentzTiny) c = kLentzTiny;
    d = 1.0L / d;
    h *= d * c;
    aa = -(a + rm) * (qab + rm) * x / ((a + m2) * (qap + m2));
    d = 1.0L + aa * d;
    if (std::fabs(d) < kLentzTiny) d = kLentzTiny;
    c = 1.0L + aa / c;
    if (std::fabs(c) < kLentzTiny) c = kLentzTiny;
    d = 1.0L / d;
    const real del = d * c;
    h *= del;
    if (std::fabs(del - 1.0L) < kLentzEps) return h;
  }
  throw StatsError(StatsError::Kind::kNonConvergence,
                   "incomplete beta continued fraction did not converge in " +
                       std::to_string(kIncompleteBetaMaxIterations) + " iterations (x=" +
                       std::to_string(static_cast<double>(x)) + ", a=" +
                       std::to_string(static_cast<double>(a)) + ", b=" +
                       std::to_string(static_cast<double>(b)) + ")");
}

// log of x^a (1-x)^b / (a B(a,b)) times the continued fraction, i.e. log I_x(a,b)
// on the directly convergent side. `y` is 1-x, passed separately to keep precision.
real log_incbeta_direct(real x, real y, real a, real b) {
  const real log_front = a * std::log(x) + b * std::log(y) + std::lgamma(a + b) - std::lgamma(a) -
                         std::lgamma(b) - std::log(a);
  return log_front + std::log(beta_continued_fraction(x, a, b));
}

void check_domain(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0) || !(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw StatsError(StatsError::Kind::kDomain, "incomplete beta requires x in [0,1], a > 0, b > 0");
  }
}

// Returns log I_x(a,b) with the complement y = 1 - x supplied explicitly.
real log_incbeta(real x, real y, real a, real b) {
  if (x <= 0.0L) return -std::numeric_limits<real>::infinity();
  if (y <= 0.0L) return 0.0L;
  if (x > (a + 1.0L) / (a + b + 2.0L)) {
    const real complement = std::exp(log_incbeta_direct(y, x, b, a));
    return std::log1p(-complement);
  }
  return log_incbeta_direct(x, y, a, b);
}

real incbeta(real x, real y, real a, real b) {
  if (x <= 0.0L) return 0.0L;
  if (y <= 0.0L) return 1.0L;
  if (x > (a + 1.0L) / (a + b + 2.0L)) {
    return 1.0L - std::exp(log_incbeta_direct(y, x, b, a));
  }
  return std::exp(log_incbeta_direct(x, y, a, b));
}

void require_finite(std::span<const double> xs, const char* what) {
  for (double v : xs) {
    if (!std::isfinite(v)) throw StatsError(StatsError::Kind::kNonFinite, std::string(what) + " has a non-finite value");
  }
}

struct Moments {
  real mean = 0.0L;
  real var = 0.0L;
  std::size_t n = 0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  m.n = xs.size();
  real sum = 0.0L;
  for (double v : xs) sum += v;
  m.mean = sum / static_cast<real>(m.n);
  real ss = 0.0L;
  for (double v : xs) {
    const real d = v - m.mean;
    ss += d * d;
  }
  m.var = m.n > 1 ? ss / static_cast<real>(m.n - 1) : 0.0L;
  return m;
}

// Fills p-values for a statistic t with df degrees of freedom. The two-sided
// value is 2 P(T > |t|), i.e. I_x(df/2, 1/2).
void fill_p_values(TTestResult& r) {
  constexpr double kLn10 = std::numbers::ln10;
  const double lp = log_student_t_upper_tail(r.t, r.df);
  r.p_one_sided = std::exp(lp);
  r.log10_p_one_sided = lp / kLn10;
  const double l_two = std::min(0.0, std::numbers::ln2 + log_student_t_upper_tail(std::fabs(r.t), r.df));
  r.p_two_sided = std::exp(l_two);
  r.log10_p_two_sided = l_two / kLn10;
}

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw StatsError(StatsError::Kind::kTooFewSamples, "t-test needs at least 2 values per sample");
  }
  require_finite(a, "sample a");
  require_finite(b, "sample b");
}

}  // namespace

StatsError::StatsError(Kind kind, std::string detail)
    : std::runtime_error(kind_label(kind) + ": " + detail), kind_(kind) {}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw StatsError(StatsError::Kind::kDimensionMismatch,
                     std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  real dot = 0.0L;
  real uu = 0.0L;
  real vv = 0.0L;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
      throw StatsError(StatsError::Kind::kNonFinite, "embedding has a non-finite entry");
    }
    dot += static_cast<real>(u[i]) * v[i];
    uu += static_cast<real>(u[i]) * u[i];
    vv += static_cast<real>(v[i]) * v[i];
  }
  if (uu == 0.0L || vv == 0.0L) throw StatsError(StatsError::Kind::kZeroVector, "zero-norm embedding");
  const real c = dot / (std::sqrt(uu) * std::sqrt(vv));
  return static_cast<double>(std::clamp(c, -1.0L, 1.0L));
}

double regularized_incomplete_beta(double x, double a, double b) {
  check_domain(x, a, b);
  return static_cast<double>(incbeta(x, 1.0L - static_cast<real>(x), a, b));
}

double log_regularized_incomplete_beta(double x, double a, double b) {
  check_domain(x, a, b);
  return static_cast<double>(log_incbeta(x, 1.0L - static_cast<real>(x), a, b));
}

double log_student_t_upper_tail(double t, double df) {
  if (!(df > 0.0)) throw StatsError(StatsError::Kind::kDomain, "df must be positive");
  if (std::isnan(t)) throw StatsError(StatsError::Kind::kNonFinite, "t is NaN");
  if (std::isinf(t)) return t > 0 ? -std::numeric_limits<double>::infinity() : 0.0;
  const real tt = static_cast<real>(t) * t;
  const real x = df / (df + tt);
  const real y = tt / (df + tt);
  const real half_a = 0.5L * df;
  const real log_half_i = std::log(0.5L) + log_incbeta(x, y, half_a, 0.5L);
  if (t >= 0) return static_cast<double>(log_half_i);
  return static_cast<double>(std::log1p(-std::exp(log_half_i)));
}

double student_t_upper_tail(double t, double df) { return std::exp(log_student_t_upper_tail(t, df)); }

TTestResult students_t_two_sample(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Moments ma = moments(a);
  const Moments mb = moments(b);
  TTestResult r;
  r.n_a = ma.n;
  r.n_b = mb.n;
  r.mean_a = static_cast<double>(ma.mean);
  r.mean_b = static_cast<double>(mb.mean);
  r.df = static_cast<double>(ma.n + mb.n - 2);
  const real pooled = ((ma.n - 1) * ma.var + (mb.n - 1) * mb.var) / static_cast<real>(ma.n + mb.n - 2);
  const real diff = ma.mean - mb.mean;
  if (pooled == 0.0L) {
    if (diff == 0.0L) throw StatsError(StatsError::Kind::kDegenerate, "zero pooled variance and equal means");
    r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  } else {
    const real se = std::sqrt(pooled * (1.0L / ma.n + 1.0L / mb.n));
    r.t = static_cast<double>(diff / se);
  }
  fill_p_values(r);
  return r;
}

TTestResult welch_t_two_sample(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Moments ma = moments(a);
  const Moments mb = moments(b);
  TTestResult r;
  r.n_a = ma.n;
  r.n_b = mb.n;
  r.mean_a = static_cast<double>(ma.mean);
  r.mean_b = static_cast<double>(mb.mean);
  const real va = ma.var / ma.n;
  const real vb = mb.var / mb.n;
  const real diff = ma.mean - mb.mean;
  if (va + vb == 0.0L) {
    if (diff == 0.0L) throw StatsError(StatsError::Kind::kDegenerate, "zero variance and equal means");
    r.df = static_cast<double>(ma.n + mb.n - 2);
    r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  } else {
    r.t = static_cast<double>(diff / std::sqrt(va + vb));
    r.df = static_cast<double>((va + vb) * (va + vb) / (va * va / (ma.n - 1) + vb * vb / (mb.n - 1)));
  }
  fill_p_values(r);
  return r;
}

PerplexityResult corpus_perplexity(const std::vector<std::vector<double>>& items) {
  if (items.empty()) throw StatsError(StatsError::Kind::kEmptyCorpus, "no captions");
  PerplexityResult r;
  real total = 0.0L;
  real per_caption_sum = 0.0L;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& seq = items[i];
    if (seq.empty()) {
      throw StatsError(StatsError::Kind::kEmptyCorpus, "caption " + std::to_string(i) + " has no tokens");
    }
    real s = 0.0L;
    for (double lp : seq) {
      if (std::isnan(lp)) throw StatsError(StatsError::Kind::kNonFinite, "caption " + std::to_string(i));
      if (lp > 0.0) throw StatsError(StatsError::Kind::kPositiveLogprob, "caption " + std::to_string(i));
      s += lp;
    }
    total += s;
    per_caption_sum += std::exp(-s / static_cast<real>(seq.size()));
    r.tokens += seq.size();
  }
  r.captions = items.size();
  r.corpus = static_cast<double>(std::exp(-total / static_cast<real>(r.tokens)));
  r.mean_per_caption = static_cast<double>(per_caption_sum / static_cast<real>(r.captions));
  return r;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) throw StatsError(StatsError::Kind::kEmptyInput, "Wilson interval needs n >= 1");
  const real nn = n;
  const real p = successes / nn;
  const real z2 = static_cast<real>(z) * z;
  const real denom = 1.0L + z2 / nn;
  const real center = (p + z2 / (2.0L * nn)) / denom;
  const real half = z / denom * std::sqrt(p * (1.0L - p) / nn + z2 / (4.0L * nn * nn));
  double lo = successes == 0 ? 0.0 : static_cast<double>(std::max(0.0L, center - half));
  double hi = successes == n ? 1.0 : static_cast<double>(std::min(1.0L, center + half));
  return {lo, hi};
}

PreferenceResult preference_rate(std::span<const Judgment> judgments) {
  if (judgments.empty()) throw StatsError(StatsError::Kind::kEmptyInput, "no judgments");
  PreferenceResult r;
  for (Judgment j : judgments) {
    switch (j) {
      case Judgment::kFilteredWins: ++r.wins; break;
      case Judgment::kFullWins: ++r.losses; break;
      case Judgment::kTie: ++r.ties; break;
    }
  }
  r.total = judgments.size();
  r.rate = static_cast<double>(r.wins) / static_cast<double>(r.total);
  std::tie(r.wilson_lo, r.wilson_hi) = wilson_interval(r.wins, r.total);
  return r;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw StatsError(StatsError::Kind::kEmptyInput, "mean of empty sample");
  return static_cast<double>(moments(xs).mean);
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw StatsError(StatsError::Kind::kTooFewSamples, "variance needs 2 values");
  return static_cast<double>(moments(xs).var);
}

}  // namespace sieve::stats
