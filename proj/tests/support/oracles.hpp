#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these share code with the library implementations.

#include <cmath>
#include <span>
#include <utility>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace sieve::oracle {

// 113-bit binary float, about 34 significant digits
using Real = boost::multiprecision::cpp_bin_float_quad;

// P(T > t) for Student t by integrating the density over [|t|, inf).
inline Real t_upper_tail(const Real& t, const Real& df) {
  using boost::multiprecision::pow;
  using boost::multiprecision::sqrt;
  const Real pi = boost::math::constants::pi<Real>();
  const Real norm = boost::math::tgamma((df + 1) / 2) / (sqrt(df * pi) * boost::math::tgamma(df / 2));
  auto density = [&](const Real& x) { return norm * pow(1 + x * x / df, -(df + 1) / 2); };
  boost::math::quadrature::exp_sinh<Real> integrator;
  const Real at = t < 0 ? Real(-t) : t;
  const Real tail = integrator.integrate(density, at, std::numeric_limits<Real>::infinity());
  return t < 0 ? Real(1 - tail) : tail;
}

struct TTestOracle {
  Real t;
  Real df;
  Real p_one;
};

inline TTestOracle pooled_t_test(std::span<const double> a, std::span<const double> b) {
  auto moments = [](std::span<const double> xs) {
    Real sum = 0;
    for (double x : xs) sum += x;
    const Real m = sum / xs.size();
    Real ss = 0;
    for (double x : xs) ss += (Real(x) - m) * (Real(x) - m);
    return std::pair{m, ss};
  };
  const auto [ma, ssa] = moments(a);
  const auto [mb, ssb] = moments(b);
  const Real na = a.size();
  const Real nb = b.size();
  const Real df = na + nb - 2;
  const Real sp2 = (ssa + ssb) / df;
  const Real t = (ma - mb) / boost::multiprecision::sqrt(sp2 * (1 / na + 1 / nb));
  return {t, df, t_upper_tail(t, df)};
}

// I_x(a, b) for integer a, b via the binomial sum
// sum_{j=a}^{a+b-1} C(a+b-1, j) x^j (1-x)^(a+b-1-j).
inline double incomplete_beta_integer(double x, unsigned a, unsigned b) {
  const unsigned n = a + b - 1;
  Real sum = 0;
  for (unsigned j = a; j <= n; ++j) {
    sum += boost::math::binomial_coefficient<Real>(n, j) * boost::multiprecision::pow(Real(x), j) *
           boost::multiprecision::pow(Real(1) - x, n - j);
  }
  return static_cast<double>(sum);
}

// Wilson bounds as the two roots of (1 + z^2/n) p^2 - (2 ph + z^2/n) p + ph^2 = 0.
inline std::pair<double, double> wilson_roots(unsigned k, unsigned n, double z) {
  const Real ph = Real(k) / n;
  const Real z2n = Real(z) * z / n;
  const Real qa = 1 + z2n;
  const Real qb = -(2 * ph + z2n);
  const Real qc = ph * ph;
  const Real disc = boost::multiprecision::sqrt(qb * qb - 4 * qa * qc);
  return {static_cast<double>((-qb - disc) / (2 * qa)), static_cast<double>((-qb + disc) / (2 * qa))};
}

}  // namespace sieve::oracle
