#pragma once

// Brown-Resnick pairwise exponential measure (Husler-Reiss form), its
// partials, the bivariate density, and the four-case censored pair
// log-likelihood. Kernels are templated on the scalar type so the same code
// path produces values (double) and exact derivatives (Dual3 seeded on the
// two Frechet coordinates and the dependence scalar a).
//
// With w = a/2 - log(x1/x2)/a and v = a - w, the identity
// phi(w)/x1 = phi(v)/x2 collapses the partials to
//   V1  = -Phi(w)/x1^2,   V2 = -Phi(v)/x2^2,   V12 = -phi(w)/(a x1^2 x2).

#include <cmath>
#include <stdexcept>

#include "spex/dependence.hpp"
#include "spex/gev.hpp"
#include "spex/math.hpp"

namespace spex {

struct PairLikContext {
  double a12;  // sqrt(2 gamma(h))
  double u1f;  // censoring thresholds on the Frechet scale
  double u2f;
};

namespace detail {

template <class T>
struct HrWv {
  T w, v;
};

template <class T>
HrWv<T> hr_wv(const T& x1, const T& x2, const T& a) {
  using std::log;
  T t = log(x1 / x2) / a;
  T half_a = a * T(0.5);
  return {half_a - t, half_a + t};
}

}  // namespace detail

template <class T>
T hr_V(const T& x1, const T& x2, const T& a) {
  auto [w, v] = detail::hr_wv(x1, x2, a);
  return normal_cdf_t(w) / x1 + normal_cdf_t(v) / x2;
}

template <class T>
T hr_V1(const T& x1, const T& x2, const T& a) {
  auto [w, v] = detail::hr_wv(x1, x2, a);
  return -normal_cdf_t(w) / (x1 * x1);
}

template <class T>
T hr_V12(const T& x1, const T& x2, const T& a) {
  auto [w, v] = detail::hr_wv(x1, x2, a);
  return -normal_pdf_t(w) / (a * x1 * x1 * x2);
}

// f(x1,x2) = exp(-V) (V1 V2 - V12), positive everywhere.
template <class T>
T hr_density(const T& x1, const T& x2, const T& a) {
  using std::exp;
  using std::log;
  auto [w, v] = detail::hr_wv(x1, x2, a);
  T x1sq = x1 * x1, x2sq = x2 * x2;
  T D = normal_cdf_t(w) * normal_cdf_t(v) / (x1sq * x2sq) +
        normal_pdf_t(w) / (a * x1sq * x2);
  return exp(-hr_V(x1, x2, a)) * D;
}

// Core branch log-contributions (Jacobian terms excluded; added by callers).
template <class T>
T hr_both_exceed_core(const T& x1, const T& x2, const T& a) {
  using std::log;
  auto [w, v] = detail::hr_wv(x1, x2, a);
  T x1sq = x1 * x1, x2sq = x2 * x2;
  T D = normal_cdf_t(w) * normal_cdf_t(v) / (x1sq * x2sq) +
        normal_pdf_t(w) / (a * x1sq * x2);
  return -hr_V(x1, x2, a) + log(D);
}

// First argument exceeds, partner censored at Frechet threshold uf:
// log{-V1(x, uf) exp(-V(x, uf))} = -V + log Phi(w) - 2 log x.
template <class T>
T hr_one_exceed_core(const T& x, const T& uf, const T& a) {
  using std::log;
  auto [w, v] = detail::hr_wv(x, uf, a);
  return -hr_V(x, uf, a) + log(normal_cdf_t(w)) - T(2.0) * log(x);
}

template <class T>
T hr_none_exceed_core(const T& u1f, const T& u2f, const T& a) {
  return -hr_V(u1f, u2f, a);
}

// ---------------------------------------------------------------------------
// Public double-precision surface mirroring the pair context.

inline void check_pair_args(double x1, double x2, const PairLikContext& ctx) {
  if (!(x1 > 0.0 && x2 > 0.0))
    throw std::domain_error("exponential_measure: arguments must be positive");
  if (!(ctx.a12 > 0.0))
    throw std::domain_error("exponential_measure: a12 must be positive");
}

inline double exponential_measure(double x1, double x2, const PairLikContext& ctx) {
  check_pair_args(x1, x2, ctx);
  return hr_V(x1, x2, ctx.a12);
}

struct ExponentialMeasurePartials {
  double V1, V2, V12;
};

inline ExponentialMeasurePartials exponential_measure_partials(double x1, double x2,
                                                               const PairLikContext& ctx) {
  check_pair_args(x1, x2, ctx);
  return {hr_V1(x1, x2, ctx.a12), hr_V1(x2, x1, ctx.a12), hr_V12(x1, x2, ctx.a12)};
}

inline double bivariate_density(double x1, double x2, const PairLikContext& ctx) {
  check_pair_args(x1, x2, ctx);
  return hr_density(x1, x2, ctx.a12);
}

// Four-case censored pair log-likelihood on the data scale. Ties y == u are
// censored. Thresholds below the lower support endpoint censor nothing.
inline double censored_pair_loglik(double y1, double y2, const GevParams& g1,
                                   const GevParams& g2, double u1, double u2,
                                   const DependenceParams& dep, double h) {
  const double a = pair_a(h, dep);
  const bool e1 = y1 > u1;
  const bool e2 = y2 > u2;
  const double u1f = threshold_to_frechet(u1, g1);
  const double u2f = threshold_to_frechet(u2, g2);
  if (e1 && e2) {
    double x1 = gev_to_frechet(y1, g1);
    double x2 = gev_to_frechet(y2, g2);
    return hr_both_exceed_core(x1, x2, a) +
           std::log(frechet_jacobian(y1, g1)) + std::log(frechet_jacobian(y2, g2));
  }
  if (e1) {
    double x1 = gev_to_frechet(y1, g1);
    return hr_one_exceed_core(x1, u2f, a) + std::log(frechet_jacobian(y1, g1));
  }
  if (e2) {
    double x2 = gev_to_frechet(y2, g2);
    return hr_one_exceed_core(x2, u1f, a) + std::log(frechet_jacobian(y2, g2));
  }
  return hr_none_exceed_core(u1f, u2f, a);
}

}  // namespace spex
