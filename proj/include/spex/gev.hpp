#pragma once

// GEV marginal model: transforms between the data scale and the unit
// Frechet scale, CDF/quantile, and probability-weighted-moment fitting
// used for starting values.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spex/math.hpp"

namespace spex {

// |xi| below this uses the Gumbel/exponential branch.
inline constexpr double kXiBranchTol = 1e-8;

// Admissible shape interval for optimization: (-0.5 + eps, 1).
inline constexpr double kXiMin = -0.5 + 1e-3;
inline constexpr double kXiMax = 1.0;

struct GevParams {
  double mu = 0.0;
  double sigma = 1.0;
  double xi = 0.0;
};

class GevSupportError : public std::domain_error {
 public:
  GevSupportError(double y, const GevParams& g)
      : std::domain_error("value " + std::to_string(y) +
                          " outside GEV support (mu=" + std::to_string(g.mu) +
                          ", sigma=" + std::to_string(g.sigma) +
                          ", xi=" + std::to_string(g.xi) + ")") {}
};

inline bool gev_in_support(double y, const GevParams& g) {
  if (std::abs(g.xi) < kXiBranchTol) return true;
  return 1.0 + g.xi * (y - g.mu) / g.sigma > 0.0;
}

// x = {1 + xi (y - mu)/sigma}^{1/xi}, exponential branch for xi ~ 0.
inline double gev_to_frechet(double y, const GevParams& g) {
  double t = (y - g.mu) / g.sigma;
  if (std::abs(g.xi) < kXiBranchTol) return std::exp(t);
  double base = 1.0 + g.xi * t;
  if (base <= 0.0) throw GevSupportError(y, g);
  return std::pow(base, 1.0 / g.xi);
}

// dx/dy = x^{1-xi}/sigma.
inline double frechet_jacobian(double y, const GevParams& g) {
  double x = gev_to_frechet(y, g);
  return std::pow(x, 1.0 - g.xi) / g.sigma;
}

// Inverse of gev_to_frechet: y = mu + (sigma/xi)(x^xi - 1).
inline double gev_from_frechet(double x, const GevParams& g) {
  if (std::abs(g.xi) < kXiBranchTol) return g.mu + g.sigma * std::log(x);
  return g.mu + g.sigma / g.xi * (std::pow(x, g.xi) - 1.0);
}

inline double gev_cdf(double y, const GevParams& g) {
  double t = (y - g.mu) / g.sigma;
  if (std::abs(g.xi) < kXiBranchTol) return std::exp(-std::exp(-t));
  double base = 1.0 + g.xi * t;
  if (base <= 0.0) return g.xi > 0.0 ? 0.0 : 1.0;
  return std::exp(-std::pow(base, -1.0 / g.xi));
}

inline double gev_quantile(double p, const GevParams& g) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("gev_quantile: p outside (0,1)");
  double w = -std::log(p);  // exceedance on Gumbel scale
  if (std::abs(g.xi) < kXiBranchTol) return g.mu - g.sigma * std::log(w);
  return g.mu + g.sigma / g.xi * (std::pow(w, -g.xi) - 1.0);
}

// Frechet value and its partials w.r.t. (mu, sigma, xi); used to chain the
// pair-likelihood gradient through the marginal regression.
struct FrechetValue {
  double x = 0.0;
  double logx = 0.0;
  double dmu = 0.0;
  double dsigma = 0.0;
  double dxi = 0.0;
  bool valid = false;
};

inline FrechetValue frechet_value(double y, const GevParams& g) {
  FrechetValue f;
  double t = (y - g.mu) / g.sigma;
  if (std::abs(g.xi) < kXiBranchTol) {
    f.x = std::exp(t);
    f.logx = t;
    f.dmu = -f.x / g.sigma;
    f.dsigma = -f.x * t / g.sigma;
    f.dxi = f.x * (-0.5 * t * t + (2.0 / 3.0) * g.xi * t * t * t);
    f.valid = true;
    return f;
  }
  double base = 1.0 + g.xi * t;
  if (base <= 0.0) return f;  // invalid
  f.logx = std::log(base) / g.xi;
  f.x = std::exp(f.logx);
  double xpow = std::exp((1.0 - g.xi) * f.logx);  // x^{1-xi}
  f.dmu = -xpow / g.sigma;
  f.dsigma = -t * xpow / g.sigma;
  f.dxi = f.x * (-f.logx / g.xi + t / (g.xi * base));
  f.valid = true;
  return f;
}

// Frechet-scale threshold. A threshold below the lower support endpoint
// censors nothing (maps to 0); above the upper endpoint it censors
// everything (maps to +inf).
inline double threshold_to_frechet(double u, const GevParams& g) {
  double t = (u - g.mu) / g.sigma;
  if (std::abs(g.xi) < kXiBranchTol) return std::exp(t);
  double base = 1.0 + g.xi * t;
  if (base <= 0.0) return g.xi > 0.0 ? 0.0 : kInf;
  return std::pow(base, 1.0 / g.xi);
}

// Probability-weighted-moment fit (Hosking's approximation). Used only for
// starting values; data need not be sorted.
inline GevParams gev_fit_pwm(std::vector<double> y) {
  if (y.size() < 4) throw std::invalid_argument("gev_fit_pwm: need >= 4 observations");
  std::sort(y.begin(), y.end());
  const std::size_t n = y.size();
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double w1 = (double)j / (n - 1.0);
    double w2 = (n >= 3) ? w1 * (j > 0 ? (j - 1.0) / (n - 2.0) : 0.0) : 0.0;
    b0 += y[j];
    b1 += w1 * y[j];
    b2 += w2 * y[j];
  }
  b0 /= n;
  b1 /= n;
  b2 /= n;
  double denom = 3.0 * b2 - b0;
  double c = (std::abs(denom) > 1e-300) ? (2.0 * b1 - b0) / denom - std::log(2.0) / std::log(3.0)
                                        : 0.0;
  double kappa = 7.8590 * c + 2.9554 * c * c;  // Hosking's kappa = -xi
  double xi = -kappa;
  xi = std::clamp(xi, kXiMin + 1e-3, kXiMax - 1e-3);
  kappa = -xi;
  double gam = std::tgamma(1.0 + kappa);
  double sigma, mu;
  if (std::abs(kappa) < 1e-6) {
    sigma = (2.0 * b1 - b0) / std::log(2.0);
    mu = b0 - 0.5772156649015329 * sigma;
  } else {
    sigma = (2.0 * b1 - b0) * kappa / (gam * (1.0 - std::pow(2.0, -kappa)));
    mu = b0 + sigma * (gam - 1.0) / kappa;
  }
  if (!(sigma > 0.0)) sigma = std::max(1e-6, 0.1 * std::abs(b0) + 1e-3);
  return {mu, sigma, xi};
}

}  // namespace spex
