#pragma once

// Brown-Resnick dependence parameters and the isotropic semivariogram.
// Estimation works on (omega, zeta); alpha in (0,2) and phi > 0 are the
// natural-scale values.

#include <cmath>
#include <stdexcept>

namespace spex {

struct DependenceParams {
  double omega = 0.0;  // logit-type transform of smoothness
  double zeta = 0.0;   // log range

  double alpha() const { return 2.0 * std::exp(omega) / (1.0 + std::exp(omega)); }
  double phi() const { return std::exp(zeta); }

  static DependenceParams from_natural(double alpha, double phi) {
    if (!(alpha > 0.0 && alpha < 2.0))
      throw std::domain_error("alpha must lie in (0,2)");
    if (!(phi > 0.0)) throw std::domain_error("phi must be positive");
    return {std::log(alpha / (2.0 - alpha)), std::log(phi)};
  }
};

inline double semivariogram(double h, double alpha, double phi) {
  if (h < 0.0) throw std::domain_error("semivariogram: negative distance");
  if (!(phi > 0.0)) throw std::domain_error("semivariogram: phi must be positive");
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw std::domain_error("semivariogram: alpha must lie in (0,2]");
  if (h == 0.0) return 0.0;
  return std::pow(h / phi, alpha);
}

// a = sqrt(2 gamma(h)) for a pair at separation h.
inline double pair_a(double h, const DependenceParams& dep) {
  return std::sqrt(2.0 * semivariogram(h, dep.alpha(), dep.phi()));
}

// d a / d(omega, zeta) at separation h > 0.
struct PairAGrad {
  double a;
  double domega;
  double dzeta;
};

inline PairAGrad pair_a_grad(double h, const DependenceParams& dep) {
  double alpha = dep.alpha();
  double a = pair_a(h, dep);
  double dalpha_domega = 0.5 * alpha * (2.0 - alpha);  // dalpha/domega
  double dloga_dalpha = 0.5 * (std::log(h) - dep.zeta);
  return {a, a * dloga_dalpha * dalpha_domega, -0.5 * a * alpha};
}

}  // namespace spex
