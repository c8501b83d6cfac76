#pragma once

// Goodness-of-fit diagnostics: probability integral transforms of the fitted
// marginal GEVs and r-year return levels of the annual maximum (product of
// the monthly fitted distribution functions), with delta-method standard
// errors.

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "spex/gev.hpp"

namespace spex {

struct PitResult {
  Eigen::MatrixXd u;  // n x d, each in [0, 1]
  std::vector<std::pair<int, int>> support_violations;  // (replicate, site)
};

// margins(i, s) gives the fitted GEV for replicate i at site s
inline PitResult pit_values(const Eigen::MatrixXd& obs,
                            const std::function<GevParams(int, int)>& margins) {
  PitResult r;
  r.u.resize(obs.rows(), obs.cols());
  for (int s = 0; s < obs.cols(); ++s)
    for (int i = 0; i < obs.rows(); ++i) {
      GevParams g = margins(i, s);
      double y = obs(i, s);
      if (!gev_in_support(y, g)) {
        // distribution limit: below the lower endpoint -> 0, above -> 1
        double t = 1.0 + g.xi * (y - g.mu) / g.sigma;
        r.u(i, s) = t <= 0.0 && g.xi > 0.0 ? 0.0 : (t <= 0.0 ? 1.0 : 0.5);
        r.support_violations.push_back({i, s});
      } else {
        r.u(i, s) = gev_cdf(y, g);
      }
    }
  return r;
}

inline double annual_max_cdf(double y, const std::vector<GevParams>& months) {
  double f = 1.0;
  for (const GevParams& g : months) {
    double fy = gev_in_support(y, g) ? gev_cdf(y, g)
                                     : (g.xi > 0.0 && y < g.mu ? 0.0 : 1.0);
    f *= fy;
  }
  return f;
}

struct ReturnLevel {
  double level = 0.0;
  double se = 0.0;  // 0 when no covariance supplied
};

// Solves prod_i F_i(y) = 1 - 1/r by bracketed bisection. `cov`, when given,
// is the covariance of the stacked month parameters (mu_1, sigma_1, xi_1,
// mu_2, ...) and yields a delta-method SE.
inline ReturnLevel return_level(const std::vector<GevParams>& months, double r,
                                const Eigen::MatrixXd* cov = nullptr) {
  if (months.empty()) throw std::invalid_argument("no monthly distributions");
  if (!(r > 1.0)) throw std::invalid_argument("return period must exceed 1");
  const double p = 1.0 - 1.0 / r;
  const int m = (int)months.size();
  double c = std::pow(p, 1.0 / m);
  double lo = kInf, hi = -kInf;
  for (const GevParams& g : months) {
    lo = std::min(lo, gev_quantile(p, g));
    hi = std::max(hi, gev_quantile(c, g));
  }
  // widen defensively; bisection needs F(lo) <= p <= F(hi)
  for (int t = 0; annual_max_cdf(lo, months) > p; ++t) {
    if (t >= 200) throw std::runtime_error("return level bracket expansion failed (low)");
    lo -= std::max(1.0, std::abs(lo));
  }
  for (int t = 0; annual_max_cdf(hi, months) < p; ++t) {
    if (t >= 200) throw std::runtime_error("return level bracket expansion failed (high)");
    hi += std::max(1.0, std::abs(hi));
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(hi)); ++it) {
    double mid = 0.5 * (lo + hi);
    (annual_max_cdf(mid, months) < p ? lo : hi) = mid;
  }
  ReturnLevel out;
  out.level = 0.5 * (lo + hi);

  if (cov) {
    if (cov->rows() != 3 * m || cov->cols() != 3 * m)
      throw std::invalid_argument("return level covariance must be 3m x 3m");
    const double y = out.level;
    double h = 1e-5 * (1.0 + std::abs(y));
    double dFdy = (annual_max_cdf(y + h, months) - annual_max_cdf(y - h, months)) / (2.0 * h);
    Eigen::VectorXd grad(3 * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 3; ++j) {
        auto bump = [&](double eps) {
          std::vector<GevParams> mm = months;
          if (j == 0) mm[i].mu += eps;
          if (j == 1) mm[i].sigma += eps;
          if (j == 2) mm[i].xi += eps;
          return annual_max_cdf(y, mm);
        };
        double base = j == 1 ? months[i].sigma : (j == 2 ? months[i].xi : months[i].mu);
        double hp = 1e-6 * (1.0 + std::abs(base));
        double dFdt = (bump(hp) - bump(-hp)) / (2.0 * hp);
        grad(3 * i + j) = -dFdt / dFdy;  // implicit differentiation
      }
    out.se = std::sqrt(std::max(0.0, (double)(grad.transpose() * (*cov) * grad)));
  }
  return out;
}

}  // namespace spex
