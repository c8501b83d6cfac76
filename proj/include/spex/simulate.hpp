#pragma once

// Simulation of unit-Frechet Brown-Resnick fields and their GEV-margin
// transforms. Two generators behind one flag: the exact extremal-functions
// record-breaking construction, and a faster truncated spectral
// approximation (max over N rescaled log-Gaussian profiles).

#include <Eigen/Dense>
#include <future>
#include <stdexcept>
#include <thread>
#include <vector>

#include "spex/dependence.hpp"
#include "spex/gev.hpp"
#include "spex/math.hpp"
#include "spex/partition.hpp"

namespace spex {

struct SimConfig {
  std::vector<Site> sites;
  int n = 1;
  DependenceParams dep;
  std::vector<GevParams> margins;  // per site; empty => Frechet only
  std::uint64_t seed = 0;
  bool exact = true;
  int spectral_functions = 1000;  // truncation for the approximate method
  int workers = 1;
};

class SimGeometryError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Gaussian increment field W with W(s_0) = 0 and
// Var{W(s_i) - W(s_j)} = 2 gamma(s_i - s_j). Cov built from the variogram
// with one site pinned at zero; Cholesky with escalating jitter.
struct IncrementField {
  Eigen::MatrixXd chol;      // (d-1) x (d-1) lower factor for sites 1..d-1
  Eigen::MatrixXd gamma;     // pairwise semivariogram values
  Eigen::VectorXd var_diag;  // Var W(s_j) = 2 gamma(s_j - s_0)

  IncrementField(const std::vector<Site>& sites, const DependenceParams& dep) {
    const int d = (int)sites.size();
    gamma.resize(d, d);
    double alpha = dep.alpha(), phi = dep.phi();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double dist = site_distance(sites[i], sites[j]);
        if (i != j && dist == 0.0)
          throw SimGeometryError("simulate: duplicate site coordinates");
        gamma(i, j) = semivariogram(dist, alpha, phi);
      }
    var_diag.resize(d);
    for (int j = 0; j < d; ++j) var_diag(j) = 2.0 * gamma(0, j);
    if (d == 1) return;
    Eigen::MatrixXd cov(d - 1, d - 1);
    for (int i = 1; i < d; ++i)
      for (int j = 1; j < d; ++j)
        cov(i - 1, j - 1) = gamma(0, i) + gamma(0, j) - gamma(i, j);
    double scale = std::max(1e-300, cov.diagonal().mean());
    for (double jitter : {0.0, 1e-10, 1e-8, 1e-6}) {
      Eigen::MatrixXd c = cov;
      c.diagonal().array() += jitter * scale;
      Eigen::LLT<Eigen::MatrixXd> llt(c);
      if (llt.info() == Eigen::Success) {
        chol = llt.matrixL();
        return;
      }
    }
    throw SimGeometryError("simulate: covariance not factorizable (degenerate geometry)");
  }

  // One draw of W(s_0..s_{d-1}) with W(s_0) = 0.
  Eigen::VectorXd draw(Rng& rng) const {
    const int d = (int)var_diag.size();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    if (d == 1) return w;
    Eigen::VectorXd z(d - 1);
    for (int i = 0; i < d - 1; ++i) z(i) = rng.normal();
    w.tail(d - 1) = chol * z;
    return w;
  }
};

inline Eigen::VectorXd replicate_exact(const IncrementField& f, Rng& rng) {
  const int d = (int)f.var_diag.size();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd y(d);
  for (int j = 0; j < d; ++j) {
    double zeta = rng.exponential();
    while (1.0 / zeta > z(j)) {
      Eigen::VectorXd w = f.draw(rng);
      // extremal profile anchored at site j: y(s) = exp{W(s)-W(s_j)-gamma(s,s_j)}
      for (int i = 0; i < d; ++i) y(i) = std::exp(w(i) - w(j) - f.gamma(i, j));
      bool record = true;
      for (int i = 0; i < j; ++i)
        if (y(i) / zeta >= z(i)) { record = false; break; }
      if (record)
        for (int i = 0; i < d; ++i) z(i) = std::max(z(i), y(i) / zeta);
      zeta += rng.exponential();
    }
  }
  return z;
}

inline Eigen::VectorXd replicate_spectral(const IncrementField& f, Rng& rng, int nfun) {
  const int d = (int)f.var_diag.size();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  double t = 0.0;
  for (int i = 0; i < nfun; ++i) {
    t += rng.exponential();
    Eigen::VectorXd w = f.draw(rng);
    for (int j = 0; j < d; ++j)
      z(j) = std::max(z(j), std::exp(w(j) - 0.5 * f.var_diag(j)) / t);
  }
  return z;
}

}  // namespace detail

inline Eigen::MatrixXd simulate_frechet_field(const SimConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("simulate: n must be >= 1");
  if (cfg.sites.empty()) throw std::invalid_argument("simulate: no sites");
  detail::IncrementField field(cfg.sites, cfg.dep);
  const int d = (int)cfg.sites.size();
  Eigen::MatrixXd out(cfg.n, d);
  auto gen_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      Rng rng(cfg.seed, (std::uint64_t)i);
      Eigen::VectorXd z = cfg.exact ? detail::replicate_exact(field, rng)
                                    : detail::replicate_spectral(field, rng, cfg.spectral_functions);
      out.row(i) = z.transpose();
    }
  };
  int workers = std::max(1, cfg.workers);
  if (workers == 1 || cfg.n < 2 * workers) {
    gen_range(0, cfg.n);
  } else {
    std::vector<std::future<void>> fs;
    for (int w = 0; w < workers; ++w)
      fs.push_back(std::async(std::launch::async, gen_range, w * cfg.n / workers,
                              (w + 1) * cfg.n / workers));
    for (auto& fut : fs) fut.get();
  }
  return out;
}

inline Eigen::MatrixXd simulate_gev_field(const SimConfig& cfg) {
  if (cfg.margins.size() != cfg.sites.size())
    throw std::invalid_argument("simulate: one GevParams per site required");
  Eigen::MatrixXd x = simulate_frechet_field(cfg);
  for (int j = 0; j < x.cols(); ++j)
    for (int i = 0; i < x.rows(); ++i)
      x(i, j) = gev_from_frechet(x(i, j), cfg.margins[j]);
  return x;
}

}  // namespace spex
