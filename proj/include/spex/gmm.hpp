#pragma once

// Combination stage for homogeneous block parameters: stacked score
// covariance, per-block weight matrices, closed-form minimum-distance
// combination, and its sandwich variance.

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "spex/dependence.hpp"

namespace spex {

inline Eigen::VectorXd average_mcles(const std::vector<Eigen::VectorXd>& thetas) {
  if (thetas.empty()) throw std::invalid_argument("no block estimates");
  Eigen::VectorXd m = Eigen::VectorXd::Zero(thetas[0].size());
  for (const auto& t : thetas) {
    if (t.size() != m.size()) throw std::invalid_argument("estimate size mismatch");
    m += t;
  }
  return m / (double)thetas.size();
}

// C = (1/n) sum_i psi_i psi_i^T with psi_i the scores of all blocks at the
// common reference point, stacked into one row per replicate.
inline Eigen::MatrixXd sample_covariance(const std::vector<Eigen::MatrixXd>& psis) {
  if (psis.empty()) throw std::invalid_argument("no score kernels");
  const int n = (int)psis[0].rows();
  int kp = 0;
  for (const auto& m : psis) {
    if ((int)m.rows() != n) throw std::invalid_argument("replicate count mismatch");
    kp += (int)m.cols();
  }
  Eigen::MatrixXd stacked(n, kp);
  int off = 0;
  for (const auto& m : psis) {
    stacked.middleCols(off, (int)m.cols()) = m;
    off += (int)m.cols();
  }
  return (stacked.transpose() * stacked) / (double)n;
}

// Invert with an escalating ridge so that near-singular covariances (short
// series, strongly dependent blocks) still give usable weights.
inline Eigen::MatrixXd robust_inverse(const Eigen::MatrixXd& C) {
  const double mean_diag = C.diagonal().mean();
  for (double ridge : {0.0, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd A = C;
    if (ridge > 0.0) A.diagonal().array() += ridge * mean_diag;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
    Eigen::MatrixXd inv =
        ldlt.solve(Eigen::MatrixXd::Identity(C.rows(), C.cols()));
    if (inv.allFinite()) return inv;
  }
  throw std::runtime_error("score covariance is numerically singular");
}

// W_k: diagonal p x p blocks of C^{-1}.
inline std::vector<Eigen::MatrixXd> block_weights(const Eigen::MatrixXd& C, int p) {
  if (C.rows() % p != 0) throw std::invalid_argument("covariance not a multiple of p");
  Eigen::MatrixXd Cinv = robust_inverse(C);
  std::vector<Eigen::MatrixXd> W;
  for (int k = 0; k * p < (int)C.rows(); ++k)
    W.push_back(Cinv.block(k * p, k * p, p, p));
  return W;
}

struct MetaResult {
  Eigen::VectorXd theta;
  Eigen::MatrixXd H;  // sum_k I_k^T W_k I_k
};

inline MetaResult meta_estimate(const std::vector<Eigen::VectorXd>& thetas,
                                const std::vector<Eigen::MatrixXd>& sens,
                                const std::vector<Eigen::MatrixXd>& W) {
  const int K = (int)thetas.size();
  if ((int)sens.size() != K || (int)W.size() != K)
    throw std::invalid_argument("inconsistent block counts");
  const int p = (int)thetas[0].size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd Pk = sens[k].transpose() * W[k] * sens[k];
    H += Pk;
    b += Pk * thetas[k];
  }
  MetaResult r;
  r.H = H;
  r.theta = H.ldlt().solve(b);
  return r;
}

// n^{-1} H^{-1} G H^{-T} with G built from all cross-block covariance blocks.
inline Eigen::MatrixXd sandwich_covariance(const std::vector<Eigen::MatrixXd>& sens,
                                           const std::vector<Eigen::MatrixXd>& W,
                                           const Eigen::MatrixXd& C,
                                           const Eigen::MatrixXd& H, int n) {
  const int K = (int)sens.size();
  const int p = (int)sens[0].rows();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::MatrixXd> IW(K);
  for (int k = 0; k < K; ++k) IW[k] = sens[k].transpose() * W[k];
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l)
      G += IW[k] * C.block(k * p, l * p, p, p) * IW[l].transpose();
  Eigen::MatrixXd Hinv = H.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  return (Hinv * G * Hinv.transpose()) / (double)n;
}

// Map a covariance on the working scale (omega, zeta, betas) to the natural
// scale (alpha, phi, betas) with the diagonal delta-method Jacobian.
inline Eigen::MatrixXd delta_transform(const Eigen::MatrixXd& cov_working,
                                       const Eigen::VectorXd& theta_working) {
  DependenceParams dep{theta_working(0), theta_working(1)};
  Eigen::VectorXd Dd = Eigen::VectorXd::Ones(theta_working.size());
  double al = dep.alpha();
  Dd(0) = al * (2.0 - al) / 2.0;  // d alpha / d omega
  Dd(1) = dep.phi();              // d phi / d zeta
  return Dd.asDiagonal() * cov_working * Dd.asDiagonal();
}

inline Eigen::VectorXd to_natural_scale(const Eigen::VectorXd& theta_working) {
  Eigen::VectorXd t = theta_working;
  DependenceParams dep{t(0), t(1)};
  t(0) = dep.alpha();
  t(1) = dep.phi();
  return t;
}

// Quadratic objective whose minimizer the closed form must reproduce; used
// by tests as an independent check of the combination algebra.
inline double gmm_objective_oracle(const Eigen::VectorXd& theta,
                                   const std::vector<Eigen::VectorXd>& thetas,
                                   const std::vector<Eigen::MatrixXd>& sens,
                                   const std::vector<Eigen::MatrixXd>& W) {
  double q = 0.0;
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    Eigen::VectorXd r = sens[k] * (thetas[k] - theta);
    q += r.dot(W[k] * r);
  }
  return q;
}

}  // namespace spex
