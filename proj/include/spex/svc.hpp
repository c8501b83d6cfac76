#pragma once

// Spatially-varying-coefficient mode: per-block radial basis expansions of
// the location and log-scale surfaces, heterogeneous coefficients eta_k with
// shared (omega, zeta, beta3), ridge-penalized combination, GCV selection of
// the penalties, and reconstruction of the fitted fields with pointwise SEs.

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "spex/gmm.hpp"
#include "spex/local_fit.hpp"
#include "spex/partition.hpp"

namespace spex {

struct BasisSpec {
  std::vector<Site> knots;
  double kernel_scale = 0.05;  // C(d) = exp(-scale * d^2)
  bool include_linear = true;  // leading columns [1, s1, s2]

  int cols() const { return (include_linear ? 3 : 1) + (int)knots.size(); }
};

inline int default_knot_count(int block_size) {
  return std::min(10, (int)std::ceil(block_size / 2.5));
}

// Deterministic greedy max-min (farthest point) subset, seeded at the site
// nearest the block centroid. Ties break toward the smallest site index.
inline std::vector<Site> select_knots(const std::vector<Site>& sites, int count) {
  const int d = (int)sites.size();
  if (count > d) throw std::invalid_argument("more knots requested than sites in block");
  if (count <= 0) return {};
  double cx = 0, cy = 0;
  for (const Site& s : sites) { cx += s.x / d; cy += s.y / d; }
  int seed = 0;
  double best = kInf;
  for (int j = 0; j < d; ++j) {
    double dd = (sites[j].x - cx) * (sites[j].x - cx) + (sites[j].y - cy) * (sites[j].y - cy);
    if (dd < best - 1e-15) { best = dd; seed = j; }
  }
  std::vector<int> chosen{seed};
  std::vector<double> min_dist(d);
  for (int j = 0; j < d; ++j) min_dist[j] = site_distance(sites[j], sites[seed]);
  while ((int)chosen.size() < count) {
    int next = -1;
    double far = -1.0;
    for (int j = 0; j < d; ++j)
      if (min_dist[j] > far + 1e-15) { far = min_dist[j]; next = j; }
    chosen.push_back(next);
    for (int j = 0; j < d; ++j)
      min_dist[j] = std::min(min_dist[j], site_distance(sites[j], sites[next]));
  }
  std::vector<Site> out;
  for (int j : chosen) out.push_back(sites[j]);
  return out;
}

inline Eigen::MatrixXd basis_matrix(const std::vector<Site>& sites, const BasisSpec& spec) {
  const int d = (int)sites.size();
  Eigen::MatrixXd Z(d, spec.cols());
  for (int j = 0; j < d; ++j) {
    int c = 0;
    Z(j, c++) = 1.0;
    if (spec.include_linear) {
      Z(j, c++) = sites[j].x;
      Z(j, c++) = sites[j].y;
    }
    for (const Site& kn : spec.knots) {
      double dd = site_distance(sites[j], kn);
      Z(j, c++) = std::exp(-spec.kernel_scale * dd * dd);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(1e-9);
  if (qr.rank() < Z.cols())
    throw std::invalid_argument("basis matrix is rank deficient; use fewer knots");
  return Z;
}

// Orthonormalized column span. Flat kernels are nearly collinear with the
// intercept (condition numbers ~1e4-1e5 on a 5x5 block), which stalls the
// block optimizer; the fitted fields depend only on the span.
inline Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& Z) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Z);
  return qr.householderQ() * Eigen::MatrixXd::Identity(Z.rows(), Z.cols());
}

// Index map between block-local parameter vectors (omega, zeta, eta1k, eta2k,
// beta3) and the full vector (omega, zeta, eta11, eta21, ..., eta1K, eta2K,
// beta3).
struct SvcLayout {
  std::vector<int> q1, q2;
  int q3 = 1;
  std::vector<int> eta1_off, eta2_off;  // global offsets
  int beta3_off = 0, total = 0;

  static SvcLayout build(const std::vector<int>& q1, const std::vector<int>& q2, int q3) {
    if (q1.size() != q2.size()) throw std::invalid_argument("layout block count mismatch");
    SvcLayout L;
    L.q1 = q1;
    L.q2 = q2;
    L.q3 = q3;
    int off = 2;
    for (std::size_t k = 0; k < q1.size(); ++k) {
      L.eta1_off.push_back(off);
      off += q1[k];
      L.eta2_off.push_back(off);
      off += q2[k];
    }
    L.beta3_off = off;
    L.total = off + q3;
    return L;
  }

  int blocks() const { return (int)q1.size(); }
  int local_dim(int k) const { return 2 + q1[k] + q2[k] + q3; }

  int global_index(int k, int local) const {
    if (local < 2) return local;
    local -= 2;
    if (local < q1[k]) return eta1_off[k] + local;
    local -= q1[k];
    if (local < q2[k]) return eta2_off[k] + local;
    return beta3_off + (local - q2[k]);
  }

  Eigen::VectorXd extract_local(const Eigen::VectorXd& global, int k) const {
    Eigen::VectorXd loc(local_dim(k));
    for (int j = 0; j < loc.size(); ++j) loc(j) = global(global_index(k, j));
    return loc;
  }

  // diagonal with lambda1 on eta1 slots and lambda2 on eta2 slots
  Eigen::VectorXd penalty_diagonal(double lambda1, double lambda2) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(total);
    for (int k = 0; k < blocks(); ++k) {
      d.segment(eta1_off[k], q1[k]).setConstant(lambda1);
      d.segment(eta2_off[k], q2[k]).setConstant(lambda2);
    }
    return d;
  }
};

// Zero-pad block sensitivity columns into the full parameter axis:
// shape (local dim) x (total dim).
inline Eigen::MatrixXd pad_sensitivity(const Eigen::MatrixXd& Ik, int k, const SvcLayout& L) {
  if (Ik.rows() != L.local_dim(k) || Ik.cols() != L.local_dim(k))
    throw std::invalid_argument("sensitivity shape does not match layout");
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(Ik.rows(), L.total);
  for (int j = 0; j < Ik.cols(); ++j) padded.col(L.global_index(k, j)) = Ik.col(j);
  return padded;
}

struct SvcArtifacts {
  std::vector<Eigen::VectorXd> thetas;  // local block MCCLEs
  std::vector<Eigen::MatrixXd> sens;    // local I_k at the reference point
  Eigen::MatrixXd C;                    // stacked score covariance
  std::vector<Eigen::MatrixXd> W;       // diagonal blocks of C^{-1}
  SvcLayout layout;
  int n = 0;
};

inline std::vector<Eigen::MatrixXd> block_weights_svc(const Eigen::MatrixXd& C,
                                                      const SvcLayout& L) {
  Eigen::MatrixXd Cinv = robust_inverse(C);
  std::vector<Eigen::MatrixXd> W;
  int off = 0;
  for (int k = 0; k < L.blocks(); ++k) {
    int pk = L.local_dim(k);
    W.push_back(Cinv.block(off, off, pk, pk));
    off += pk;
  }
  return W;
}

struct SvcMeta {
  Eigen::VectorXd theta;  // full parameter vector
  Eigen::MatrixXd H;      // sum of padded projections + penalty diagonal
};

inline SvcMeta meta_estimate_svc(const SvcArtifacts& art, double lambda1, double lambda2) {
  const SvcLayout& L = art.layout;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L.total, L.total);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(L.total);
  for (int k = 0; k < L.blocks(); ++k) {
    Eigen::MatrixXd Ipad = pad_sensitivity(art.sens[k], k, L);
    Eigen::MatrixXd IW = Ipad.transpose() * art.W[k];  // total x pk
    H += IW * Ipad;
    b += IW * (art.sens[k] * art.thetas[k]);
  }
  H.diagonal() += L.penalty_diagonal(lambda1, lambda2);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  Eigen::VectorXd sol = ldlt.solve(b);
  if (ldlt.info() != Eigen::Success || !sol.allFinite())
    throw std::runtime_error("penalized combination singular; increase lambda");
  SvcMeta m;
  m.H = H;
  m.theta = sol;
  return m;
}

inline Eigen::MatrixXd svc_sandwich(const SvcArtifacts& art, const Eigen::MatrixXd& H) {
  const SvcLayout& L = art.layout;
  const int K = L.blocks();
  std::vector<Eigen::MatrixXd> IW(K);
  std::vector<int> off(K);
  int o = 0;
  for (int k = 0; k < K; ++k) {
    IW[k] = pad_sensitivity(art.sens[k], k, L).transpose() * art.W[k];
    off[k] = o;
    o += L.local_dim(k);
  }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(L.total, L.total);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l)
      G += IW[k] * art.C.block(off[k], off[l], L.local_dim(k), L.local_dim(l)) *
           IW[l].transpose();
  Eigen::MatrixXd Hinv = H.ldlt().solve(Eigen::MatrixXd::Identity(L.total, L.total));
  Eigen::MatrixXd S = (Hinv * G * Hinv.transpose()) / (double)art.n;
  return 0.5 * (S + S.transpose());
}

// GCV statistic; score_at(k, local theta) returns the block's aggregate score
// at the candidate solution.
inline double gcv(const SvcArtifacts& art, double lambda1, double lambda2,
                  const Eigen::VectorXd& theta_fitted,
                  const std::function<Eigen::VectorXd(int, const Eigen::VectorXd&)>& score_at) {
  const SvcLayout& L = art.layout;
  Eigen::MatrixXd Pi_sum = Eigen::MatrixXd::Zero(L.total, L.total);
  double num = 0.0;
  for (int k = 0; k < L.blocks(); ++k) {
    Eigen::MatrixXd Ipad = pad_sensitivity(art.sens[k], k, L);
    Pi_sum += Ipad.transpose() * art.W[k] * Ipad;
    Eigen::VectorXd Psi = score_at(k, L.extract_local(theta_fitted, k));
    num += Psi.dot(art.W[k] * Psi);
  }
  num /= (double)art.n;
  Eigen::MatrixXd H = Pi_sum;
  H.diagonal() += L.penalty_diagonal(lambda1, lambda2);
  double tr = H.ldlt().solve(Pi_sum).trace();
  double denom = 1.0 - tr / (double)art.n;
  if (denom <= 0.0)
    throw std::runtime_error("GCV denominator nonpositive: effective dof >= n");
  return num / (denom * denom);
}

// ---------------------------------------------------------------------------
// Fitted-field reconstruction and error metrics.

struct SvcFields {
  std::vector<int> site_index;  // global dataset index per row
  Eigen::VectorXd mu, mu_se, log_sigma, log_sigma_se;
};

inline SvcFields reconstruct_fields(const Eigen::VectorXd& theta, const Eigen::MatrixXd& cov,
                                    const std::vector<Eigen::MatrixXd>& Z1,
                                    const std::vector<Eigen::MatrixXd>& Z2,
                                    const Partition& part, const SvcLayout& L) {
  SvcFields f;
  int total = 0;
  for (const auto& blk : part.blocks) total += (int)blk.size();
  f.mu.resize(total);
  f.mu_se.resize(total);
  f.log_sigma.resize(total);
  f.log_sigma_se.resize(total);
  int row = 0;
  for (int k = 0; k < L.blocks(); ++k) {
    const auto& blk = part.blocks[k];
    Eigen::VectorXd e1 = theta.segment(L.eta1_off[k], L.q1[k]);
    Eigen::VectorXd e2 = theta.segment(L.eta2_off[k], L.q2[k]);
    Eigen::MatrixXd V1 = cov.block(L.eta1_off[k], L.eta1_off[k], L.q1[k], L.q1[k]);
    Eigen::MatrixXd V2 = cov.block(L.eta2_off[k], L.eta2_off[k], L.q2[k], L.q2[k]);
    for (int j = 0; j < (int)blk.size(); ++j, ++row) {
      f.site_index.push_back(blk[j]);
      Eigen::RowVectorXd z1 = Z1[k].row(j), z2 = Z2[k].row(j);
      f.mu(row) = z1 * e1;
      f.log_sigma(row) = z2 * e2;
      f.mu_se(row) = std::sqrt(std::max(0.0, (double)(z1 * V1 * z1.transpose())));
      f.log_sigma_se(row) = std::sqrt(std::max(0.0, (double)(z2 * V2 * z2.transpose())));
    }
  }
  return f;
}

struct AedSummary {
  double aaed = 0.0;  // mean absolute error scaled by the true field's range
  double maed = 0.0;  // max
};

inline AedSummary aed_summary(const Eigen::VectorXd& fitted, const Eigen::VectorXd& truth) {
  if (fitted.size() != truth.size()) throw std::invalid_argument("field size mismatch");
  double range = truth.maxCoeff() - truth.minCoeff();
  if (!(range > 0.0)) throw std::invalid_argument("true field has zero range");
  Eigen::VectorXd e = (fitted - truth).cwiseAbs() / range;
  return {e.mean(), e.maxCoeff()};
}

}  // namespace spex
