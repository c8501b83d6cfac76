#pragma once

// Two-round distributed procedure over spatial blocks:
//   round 1: independent block fits, return theta_hat_k
//   reduce:  common reference point theta_hat_c
//   round 2: per-replicate score kernels and sensitivities at the reference
//   reduce:  weights from the stacked score covariance, closed-form
//            combination and sandwich covariance.
// Workers never see another block's raw data. Results are bit-identical for
// any worker count: every block writes its own slot and reduction order is
// fixed by block id.

#include <Eigen/Dense>
#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spex/gmm.hpp"
#include "spex/local_fit.hpp"
#include "spex/partition.hpp"
#include "spex/svc.hpp"

namespace spex {

struct ModelSpec {
  Eigen::MatrixXd z1_site, z2_site, z3_site;  // d x q, whole domain
  Eigen::MatrixXd z1_rep, z2_rep, z3_rep;     // n x q or empty

  // mu = s' beta1, log sigma = beta2, xi = beta3
  static ModelSpec linear_trend(const std::vector<Site>& sites) {
    ModelSpec m;
    const int d = (int)sites.size();
    m.z1_site.resize(d, 2);
    for (int j = 0; j < d; ++j) m.z1_site.row(j) << sites[j].x, sites[j].y;
    m.z2_site = Eigen::MatrixXd::Ones(d, 1);
    m.z3_site = Eigen::MatrixXd::Ones(d, 1);
    return m;
  }
};

struct PipelineInput {
  std::vector<Site> sites;
  Eigen::MatrixXd obs;         // n x d
  Eigen::VectorXd thresholds;  // d
  ModelSpec model;
};

struct PipelineConfig {
  int workers = 1;
  FitOptions fit;
  bool drop_failed_blocks = false;
};

// ---------------------------------------------------------------------------
// Versioned wire schemas for the two communication rounds. Field order is
// fixed and all floats are little-endian IEEE doubles, so records compare
// byte-for-byte across runs and machines.

namespace wire {

constexpr std::uint32_t kSchemaVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back((char)((bits >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("wire record truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= (std::uint32_t)(unsigned char)in[pos++] << (8 * i);
  return v;
}
inline double get_f64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw std::runtime_error("wire record truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= (std::uint64_t)(unsigned char)in[pos++] << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
inline void put_vec(std::string& out, const Eigen::VectorXd& v) {
  put_u32(out, (std::uint32_t)v.size());
  for (int i = 0; i < v.size(); ++i) put_f64(out, v(i));
}
inline Eigen::VectorXd get_vec(const std::string& in, std::size_t& pos) {
  std::uint32_t m = get_u32(in, pos);
  Eigen::VectorXd v(m);
  for (std::uint32_t i = 0; i < m; ++i) v(i) = get_f64(in, pos);
  return v;
}
inline void put_mat(std::string& out, const Eigen::MatrixXd& m) {  // row-major
  put_u32(out, (std::uint32_t)m.rows());
  put_u32(out, (std::uint32_t)m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}
inline Eigen::MatrixXd get_mat(const std::string& in, std::size_t& pos) {
  std::uint32_t r = get_u32(in, pos), c = get_u32(in, pos);
  Eigen::MatrixXd m(r, c);
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < c; ++j) m(i, j) = get_f64(in, pos);
  return m;
}

}  // namespace wire

struct RoundOneMsg {
  int block_id = 0;
  Eigen::VectorXd theta;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  double ccl_value = 0.0;

  std::string encode() const {
    std::string out;
    wire::put_u32(out, wire::kSchemaVersion);
    wire::put_u32(out, (std::uint32_t)block_id);
    wire::put_vec(out, theta);
    wire::put_u32(out, converged ? 1 : 0);
    wire::put_u32(out, (std::uint32_t)iterations);
    wire::put_f64(out, grad_norm);
    wire::put_f64(out, ccl_value);
    return out;
  }
  static RoundOneMsg decode(const std::string& in) {
    std::size_t pos = 0;
    if (wire::get_u32(in, pos) != wire::kSchemaVersion)
      throw std::runtime_error("wire schema version mismatch");
    RoundOneMsg m;
    m.block_id = (int)wire::get_u32(in, pos);
    m.theta = wire::get_vec(in, pos);
    m.converged = wire::get_u32(in, pos) != 0;
    m.iterations = (int)wire::get_u32(in, pos);
    m.grad_norm = wire::get_f64(in, pos);
    m.ccl_value = wire::get_f64(in, pos);
    return m;
  }
};

struct RoundTwoMsg {
  int block_id = 0;
  Eigen::MatrixXd psi;          // n x p_block
  Eigen::MatrixXd sensitivity;  // p_block x p_block

  std::string encode() const {
    std::string out;
    wire::put_u32(out, wire::kSchemaVersion);
    wire::put_u32(out, (std::uint32_t)block_id);
    wire::put_mat(out, psi);
    wire::put_mat(out, sensitivity);
    return out;
  }
  static RoundTwoMsg decode(const std::string& in) {
    std::size_t pos = 0;
    if (wire::get_u32(in, pos) != wire::kSchemaVersion)
      throw std::runtime_error("wire schema version mismatch");
    RoundTwoMsg m;
    m.block_id = (int)wire::get_u32(in, pos);
    m.psi = wire::get_mat(in, pos);
    m.sensitivity = wire::get_mat(in, pos);
    return m;
  }
};

// run tasks 0..count-1 on a pool; each task writes only its own slot
inline void parallel_for(int count, int workers, const std::function<void(int)>& task) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) task(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline BlockData make_block_data(const PipelineInput& in, const Partition& part, int k) {
  const auto& idx = part.blocks[k];
  BlockData bd;
  bd.block_id = k;
  const int dk = (int)idx.size();
  bd.obs.resize(in.obs.rows(), dk);
  bd.thresholds.resize(dk);
  bd.z1.site.resize(dk, in.model.z1_site.cols());
  bd.z2.site.resize(dk, in.model.z2_site.cols());
  bd.z3.site.resize(dk, in.model.z3_site.cols());
  for (int j = 0; j < dk; ++j) {
    bd.sites.push_back(in.sites[idx[j]]);
    bd.obs.col(j) = in.obs.col(idx[j]);
    bd.thresholds(j) = in.thresholds(idx[j]);
    bd.z1.site.row(j) = in.model.z1_site.row(idx[j]);
    bd.z2.site.row(j) = in.model.z2_site.row(idx[j]);
    bd.z3.site.row(j) = in.model.z3_site.row(idx[j]);
  }
  bd.z1.rep = in.model.z1_rep;
  bd.z2.rep = in.model.z2_rep;
  bd.z3.rep = in.model.z3_rep;
  return bd;
}

struct PipelineResult {
  Eigen::VectorXd theta_c;        // round-one average, working scale
  Eigen::VectorXd theta;          // combined estimate, working scale
  Eigen::VectorXd theta_natural;  // (alpha, phi, betas)
  Eigen::MatrixXd cov;            // sandwich, working scale
  Eigen::MatrixXd cov_natural;
  Eigen::MatrixXd H, C;
  std::vector<RoundOneMsg> round_one;
  std::vector<std::string> warnings;
  int n = 0, K = 0, p = 0;
};

inline PipelineResult run_pipeline(const PipelineInput& in, const Partition& part,
                                   const PipelineConfig& cfg = {}) {
  const int K = (int)part.blocks.size();
  const int n = (int)in.obs.rows();
  PipelineResult out;
  out.n = n;
  out.K = K;

  std::vector<BlockData> blocks;
  for (int k = 0; k < K; ++k) blocks.push_back(make_block_data(in, part, k));
  out.p = blocks[0].p();

  // round one: independent fits, gathered through the wire schema
  std::vector<std::string> r1_wire(K);
  parallel_for(K, cfg.workers, [&](int k) {
    BlockFitResult fr = fit_block(blocks[k], std::nullopt, cfg.fit);
    RoundOneMsg msg{fr.block_id, fr.theta, fr.converged, fr.iterations, fr.grad_norm,
                    fr.ccl_value};
    r1_wire[k] = msg.encode();
  });
  std::vector<int> keep;
  for (int k = 0; k < K; ++k) {
    RoundOneMsg m = RoundOneMsg::decode(r1_wire[k]);
    if (!m.converged) {
      if (!cfg.drop_failed_blocks)
        throw std::runtime_error("block " + std::to_string(k) + " did not converge");
      out.warnings.push_back("dropped non-converged block " + std::to_string(k));
      continue;
    }
    keep.push_back(k);
    out.round_one.push_back(std::move(m));
  }
  if (out.round_one.empty()) throw std::runtime_error("no block converged");

  std::vector<Eigen::VectorXd> thetas;
  for (const auto& m : out.round_one) thetas.push_back(m.theta);
  out.theta_c = average_mcles(thetas);

  // round two: kernels and sensitivities at the common reference point
  const int Kk = (int)keep.size();
  std::vector<std::string> r2_wire(Kk);
  parallel_for(Kk, cfg.workers, [&](int j) {
    BlockCcl ccl(blocks[keep[j]]);
    RoundTwoMsg msg;
    msg.block_id = keep[j];
    double v = ccl.eval(out.theta_c, &msg.psi);
    if (!std::isfinite(v)) throw std::runtime_error("reference point inadmissible for block " +
                                                    std::to_string(keep[j]));
    msg.sensitivity = ccl.sensitivity(out.theta_c);
    r2_wire[j] = msg.encode();
  });

  std::vector<Eigen::MatrixXd> psis, sens;
  for (int j = 0; j < Kk; ++j) {
    RoundTwoMsg m = RoundTwoMsg::decode(r2_wire[j]);
    if ((int)m.psi.rows() != n) throw std::runtime_error("round-two row count mismatch");
    if (!m.psi.allFinite() || !m.sensitivity.allFinite())
      throw std::runtime_error("non-finite round-two artifacts for block " +
                               std::to_string(m.block_id));
    psis.push_back(std::move(m.psi));
    sens.push_back(std::move(m.sensitivity));
  }

  out.C = sample_covariance(psis);
  if (n < 2 * (int)out.C.rows())
    out.warnings.push_back("short series: n < 2Kp, variance may be under-estimated");
  std::vector<Eigen::MatrixXd> W = block_weights(out.C, out.p);
  MetaResult meta = meta_estimate(thetas, sens, W);
  out.theta = meta.theta;
  out.H = meta.H;
  out.cov = sandwich_covariance(sens, W, out.C, out.H, n);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.theta_natural = to_natural_scale(out.theta);
  out.cov_natural = delta_transform(out.cov, out.theta);
  return out;
}

// ---------------------------------------------------------------------------
// Varying-coefficient pipeline: per-block bases for mu and log sigma, shared
// (omega, zeta, beta3); ridge penalties chosen by GCV over a grid.

struct SvcConfig {
  int knots_per_block = -1;  // -1 => default rule
  double kernel_scale = 0.05;
  bool include_linear = true;
  std::vector<std::pair<double, double>> lambda_grid = {
      {0, 0}, {0, 0.05}, {0, 0.1}, {0.05, 0}, {0.05, 0.05}, {0.05, 0.1},
      {0.1, 0}, {0.1, 0.05}, {0.1, 0.1}};
  bool intercept_only = false;  // nesting check: reduces to constant fields
};

struct SvcPipelineResult {
  Eigen::VectorXd theta;  // full (omega, zeta, eta..., beta3)
  Eigen::MatrixXd cov;
  SvcLayout layout;
  SvcFields fields;
  double lambda1 = 0.0, lambda2 = 0.0;
  std::vector<std::pair<std::pair<double, double>, double>> gcv_table;
  std::vector<RoundOneMsg> round_one;
  std::vector<std::string> warnings;
  double alpha = 0.0, phi = 0.0, beta3 = 0.0;
  double alpha_se = 0.0, phi_se = 0.0, beta3_se = 0.0;
  int n = 0;
};

inline SvcPipelineResult run_pipeline_svc(const PipelineInput& in, const Partition& part,
                                          const SvcConfig& scfg,
                                          const PipelineConfig& cfg = {}) {
  const int K = (int)part.blocks.size();
  const int n = (int)in.obs.rows();
  const int q3 = (int)in.model.z3_site.cols();

  // per-block designs: radial basis for mu and log sigma, shared z3
  std::vector<BlockData> blocks;
  std::vector<Eigen::MatrixXd> Z1(K), Z2(K);
  std::vector<int> q1(K), q2(K);
  for (int k = 0; k < K; ++k) {
    BlockData bd = make_block_data(in, part, k);
    if (scfg.intercept_only) {
      Z1[k] = Eigen::MatrixXd::Ones(bd.d(), 1);
      Z2[k] = Z1[k];
    } else {
      int cnt = scfg.knots_per_block >= 0 ? scfg.knots_per_block : default_knot_count(bd.d());
      BasisSpec spec;
      spec.knots = select_knots(bd.sites, cnt);
      spec.kernel_scale = scfg.kernel_scale;
      spec.include_linear = scfg.include_linear;
      Z1[k] = orthonormal_columns(basis_matrix(bd.sites, spec));
      Z2[k] = Z1[k];
    }
    bd.z1.site = Z1[k];
    bd.z2.site = Z2[k];
    q1[k] = (int)Z1[k].cols();
    q2[k] = (int)Z2[k].cols();
    blocks.push_back(std::move(bd));
  }
  SvcLayout layout = SvcLayout::build(q1, q2, q3);

  SvcPipelineResult out;
  out.layout = layout;
  out.n = n;

  // round one
  std::vector<std::string> r1_wire(K);
  parallel_for(K, cfg.workers, [&](int k) {
    BlockFitResult fr = fit_block(blocks[k], std::nullopt, cfg.fit);
    RoundOneMsg msg{fr.block_id, fr.theta, fr.converged, fr.iterations, fr.grad_norm,
                    fr.ccl_value};
    r1_wire[k] = msg.encode();
  });
  std::vector<Eigen::VectorXd> thetas(K);
  for (int k = 0; k < K; ++k) {
    RoundOneMsg m = RoundOneMsg::decode(r1_wire[k]);
    if (!m.converged) {
      if (!cfg.drop_failed_blocks)
        throw std::runtime_error("block " + std::to_string(k) + " did not converge");
      out.warnings.push_back("non-converged block " + std::to_string(k) + " retained");
    }
    thetas[k] = m.theta;
    out.round_one.push_back(std::move(m));
  }

  // reference point: averaged shared parameters, block-specific eta
  double om = 0, ze = 0;
  Eigen::VectorXd b3 = Eigen::VectorXd::Zero(q3);
  for (int k = 0; k < K; ++k) {
    om += thetas[k](0) / K;
    ze += thetas[k](1) / K;
    b3 += thetas[k].tail(q3) / K;
  }
  std::vector<Eigen::VectorXd> refs(K);
  for (int k = 0; k < K; ++k) {
    refs[k] = thetas[k];
    refs[k](0) = om;
    refs[k](1) = ze;
    refs[k].tail(q3) = b3;
  }

  // round two
  std::vector<std::string> r2_wire(K);
  std::vector<std::unique_ptr<BlockCcl>> ccls(K);
  for (int k = 0; k < K; ++k) ccls[k] = std::make_unique<BlockCcl>(blocks[k]);
  parallel_for(K, cfg.workers, [&](int k) {
    RoundTwoMsg msg;
    msg.block_id = k;
    double v = ccls[k]->eval(refs[k], &msg.psi);
    if (!std::isfinite(v))
      throw std::runtime_error("reference point inadmissible for block " + std::to_string(k));
    msg.sensitivity = ccls[k]->sensitivity(refs[k]);
    r2_wire[k] = msg.encode();
  });

  SvcArtifacts art;
  art.thetas = thetas;
  art.layout = layout;
  art.n = n;
  std::vector<Eigen::MatrixXd> psis;
  for (int k = 0; k < K; ++k) {
    RoundTwoMsg m = RoundTwoMsg::decode(r2_wire[k]);
    if (!m.psi.allFinite() || !m.sensitivity.allFinite())
      throw std::runtime_error("non-finite round-two artifacts for block " + std::to_string(k));
    psis.push_back(std::move(m.psi));
    art.sens.push_back(std::move(m.sensitivity));
  }
  art.C = sample_covariance(psis);
  art.W = block_weights_svc(art.C, layout);

  // GCV over the penalty grid, meta-step refit per point
  auto score_at = [&](int k, const Eigen::VectorXd& local) { return ccls[k]->score(local); };
  double best = kInf;
  SvcMeta best_meta;
  for (const auto& [l1, l2] : scfg.lambda_grid) {
    SvcMeta m = meta_estimate_svc(art, l1, l2);
    double g;
    try {
      g = gcv(art, l1, l2, m.theta, score_at);
    } catch (const std::runtime_error&) {
      continue;  // rejected grid point (dof >= n or inadmissible theta)
    }
    out.gcv_table.push_back({{l1, l2}, g});
    if (g < best) {
      best = g;
      best_meta = m;
      out.lambda1 = l1;
      out.lambda2 = l2;
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("no admissible penalty grid point");

  out.theta = best_meta.theta;
  out.cov = svc_sandwich(art, best_meta.H);
  out.fields = reconstruct_fields(out.theta, out.cov, Z1, Z2, part, layout);

  DependenceParams dep{out.theta(0), out.theta(1)};
  out.alpha = dep.alpha();
  out.phi = dep.phi();
  out.beta3 = out.theta(layout.beta3_off);
  double da = out.alpha * (2.0 - out.alpha) / 2.0;
  out.alpha_se = da * std::sqrt(std::max(0.0, out.cov(0, 0)));
  out.phi_se = out.phi * std::sqrt(std::max(0.0, out.cov(1, 1)));
  out.beta3_se = std::sqrt(std::max(0.0, out.cov(layout.beta3_off, layout.beta3_off)));
  return out;
}

}  // namespace spex
