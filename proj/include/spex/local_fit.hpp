#pragma once

// Per-block censored composite likelihood: assembly over all within-block
// pairs, exact score kernels per replicate, finite-difference sensitivity,
// and the block fit (MCCLE).
//
// Parameter layout for a block: (omega, zeta, beta1[q1], beta2[q2], beta3[q3])
// with mu = z1.beta1, log sigma = z2.beta2, xi = z3.beta3. Design columns are
// products of a per-site factor and an optional per-replicate factor, which
// covers stationary covariates, radial-basis expansions, and seasonal terms
// with one code path.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "spex/brown_resnick.hpp"
#include "spex/dependence.hpp"
#include "spex/gev.hpp"
#include "spex/math.hpp"
#include "spex/optimizer.hpp"
#include "spex/partition.hpp"

namespace spex {

struct MarginalDesign {
  Eigen::MatrixXd site;  // d x q
  Eigen::MatrixXd rep;   // n x q; empty => factors identically 1

  int q() const { return (int)site.cols(); }
  bool time_varying() const { return rep.size() > 0; }
  double factor(int i, int c) const { return time_varying() ? rep(i, c) : 1.0; }

  static MarginalDesign intercept(int d) {
    MarginalDesign m;
    m.site = Eigen::MatrixXd::Ones(d, 1);
    return m;
  }
};

struct BlockData {
  int block_id = 0;
  std::vector<Site> sites;
  Eigen::MatrixXd obs;  // n x d
  MarginalDesign z1, z2, z3;
  Eigen::VectorXd thresholds;  // d, data scale

  int n() const { return (int)obs.rows(); }
  int d() const { return (int)obs.cols(); }
  int q1() const { return z1.q(); }
  int q2() const { return z2.q(); }
  int q3() const { return z3.q(); }
  int p() const { return 2 + q1() + q2() + q3(); }
};

struct BlockFitResult {
  int block_id = 0;
  Eigen::VectorXd theta;
  bool converged = false;
  int iterations = 0;
  double grad_norm = kInf;
  double ccl_value = -kInf;
  std::string message;
  // filled on request (round two / tests)
  Eigen::MatrixXd psi;          // n x p per-replicate score kernels
  Eigen::MatrixXd sensitivity;  // p x p
};

struct FitOptions {
  OptimOptions optim = [] {
    OptimOptions o;
    o.max_iterations = -1;  // -1 => 500 or 300*p, whichever is larger
    return o;
  }();
  int nelder_mead_evals = -1;  // -1 => 30*p capped at 400
  double nelder_mead_scale = 0.05;
};

class BlockCcl {
 public:
  explicit BlockCcl(const BlockData& data) : data_(&data) {
    const int d = data.d();
    const int n = data.n();
    if (d < 2) throw std::invalid_argument("block has fewer than 2 sites");
    if (data.thresholds.size() != d)
      throw std::invalid_argument("thresholds size mismatch");
    exceed_.resize(n, d);
    for (int s = 0; s < d; ++s)
      for (int i = 0; i < n; ++i)
        exceed_(i, s) = data.obs(i, s) > data.thresholds(s) ? 1 : 0;
    for (int a = 0; a < d; ++a)
      for (int b = a + 1; b < d; ++b) {
        PairInfo pr;
        pr.a = a;
        pr.b = b;
        pr.h = site_distance(data.sites[a], data.sites[b]);
        if (!(pr.h > 0.0))
          throw std::invalid_argument("duplicate site coordinates within block");
        for (int i = 0; i < n; ++i) {
          int code = exceed_(i, a) * 2 + exceed_(i, b);
          switch (code) {
            case 3: pr.r11.push_back(i); break;
            case 2: pr.r10.push_back(i); break;
            case 1: pr.r01.push_back(i); break;
            default: pr.r00.push_back(i); break;
          }
        }
        pairs_.push_back(std::move(pr));
      }
  }

  int num_pairs() const { return (int)pairs_.size(); }
  const BlockData& data() const { return *data_; }

  // log CCL value; psi (n x p) filled when non-null. Returns -inf outside
  // the admissible region.
  double eval(const Eigen::VectorXd& theta, Eigen::MatrixXd* psi) const {
    return psi ? eval_impl<true>(theta, psi) : eval_impl<false>(theta, nullptr);
  }

  double value(const Eigen::VectorXd& theta) const { return eval(theta, nullptr); }

  Eigen::VectorXd score(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd psi;
    double v = eval(theta, &psi);
    if (!std::isfinite(v))
      return Eigen::VectorXd::Constant(data_->p(), kNaN);
    return psi.colwise().mean();
  }

  // Central finite differences of the score, step (eps)^{1/3}(1 + |theta_j|).
  Eigen::MatrixXd sensitivity(const Eigen::VectorXd& theta) const {
    const int p = data_->p();
    Eigen::MatrixXd I(p, p);
    const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
    for (int j = 0; j < p; ++j) {
      double h = cbrt_eps * (1.0 + std::abs(theta(j)));
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      I.col(j) = (score(tp) - score(tm)) / (2.0 * h);
    }
    return I;
  }

 private:
  struct PairInfo {
    int a, b;
    double h;
    std::vector<int> r11, r10, r01, r00;
  };

  struct SiteEval {  // Frechet value and marginal partials at one (i, s)
    double x, logx, dmu, dsigma, dxi;
  };

  // clamp range for Frechet-scale thresholds outside the support
  static constexpr double kUfMin = 1e-12;
  static constexpr double kUfMax = 1e12;

  template <bool WithGrad>
  double eval_impl(const Eigen::VectorXd& theta, Eigen::MatrixXd* psi) const {
    const BlockData& bd = *data_;
    const int n = bd.n(), d = bd.d(), p = bd.p();
    if ((int)theta.size() != p) throw std::invalid_argument("theta size mismatch");
    const int q1 = bd.q1(), q2 = bd.q2(), q3 = bd.q3();
    const int o1 = 2, o2 = 2 + q1, o3 = 2 + q1 + q2;
    DependenceParams dep{theta(0), theta(1)};
    if (!std::isfinite(dep.omega) || std::abs(dep.omega) > 300.0 ||
        !std::isfinite(dep.zeta) || std::abs(dep.zeta) > 300.0)
      return -kInf;
    const auto b1 = theta.segment(o1, q1);
    const auto b2 = theta.segment(o2, q2);
    const auto b3 = theta.segment(o3, q3);

    // marginal parameters per (i, s); collapses to per-site when designs are
    // time-invariant
    const bool tv = bd.z1.time_varying() || bd.z2.time_varying() || bd.z3.time_varying();
    const int nrows = tv ? n : 1;
    Eigen::MatrixXd mu(nrows, d), logsig(nrows, d), xim(nrows, d);
    auto fill_param = [&](const MarginalDesign& z, const auto& beta, Eigen::MatrixXd& out) {
      Eigen::VectorXd site_part = z.site * beta;  // valid when time-invariant
      if (!z.time_varying()) {
        for (int r = 0; r < nrows; ++r) out.row(r) = site_part.transpose();
      } else {
        Eigen::MatrixXd scaled = z.site * beta.asDiagonal();  // d x q
        out = z.rep * scaled.transpose();                     // n x d
      }
    };
    fill_param(bd.z1, b1, mu);
    fill_param(bd.z2, b2, logsig);
    fill_param(bd.z3, b3, xim);
    for (int r = 0; r < nrows; ++r)
      for (int s = 0; s < d; ++s) {
        double xi = xim(r, s);
        if (!std::isfinite(xi) || xi <= kXiMin || xi >= kXiMax) return -kInf;
        if (!std::isfinite(logsig(r, s)) || std::abs(logsig(r, s)) > 300.0) return -kInf;
        if (!std::isfinite(mu(r, s))) return -kInf;
      }

    auto marg = [&](int i, int s) -> GevParams {
      int r = tv ? i : 0;
      return {mu(r, s), std::exp(logsig(r, s)), xim(r, s)};
    };

    // Frechet transforms for exceedances; thresholds for censored entries.
    std::vector<SiteEval> xv((std::size_t)n * d);
    std::vector<SiteEval> uv((std::size_t)nrows * d);
    for (int s = 0; s < d; ++s) {
      for (int r = 0; r < nrows; ++r) {
        GevParams g = marg(tv ? r : 0, s);
        SiteEval& u = uv[(std::size_t)r * d + s];
        FrechetValue fu = frechet_value(bd.thresholds(s), g);
        if (fu.valid && fu.x > kUfMin && fu.x < kUfMax) {
          u = {fu.x, fu.logx, fu.dmu, fu.dsigma, fu.dxi};
        } else {  // clamped outside the support: flat in theta
          double cl = (!fu.valid && g.xi > 0.0) || (fu.valid && fu.x <= kUfMin) ? kUfMin : kUfMax;
          u = {cl, std::log(cl), 0.0, 0.0, 0.0};
        }
      }
      for (int i = 0; i < n; ++i) {
        if (!exceed_(i, s)) continue;
        FrechetValue f = frechet_value(bd.obs(i, s), marg(i, s));
        if (!f.valid || !std::isfinite(f.x)) return -kInf;
        xv[(std::size_t)i * d + s] = {f.x, f.logx, f.dmu, f.dsigma, f.dxi};
      }
    }

    // row-major so a replicate's row is contiguous for the accumulators
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> psirm;
    if (WithGrad) psirm.setZero(n, p);
    double total = 0.0;

    // chain one inner-partial (w.r.t. a Frechet coordinate of site s) plus
    // optional Jacobian terms into a psi row
    auto accum_site = [&](double* row, int i, int s, const SiteEval& f, double gx,
                          bool with_jac) {
      GevParams g = marg(i, s);
      double cm = gx + (with_jac ? (1.0 - g.xi) / f.x : 0.0);
      double tmu = cm * f.dmu;
      double tsig = cm * f.dsigma * g.sigma - (with_jac ? 1.0 : 0.0);
      double txi = cm * f.dxi - (with_jac ? f.logx : 0.0);
      for (int c = 0; c < q1; ++c)
        row[o1 + c] += tmu * bd.z1.site(s, c) * bd.z1.factor(i, c);
      for (int c = 0; c < q2; ++c)
        row[o2 + c] += tsig * bd.z2.site(s, c) * bd.z2.factor(i, c);
      for (int c = 0; c < q3; ++c)
        row[o3 + c] += txi * bd.z3.site(s, c) * bd.z3.factor(i, c);
    };

    for (const PairInfo& pr : pairs_) {
      PairAGrad ag = pair_a_grad(pr.h, dep);
      const double a = ag.a;
      if (!(a > 0.0) || !std::isfinite(a)) return -kInf;

      auto dep_chain = [&](double* row, double da) {
        row[0] += da * ag.domega;
        row[1] += da * ag.dzeta;
      };

      // both exceed
      for (int i : pr.r11) {
        const SiteEval& f1 = xv[(std::size_t)i * d + pr.a];
        const SiteEval& f2 = xv[(std::size_t)i * d + pr.b];
        double logJ1 = (1.0 - marg(i, pr.a).xi) * f1.logx - std::log(marg(i, pr.a).sigma);
        double logJ2 = (1.0 - marg(i, pr.b).xi) * f2.logx - std::log(marg(i, pr.b).sigma);
        if constexpr (WithGrad) {
          Dual3 core = hr_both_exceed_core(Dual3(f1.x, 0), Dual3(f2.x, 1), Dual3(a, 2));
          if (!std::isfinite(core.v)) return -kInf;
          total += core.v + logJ1 + logJ2;
          double* row = psirm.row(i).data();
          dep_chain(row, core.d[2]);
          accum_site(row, i, pr.a, f1, core.d[0], true);
          accum_site(row, i, pr.b, f2, core.d[1], true);
        } else {
          double core = hr_both_exceed_core(f1.x, f2.x, a);
          if (!std::isfinite(core)) return -kInf;
          total += core + logJ1 + logJ2;
        }
      }

      // exactly one exceeds
      auto one_exceed = [&](const std::vector<int>& reps, int se, int sc) -> bool {
        for (int i : reps) {
          const SiteEval& fx = xv[(std::size_t)i * d + se];
          const SiteEval& fu = uv[(std::size_t)(tv ? i : 0) * d + sc];
          double logJ = (1.0 - marg(i, se).xi) * fx.logx - std::log(marg(i, se).sigma);
          if constexpr (WithGrad) {
            Dual3 core = hr_one_exceed_core(Dual3(fx.x, 0), Dual3(fu.x, 1), Dual3(a, 2));
            if (!std::isfinite(core.v)) return false;
            total += core.v + logJ;
            double* row = psirm.row(i).data();
            dep_chain(row, core.d[2]);
            accum_site(row, i, se, fx, core.d[0], true);
            accum_site(row, i, sc, fu, core.d[1], false);
          } else {
            double core = hr_one_exceed_core(fx.x, fu.x, a);
            if (!std::isfinite(core)) return false;
            total += core + logJ;
          }
        }
        return true;
      };
      if (!one_exceed(pr.r10, pr.a, pr.b)) return -kInf;
      if (!one_exceed(pr.r01, pr.b, pr.a)) return -kInf;

      // neither exceeds; time-invariant margins share one evaluation
      if (!pr.r00.empty()) {
        if (!tv) {
          const SiteEval& u1 = uv[pr.a];
          const SiteEval& u2 = uv[pr.b];
          if constexpr (WithGrad) {
            Dual3 core = hr_none_exceed_core(Dual3(u1.x, 0), Dual3(u2.x, 1), Dual3(a, 2));
            if (!std::isfinite(core.v)) return -kInf;
            total += core.v * (double)pr.r00.size();
            for (int i : pr.r00) {
              double* row = psirm.row(i).data();
              dep_chain(row, core.d[2]);
              accum_site(row, i, pr.a, u1, core.d[0], false);
              accum_site(row, i, pr.b, u2, core.d[1], false);
            }
          } else {
            double core = hr_none_exceed_core(u1.x, u2.x, a);
            if (!std::isfinite(core)) return -kInf;
            total += core * (double)pr.r00.size();
          }
        } else {
          for (int i : pr.r00) {
            const SiteEval& u1 = uv[(std::size_t)i * d + pr.a];
            const SiteEval& u2 = uv[(std::size_t)i * d + pr.b];
            if constexpr (WithGrad) {
              Dual3 core = hr_none_exceed_core(Dual3(u1.x, 0), Dual3(u2.x, 1), Dual3(a, 2));
              if (!std::isfinite(core.v)) return -kInf;
              total += core.v;
              double* row = psirm.row(i).data();
              dep_chain(row, core.d[2]);
              accum_site(row, i, pr.a, u1, core.d[0], false);
              accum_site(row, i, pr.b, u2, core.d[1], false);
            } else {
              double core = hr_none_exceed_core(u1.x, u2.x, a);
              if (!std::isfinite(core)) return -kInf;
              total += core;
            }
          }
        }
      }
    }
    if (!std::isfinite(total)) return -kInf;
    if (WithGrad) *psi = psirm;
    return total / n;
  }

  const BlockData* data_;
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> exceed_;
  std::vector<PairInfo> pairs_;
};

// Free-function wrappers over BlockCcl.
inline double block_ccl(const Eigen::VectorXd& theta, const BlockData& data) {
  return BlockCcl(data).value(theta);
}
inline Eigen::VectorXd block_score(const Eigen::VectorXd& theta, const BlockData& data) {
  return BlockCcl(data).score(theta);
}
inline Eigen::MatrixXd block_psi(const Eigen::VectorXd& theta, const BlockData& data) {
  Eigen::MatrixXd psi;
  BlockCcl(data).eval(theta, &psi);
  return psi;
}
inline Eigen::MatrixXd block_sensitivity(const Eigen::VectorXd& theta, const BlockData& data) {
  return BlockCcl(data).sensitivity(theta);
}

// ---------------------------------------------------------------------------
// Starting values: per-site probability-weighted-moment GEV fits pooled by
// least squares for the betas; (alpha, phi) from an empirical
// extremal-coefficient regression on log distance.

inline Eigen::VectorXd initial_theta(const BlockData& bd) {
  const int n = bd.n(), d = bd.d();
  std::vector<GevParams> site_fits(d);
  for (int s = 0; s < d; ++s) {
    std::vector<double> col(bd.obs.col(s).data(), bd.obs.col(s).data() + n);
    site_fits[s] = gev_fit_pwm(std::move(col));
  }

  auto pooled = [&](const MarginalDesign& z, auto value_of) -> Eigen::VectorXd {
    // regress per-site values on the site design scaled by mean rep factors
    Eigen::MatrixXd D = z.site;
    if (z.time_varying()) {
      Eigen::RowVectorXd mf = z.rep.colwise().mean();
      D = z.site.array().rowwise() * mf.array();
    }
    Eigen::VectorXd yv(d);
    for (int s = 0; s < d; ++s) yv(s) = value_of(site_fits[s]);
    return D.colPivHouseholderQr().solve(yv);
  };
  Eigen::VectorXd beta1 = pooled(bd.z1, [](const GevParams& g) { return g.mu; });
  Eigen::VectorXd beta2 = pooled(bd.z2, [](const GevParams& g) { return std::log(g.sigma); });
  Eigen::VectorXd beta3 = pooled(bd.z3, [](const GevParams& g) { return g.xi; });

  // keep the implied xi field inside the admissible box
  {
    Eigen::VectorXd xi_site = bd.z3.site * beta3;
    double xmin = xi_site.minCoeff(), xmax = xi_site.maxCoeff();
    if (xmin <= kXiMin + 0.02 || xmax >= kXiMax - 0.02) {
      beta3.setZero();
      double m = 0.0;
      for (const auto& g : site_fits) m += g.xi / d;
      // push the clamped mean through the intercept-like first column
      beta3(0) = std::clamp(m, kXiMin + 0.05, kXiMax - 0.05);
    }
  }

  // empirical extremal coefficients on the Frechet scale
  Eigen::MatrixXd xf(n, d);
  for (int s = 0; s < d; ++s)
    for (int i = 0; i < n; ++i) {
      double t = 1.0 + site_fits[s].xi * (bd.obs(i, s) - site_fits[s].mu) / site_fits[s].sigma;
      xf(i, s) = t > 1e-8 ? std::pow(t, 1.0 / site_fits[s].xi) : 1e-8;
    }
  std::vector<double> lh, yq;
  for (int sa = 0; sa < d; ++sa)
    for (int sb = sa + 1; sb < d; ++sb) {
      double h = site_distance(bd.sites[sa], bd.sites[sb]);
      double inv_max = 0.0;
      for (int i = 0; i < n; ++i) inv_max += 1.0 / std::max(xf(i, sa), xf(i, sb));
      double ec = std::clamp(n / inv_max, 1.001, 1.999);
      double qz = normal_quantile(ec / 2.0);
      if (qz > 1e-6) {
        lh.push_back(std::log(h));
        yq.push_back(std::log(2.0 * qz * qz));
      }
    }
  double alpha = 1.0, phi = 1.0;
  double hmax = 1.0;
  for (int sa = 0; sa < d; ++sa)
    for (int sb = sa + 1; sb < d; ++sb)
      hmax = std::max(hmax, site_distance(bd.sites[sa], bd.sites[sb]));
  if (lh.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lh.size(); ++i) { mx += lh[i]; my += yq[i]; }
    mx /= lh.size();
    my /= lh.size();
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lh.size(); ++i) {
      sxx += (lh[i] - mx) * (lh[i] - mx);
      sxy += (lh[i] - mx) * (yq[i] - my);
    }
    if (sxx > 1e-12) {
      alpha = std::clamp(sxy / sxx, 0.1, 1.9);
      phi = std::exp(mx - my / alpha);
    }
  }
  phi = std::clamp(phi, 1e-3 * hmax, 1e3 * hmax);
  DependenceParams dep = DependenceParams::from_natural(alpha, phi);

  Eigen::VectorXd theta(bd.p());
  theta << dep.omega, dep.zeta, beta1, beta2, beta3;
  return theta;
}

inline BlockFitResult fit_block(const BlockData& data,
                                std::optional<Eigen::VectorXd> init = std::nullopt,
                                const FitOptions& opts = {}) {
  BlockCcl ccl(data);
  Eigen::VectorXd x0 = init ? *init : initial_theta(data);
  BlockFitResult res;
  res.block_id = data.block_id;
  if (!std::isfinite(ccl.value(x0))) {
    // nudge toward an admissible point by shrinking xi via beta3
    Eigen::VectorXd trial = x0;
    trial.tail(data.q3()).setZero();
    trial(data.p() - data.q3()) = 0.1;
    if (std::isfinite(ccl.value(trial))) {
      x0 = trial;
    } else {
      res.theta = x0;
      res.message = "initial point inadmissible";
      return res;
    }
  }

  int nm_evals = opts.nelder_mead_evals >= 0 ? opts.nelder_mead_evals
                                             : std::min(400, 30 * data.p());
  if (nm_evals > 0) {
    x0 = nelder_mead_maximize([&](const Eigen::VectorXd& t) { return ccl.value(t); }, x0,
                              nm_evals, opts.nelder_mead_scale);
  }

  OptimOptions oo = opts.optim;
  if (oo.grad_tol <= 0.0) oo.grad_tol = 1e-6;
  // richer blocks (basis expansions) need a budget that grows with dimension
  if (oo.max_iterations < 0) oo.max_iterations = std::max(500, 300 * data.p());
  Eigen::MatrixXd psi;
  auto fg = [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) {
    double v = ccl.eval(t, &psi);
    if (std::isfinite(v)) g = psi.colwise().mean();
    return v;
  };
  OptimResult opt = lbfgs_maximize(fg, x0, oo);
  res.theta = opt.x;
  res.converged = opt.converged;
  res.iterations = opt.iterations;
  res.grad_norm = opt.grad_norm;
  res.ccl_value = opt.f;
  res.message = opt.message;
  return res;
}

}  // namespace spex
