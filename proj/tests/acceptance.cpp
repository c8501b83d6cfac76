// End-to-end acceptance gate. Each criterion prints exactly one line:
//   PASS <name>: <detail>      or      FAIL <name>: <detail>
// Exit status is 0 iff every executed criterion passed. `--quick` runs the
// fast criteria only; the default additionally runs the Monte Carlo studies
// (hours on one core). SPEX_ACCEPT_SCALE in (0,1] shrinks the seed counts
// for smoke runs; the statistical bands are then not meaningful.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "spex/diagnostics.hpp"
#include "spex/pipeline.hpp"
#include "spex/simulate.hpp"

using namespace spex;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << "\n" << std::flush;
  if (!ok) ++g_failures;
}

double scale_factor() {
  const char* s = std::getenv("SPEX_ACCEPT_SCALE");
  if (!s) return 1.0;
  double f = std::atof(s);
  return (f > 0.0 && f <= 1.0) ? f : 1.0;
}

int scaled(int n) { return std::max(3, (int)std::lround(n * scale_factor())); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

std::vector<Site> grid(int side, double spacing = 1.0) {
  std::vector<Site> s;
  for (int iy = 0; iy < side; ++iy)
    for (int ix = 0; ix < side; ++ix) s.push_back({ix * spacing, iy * spacing});
  return s;
}

Eigen::VectorXd empirical_thresholds(const Eigen::MatrixXd& obs, double q) {
  const int n = (int)obs.rows(), d = (int)obs.cols();
  Eigen::VectorXd u(d);
  for (int s = 0; s < d; ++s) {
    std::vector<double> col(obs.col(s).data(), obs.col(s).data() + n);
    std::sort(col.begin(), col.end());
    double h = (n - 1) * q;
    int lo = (int)h;
    u(s) = lo + 1 < n ? col[lo] * (1 - (h - lo)) + col[lo + 1] * (h - lo) : col[n - 1];
  }
  return u;
}

double ks_sqrt_n(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const int n = (int)u.size();
  double ks = 0.0;
  for (int i = 0; i < n; ++i)
    ks = std::max(ks, std::max(std::abs(u[i] - (i + 1.0) / n), std::abs(u[i] - (double)i / n)));
  return ks * std::sqrt((double)n);
}

// ---------------------------------------------------------------- criterion 1

void criterion_math_kernels() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ux(0.2, 5.0), ua(0.2, 3.0);
  double worst_hom = 0.0, worst_marg = 0.0, worst_fd = 0.0, worst_dens = 0.0;

  for (int t = 0; t < 100; ++t) {
    double x1 = ux(rng), x2 = ux(rng), a = ua(rng), lam = ux(rng);
    // keep the finite-difference oracle well conditioned: skip draws whose
    // Gaussian arguments sit so far out that central differences of V are
    // pure cancellation noise (tail behavior is pinned by the marginal and
    // quadrature checks below)
    double wchk = a / 2 - std::log(x1 / x2) / a;
    if (std::abs(wchk) > 3.0 || std::abs(a - wchk) > 3.0) {
      --t;
      continue;
    }
    double V = hr_V(x1, x2, a);
    // homogeneity V(lam x) = V(x)/lam
    worst_hom = std::max(worst_hom,
                         std::abs(hr_V(lam * x1, lam * x2, a) - V / lam) * lam / std::abs(V));
    // marginal limit V(x, M) -> 1/x as the partner grows
    worst_marg = std::max(worst_marg, std::abs(hr_V(x1, 1e12, a) - 1.0 / x1) * x1);
    // partials vs central differences of V
    double h1 = 1e-6 * x1, h2 = 1e-6 * x2;
    double fd1 = (hr_V(x1 + h1, x2, a) - hr_V(x1 - h1, x2, a)) / (2 * h1);
    double fd2 = (hr_V(x1, x2 + h2, a) - hr_V(x1, x2 - h2, a)) / (2 * h2);
    // relative where the partial is appreciable, absolute (on V's scale)
    // where it genuinely vanishes in the Gaussian tail
    auto err = [&](double got, double fd) {
      return std::abs(got - fd) / std::max(std::abs(fd), 1e-8 * std::abs(V));
    };
    worst_fd = std::max(worst_fd, err(hr_V1(x1, x2, a), fd1));
    worst_fd = std::max(worst_fd, err(hr_V1(x2, x1, a), fd2));
    // mixed partial: central difference of V1 in the second argument (a
    // second difference of V itself falls below double-precision resolution)
    double fd12 = (hr_V1(x1, x2 + h2, a) - hr_V1(x1, x2 - h2, a)) / (2 * h2);
    worst_fd = std::max(worst_fd, err(hr_V12(x1, x2, a), fd12));
    // density: f = d/dx2 { -V1 exp(-V) }, differenced the same way
    auto dG1 = [&](double q) { return -hr_V1(x1, q, a) * std::exp(-hr_V(x1, q, a)); };
    double mixed = (dG1(x2 + h2) - dG1(x2 - h2)) / (2 * h2);
    worst_dens = std::max(worst_dens, err(hr_density(x1, x2, a), mixed));
  }

  // integral of the density over x2 recovers the unit-Frechet marginal
  double worst_quad = 0.0;
  for (double x1 : {0.6, 1.0, 2.5}) {
    for (double a : {0.5, 1.3}) {
      double acc = 0.0;
      const int N = 4000;  // substitution x2 = t/(1-t) over (0,1)
      for (int i = 0; i < N; ++i) {
        double t = (i + 0.5) / N;
        double x2 = t / (1 - t), jac = 1.0 / ((1 - t) * (1 - t));
        acc += hr_density(x1, x2, a) * jac / N;
      }
      double want = std::exp(-1.0 / x1) / (x1 * x1);
      worst_quad = std::max(worst_quad, std::abs(acc - want) / want);
    }
  }

  // four-case censored contribution against independently composed values
  GevParams g1{1.0, 2.0, 0.15}, g2{0.5, 1.5, 0.1};
  DependenceParams dep = DependenceParams::from_natural(1.1, 2.0);
  double h = 1.7, u1 = 4.0, u2 = 3.5;
  double a = pair_a(h, dep);
  bool four_ok = true;
  {  // both exceed: log density plus the two margin Jacobians
    double y1 = 6.0, y2 = 5.0;
    double x1 = gev_to_frechet(y1, g1), x2 = gev_to_frechet(y2, g2);
    double want = std::log(hr_density(x1, x2, a)) + std::log(frechet_jacobian(y1, g1)) +
                  std::log(frechet_jacobian(y2, g2));
    double got = censored_pair_loglik(y1, y2, g1, g2, u1, u2, dep, h);
    four_ok = four_ok && std::abs(got - want) < 1e-10 * (1 + std::abs(want));
  }
  {  // one exceeds: finite difference of the partially censored cdf
    double y1 = 7.0, y2 = 2.0;  // y2 below u2
    double x1 = gev_to_frechet(y1, g1);
    double uf2 = threshold_to_frechet(u2, g2);
    auto Gx = [&](double x) { return std::exp(-hr_V(x, uf2, a)); };
    double hx = 1e-6 * x1;
    double want = std::log((Gx(x1 + hx) - Gx(x1 - hx)) / (2 * hx)) +
                  std::log(frechet_jacobian(y1, g1));
    double got = censored_pair_loglik(y1, y2, g1, g2, u1, u2, dep, h);
    four_ok = four_ok && std::abs(got - want) < 1e-6 * (1 + std::abs(want));
  }
  {  // neither exceeds: -V at the thresholds, no dependence on the data values
    double want = -hr_V(threshold_to_frechet(u1, g1), threshold_to_frechet(u2, g2), a);
    double got = censored_pair_loglik(1.0, 0.7, g1, g2, u1, u2, dep, h);
    double got2 = censored_pair_loglik(3.9, 3.4, g1, g2, u1, u2, dep, h);
    four_ok = four_ok && std::abs(got - want) < 1e-12 * (1 + std::abs(want)) && got == got2;
    // exact tie at the threshold is censored
    double tie = censored_pair_loglik(u1, u2, g1, g2, u1, u2, dep, h);
    four_ok = four_ok && tie == got;
  }

  bool ok = worst_hom < 1e-12 && worst_marg < 1e-6 && worst_fd < 1e-5 && worst_dens < 1e-5 &&
            worst_quad < 1e-4 && four_ok;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "hom %.1e (<1e-12), marginal %.1e (<1e-6), partials %.1e (<1e-5), "
                "density-fd %.1e (<1e-5), quadrature %.1e (<1e-4), four-case %s",
                worst_hom, worst_marg, worst_fd, worst_dens, worst_quad,
                four_ok ? "consistent" : "BROKEN");
  report("math-kernels", ok, buf);
}

// ---------------------------------------------------------------- criterion 2

PipelineInput sim_input(int side, int n, std::uint64_t seed, double q = 0.75,
                        double alpha = 0.8, double phi = 3.0, double b2 = 0.7) {
  SimConfig sc;
  sc.sites = grid(side);
  sc.n = n;
  sc.dep = DependenceParams::from_natural(alpha, phi);
  sc.seed = seed;
  for (const Site& s : sc.sites)
    sc.margins.push_back({0.5 * s.x + 0.5 * s.y, std::exp(b2), 0.2});
  PipelineInput in;
  in.sites = sc.sites;
  in.obs = simulate_gev_field(sc);
  in.model = ModelSpec::linear_trend(sc.sites);
  in.thresholds = empirical_thresholds(in.obs, q);
  return in;
}

void criterion_score_fd() {
  PipelineInput in = sim_input(4, 80, 77);
  Partition part = partition_grid(in.sites, 16);
  BlockData bd = make_block_data(in, part, 0);
  BlockCcl ccl(bd);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd base(6);
  base << std::log(0.8 / 1.2), std::log(3.0), 0.5, 0.5, 0.7, 0.2;
  double worst = 0.0;
  int tested = 0;
  while (tested < 50) {
    Eigen::VectorXd th = base;
    for (int j = 0; j < 6; ++j) th(j) += 0.15 * nd(rng);
    if (!std::isfinite(ccl.value(th))) continue;
    Eigen::VectorXd sc = ccl.score(th);
    bool usable = true;
    double w = 0.0;
    for (int j = 0; j < 6; ++j) {
      double hh = 1e-6 * (1.0 + std::abs(th(j)));
      Eigen::VectorXd tp = th, tm = th;
      tp(j) += hh;
      tm(j) -= hh;
      double vp = ccl.value(tp), vm = ccl.value(tm);
      if (!std::isfinite(vp) || !std::isfinite(vm)) {
        usable = false;
        break;
      }
      double fd = (vp - vm) / (2 * hh);
      w = std::max(w, std::abs(sc(j) - fd) / (1e-8 + std::abs(fd)));
    }
    if (!usable) continue;
    worst = std::max(worst, w);
    ++tested;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst relative error %.2e over 50 random points (<1e-4)",
                worst);
  report("score-vs-fd", worst < 1e-4, buf);
}

// ---------------------------------------------------------------- criterion 3

void criterion_k1_reductions() {
  PipelineInput in = sim_input(4, 120, 300);
  Partition part = partition_grid(in.sites, 16);  // single block
  BlockData bd = make_block_data(in, part, 0);
  BlockFitResult fr = fit_block(bd);
  BlockCcl ccl(bd);
  Eigen::MatrixXd psi;
  ccl.eval(fr.theta, &psi);
  const int n = (int)psi.rows();
  Eigen::MatrixXd C = psi.transpose() * psi / n;
  Eigen::MatrixXd I = ccl.sensitivity(fr.theta);

  std::vector<Eigen::VectorXd> thetas{fr.theta};
  std::vector<Eigen::MatrixXd> sens{I};
  std::vector<Eigen::MatrixXd> W{robust_inverse(C)};
  MetaResult meta = meta_estimate(thetas, sens, W);
  double e_meta = (meta.theta - fr.theta).cwiseAbs().maxCoeff();

  Eigen::MatrixXd want = (I.transpose() * C.inverse() * I).inverse() / n;
  Eigen::MatrixXd sand = sandwich_covariance(sens, W, C, meta.H, n);
  double e_sand = (sand - want).cwiseAbs().maxCoeff() / want.cwiseAbs().maxCoeff();

  PipelineResult res = run_pipeline(in, part);
  double e_pipe = (res.theta - fr.theta).cwiseAbs().maxCoeff() +
                  (res.cov - sand).cwiseAbs().maxCoeff() / sand.cwiseAbs().maxCoeff();

  bool ok = e_meta < 1e-12 && e_sand < 1e-10 && e_pipe < 1e-10;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "meta=MCCLE err %.1e, sandwich vs n^-1(I'C^-1I)^-1 err %.1e, pipeline err %.1e",
                e_meta, e_sand, e_pipe);
  report("k1-reductions", ok, buf);
}

// ---------------------------------------------------------------- criterion 4

void criterion_gmm_oracle() {
  int bad = 0;
  double worst = 0.0;
  // d=8: two well separated 2x2 squares, K=2
  std::vector<Site> sites;
  std::vector<std::string> labels;
  for (int b = 0; b < 2; ++b)
    for (int iy = 0; iy < 2; ++iy)
      for (int ix = 0; ix < 2; ++ix) {
        sites.push_back({4.0 * b + ix, (double)iy});
        labels.push_back(b ? "east" : "west");
      }
  Partition part = partition_custom(sites, labels);
  for (int sd = 0; sd < 10; ++sd) {
    SimConfig sc;
    sc.sites = sites;
    sc.n = 200;
    sc.dep = DependenceParams::from_natural(0.9, 2.5);
    sc.seed = 4000 + sd;
    for (const Site& s : sites)
      sc.margins.push_back({0.5 * s.x + 0.5 * s.y, std::exp(0.7), 0.15});
    PipelineInput in;
    in.sites = sites;
    in.obs = simulate_gev_field(sc);
    in.model = ModelSpec::linear_trend(sites);
    in.thresholds = empirical_thresholds(in.obs, 0.75);

    std::vector<BlockData> blocks;
    std::vector<Eigen::VectorXd> thetas;
    std::vector<Eigen::MatrixXd> psis, sens;
    bool usable = true;
    for (int k = 0; k < 2; ++k) {
      blocks.push_back(make_block_data(in, part, k));
      BlockFitResult fr = fit_block(blocks[k]);
      usable = usable && fr.converged;
      thetas.push_back(fr.theta);
    }
    if (usable) {
      Eigen::VectorXd tc = average_mcles(thetas);
      for (int k = 0; k < 2; ++k) {
        BlockCcl ccl(blocks[k]);
        Eigen::MatrixXd psi;
        if (!std::isfinite(ccl.eval(tc, &psi))) {
          usable = false;
          break;
        }
        psis.push_back(psi);
        sens.push_back(ccl.sensitivity(tc));
      }
    }
    if (!usable) {
      ++bad;
      continue;
    }
    Eigen::MatrixXd C = sample_covariance(psis);
    std::vector<Eigen::MatrixXd> W = block_weights(C, 6);
    MetaResult meta = meta_estimate(thetas, sens, W);
    // independent check: direct minimization of the quadratic form
    auto obj = [&](const Eigen::VectorXd& th) {
      return -gmm_objective_oracle(th, thetas, sens, W);
    };
    Eigen::VectorXd opt = nelder_mead_maximize(obj, average_mcles(thetas), 6000, 0.02);
    opt = nelder_mead_maximize(obj, opt, 6000, 0.001);
    worst = std::max(worst, (meta.theta - opt).cwiseAbs().maxCoeff());
  }
  char buf[140];
  std::snprintf(buf, sizeof buf,
                "max |closed form - argmin| %.2e over 10 seeds (<1e-3), %d skipped", worst,
                bad);
  report("gmm-oracle", worst < 1e-3 && bad <= 2, buf);
}

// ---------------------------------------------------------------- criterion 8

void criterion_simulator() {
  SimConfig sc;
  sc.sites = grid(3);
  sc.n = 5000;
  sc.dep = DependenceParams::from_natural(1.0, 2.0);
  sc.seed = 808;
  Eigen::MatrixXd fr = simulate_frechet_field(sc);

  // per-site unit-Frechet margins
  double worst_ks = 0.0;
  for (int s = 0; s < 9; ++s) {
    std::vector<double> u(sc.n);
    for (int i = 0; i < sc.n; ++i) u[i] = std::exp(-1.0 / fr(i, s));
    worst_ks = std::max(worst_ks, ks_sqrt_n(u));
  }

  // pairwise extremal coefficient vs 2 Phi(a/2), within 3 Monte Carlo SEs
  double worst_z = 0.0;
  struct {
    int i, j;
    double h;
  } pairs[] = {{0, 1, 1.0}, {0, 2, 2.0}, {0, 8, 2.0 * std::sqrt(2.0)}};
  for (const auto& pr : pairs) {
    double s1 = 0, s2 = 0;
    for (int i = 0; i < sc.n; ++i) {
      double v = 1.0 / std::max(fr(i, pr.i), fr(i, pr.j));
      s1 += v;
      s2 += v * v;
    }
    double m = s1 / sc.n, var = s2 / sc.n - m * m;
    double est = 1.0 / m, se = est * est * std::sqrt(var / sc.n);
    double tru = 2.0 * normal_cdf(pair_a(pr.h, sc.dep) / 2.0);
    worst_z = std::max(worst_z, std::abs(est - tru) / se);
  }

  // same draws regardless of worker count; exact repeat with the same seed
  SimConfig s4 = sc, s7 = sc;
  s4.workers = 4;
  s7.workers = 7;
  double dmax =
      std::max((simulate_frechet_field(sc) - simulate_frechet_field(s4)).cwiseAbs().maxCoeff(),
               (fr - simulate_frechet_field(s7)).cwiseAbs().maxCoeff());

  bool ok = worst_ks < 1.6276 && worst_z < 3.0 && dmax == 0.0;
  char buf[180];
  std::snprintf(buf, sizeof buf,
                "margins KS sqrt(n) %.3f (<1.6276), extremal-coef worst z %.2f (<3), "
                "worker/repeat diff %.1e (=0)",
                worst_ks, worst_z, dmax);
  report("simulator", ok, buf);
}

// ---------------------------------------------------------------- criterion 9

void criterion_diagnostics() {
  SimConfig sc;
  sc.sites = grid(3);
  sc.n = 2000;
  sc.dep = DependenceParams::from_natural(1.2, 2.0);
  sc.seed = 909;
  GevParams g{1.0, 2.0, 0.25};
  for (int i = 0; i < 9; ++i) sc.margins.push_back(g);
  Eigen::MatrixXd obs = simulate_gev_field(sc);
  PitResult pit = pit_values(obs, [&](int, int) { return g; });
  double worst_ks = 0.0;
  for (int s = 0; s < 9; ++s) {
    std::vector<double> u(pit.u.col(s).data(), pit.u.col(s).data() + sc.n);
    worst_ks = std::max(worst_ks, ks_sqrt_n(u));
  }

  // twelve unit-Frechet months: the level has a closed form
  std::vector<GevParams> months(12, GevParams{1.0, 1.0, 1.0});
  double closed = return_level(months, 50.0).level;
  double want = -12.0 / std::log(0.98);
  double e_closed = std::abs(closed - want) / want;

  std::vector<GevParams> mix{{0, 1, 0.2}, {1, 2, -0.1}, {0.5, 1.5, 0.0}};
  bool mono = true;
  double prev = -kInf;
  for (double r : {1.5, 2.0, 5.0, 20.0, 100.0, 1000.0}) {
    double lev = return_level(mix, r).level;
    mono = mono && lev > prev;
    prev = lev;
  }

  bool ok = worst_ks < 1.6276 && e_closed < 1e-6 && mono;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "PIT KS sqrt(n) %.3f (<1.6276), closed-form rel err %.1e (<1e-6), "
                "monotone in r: %s",
                worst_ks, e_closed, mono ? "yes" : "NO");
  report("diagnostics", ok, buf);
}

// ------------------------------------------------ heavy designs (criteria 5-6)

struct StudyRun {
  Eigen::VectorXd est;      // natural scale
  Eigen::VectorXd covered;  // 0/1 per component
  bool ok = false;
};

StudyRun run_stationary_design(std::uint64_t seed, std::size_t block_target) {
  StudyRun out;
  std::vector<Site> sites = grid(10);
  SimConfig sc;
  sc.sites = sites;
  sc.n = 500;
  sc.dep = DependenceParams::from_natural(0.8, 10.0);
  sc.seed = seed;
  for (const Site& s : sites)
    sc.margins.push_back({0.5 * s.x + 0.5 * s.y, std::exp(1.5), 0.2});
  PipelineInput in;
  in.sites = sites;
  in.obs = simulate_gev_field(sc);
  in.model = ModelSpec::linear_trend(sites);
  in.thresholds = empirical_thresholds(in.obs, 0.80);
  Eigen::VectorXd truth(6);
  truth << 0.8, 10, 0.5, 0.5, 1.5, 0.2;
  try {
    PipelineResult res = run_pipeline(in, partition_grid(sites, block_target));
    Eigen::VectorXd se = res.cov_natural.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.est = res.theta_natural;
    out.covered.resize(6);
    for (int j = 0; j < 6; ++j)
      out.covered(j) = std::abs(res.theta_natural(j) - truth(j)) <= 1.96 * se(j) ? 1.0 : 0.0;
    out.ok = true;
  } catch (const std::exception&) {
  }
  return out;
}

void criterion_table1() {
  const int nseeds = scaled(200);
  Eigen::VectorXd truth(6);
  truth << 0.8, 10, 0.5, 0.5, 1.5, 0.2;
  std::vector<std::vector<double>> est(6);
  Eigen::VectorXd cov_sum = Eigen::VectorXd::Zero(6);
  int done = 0;
  for (int sd = 0; sd < nseeds; ++sd) {
    StudyRun r = run_stationary_design(100000 + sd, 25);
    if (!r.ok) continue;
    ++done;
    for (int j = 0; j < 6; ++j) est[j].push_back(r.est(j));
    cov_sum += r.covered;
  }
  double mb_alpha = median(est[0]) - truth(0);
  double worst_beta = 0.0;
  for (int j = 2; j < 6; ++j)
    worst_beta = std::max(worst_beta, std::abs(median(est[j]) - truth(j)));
  double cmin = 2.0, cmax = -1.0;
  for (int j = 0; j < 6; ++j) {
    double c = cov_sum(j) / done;
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }
  bool ok = done >= nseeds * 9 / 10 && std::abs(mb_alpha) <= 0.01 && worst_beta <= 0.02 &&
            cmin >= 0.90 && cmax <= 0.99;
  char buf[220];
  std::snprintf(buf, sizeof buf,
                "%d/%d seeds, |median bias| alpha %.4f (<=0.01), worst beta %.4f (<=0.02), "
                "coverage in [%.3f, %.3f] (need within [0.90, 0.99])",
                done, nseeds, std::abs(mb_alpha), worst_beta, cmin, cmax);
  report("stationary-study", ok, buf);
}

void criterion_bias_vs_k() {
  const int nseeds = scaled(100);
  int wins_alpha = 0, wins_beta3 = 0, done = 0;
  std::vector<double> b1a, b4a, b1b, b4b;
  for (int sd = 0; sd < nseeds; ++sd) {
    StudyRun r4 = run_stationary_design(200000 + sd, 25);
    StudyRun r1 = run_stationary_design(200000 + sd, 100);
    if (!r4.ok || !r1.ok) continue;
    ++done;
    b4a.push_back(std::abs(r4.est(0) - 0.8));
    b1a.push_back(std::abs(r1.est(0) - 0.8));
    b4b.push_back(std::abs(r4.est(5) - 0.2));
    b1b.push_back(std::abs(r1.est(5) - 0.2));
    if (b1a.back() > b4a.back()) ++wins_alpha;
    if (b1b.back() > b4b.back()) ++wins_beta3;
  }
  // one-sided sign test at level 0.05: fail only if the undivided fit beats
  // the split fit so often that the lower binomial tail drops below 5%
  auto binom_lower_crit = [](int n) {
    double p = 0.0, logc = 0.0;
    for (int s = 0; s <= n; ++s) {
      p += std::exp(logc - n * std::log(2.0));
      if (p >= 0.05) return s;
      logc += std::log((double)(n - s)) - std::log((double)(s + 1));
    }
    return n;
  };
  int crit = binom_lower_crit(done);
  bool ok = done >= nseeds * 9 / 10 && wins_alpha >= crit && wins_beta3 >= crit;
  char buf[250];
  std::snprintf(buf, sizeof buf,
                "%d paired seeds: undivided fit has larger error on %d (alpha) and %d "
                "(beta3), need >= %d each; median |error| alpha K1 %.4f vs K4 %.4f, "
                "beta3 K1 %.4f vs K4 %.4f",
                done, wins_alpha, wins_beta3, crit, median(b1a), median(b4a), median(b1b),
                median(b4b));
  report("bias-vs-k", ok, buf);
}

// -------------------------------------------------------------- criterion 7

// exact structural checks of the penalized combination: GCV trace identity at
// zero penalty, monotone shrinkage in the penalty, and reduction to the
// homogeneous pipeline when the bases are intercepts only
bool svc_quick_checks(std::string& detail) {
  // synthetic artifacts: 2 blocks, 2 basis columns per field, shared triple
  SvcLayout L = SvcLayout::build({2, 2}, {2, 2}, 1);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  SvcArtifacts art;
  art.layout = L;
  art.n = 400;
  int csz = 0;
  for (int k = 0; k < 2; ++k) csz += L.local_dim(k);
  Eigen::MatrixXd root(csz, csz);
  for (int i = 0; i < csz; ++i)
    for (int j = 0; j < csz; ++j) root(i, j) = nd(rng);
  art.C = root * root.transpose() / csz + Eigen::MatrixXd::Identity(csz, csz);
  art.W = block_weights_svc(art.C, L);
  std::vector<Eigen::VectorXd> fixed_scores;
  for (int k = 0; k < 2; ++k) {
    int pk = L.local_dim(k);
    Eigen::MatrixXd I(pk, pk);
    for (int i = 0; i < pk; ++i)
      for (int j = 0; j < pk; ++j) I(i, j) = nd(rng) + (i == j ? 3.0 : 0.0);
    art.sens.push_back(I);
    Eigen::VectorXd t(pk), s(pk);
    for (int i = 0; i < pk; ++i) {
      t(i) = nd(rng);
      s(i) = nd(rng);
    }
    art.thetas.push_back(t);
    fixed_scores.push_back(s);
  }
  auto score_at = [&](int k, const Eigen::VectorXd&) { return fixed_scores[k]; };

  // at zero penalty the smoother trace equals the full parameter count, so
  // the GCV denominator is (1 - total/n)^2 exactly
  SvcMeta m0 = meta_estimate_svc(art, 0.0, 0.0);
  double num = 0.0;
  for (int k = 0; k < 2; ++k) num += fixed_scores[k].dot(art.W[k] * fixed_scores[k]);
  num /= art.n;
  double want0 = num / std::pow(1.0 - (double)L.total / art.n, 2.0);
  double got0 = gcv(art, 0.0, 0.0, m0.theta, score_at);
  double e_trace = std::abs(got0 - want0) / want0;

  // increasing penalty shrinks the basis coefficients and the effective dof;
  // dof is recovered from the gcv value since the numerator is held fixed
  double prev_norm = kInf, prev_dof = kInf;
  bool mono = true;
  for (double lam : {0.0, 0.5, 5.0, 50.0}) {
    SvcMeta m = meta_estimate_svc(art, lam, lam);
    double eta = 0.0;
    for (int k = 0; k < 2; ++k) {
      eta += m.theta.segment(L.eta1_off[k], L.q1[k]).squaredNorm();
      eta += m.theta.segment(L.eta2_off[k], L.q2[k]).squaredNorm();
    }
    double g = gcv(art, lam, lam, m.theta, score_at);
    double dof = art.n * (1.0 - std::sqrt(num / g));
    if (lam > 0.0) mono = mono && eta < prev_norm && dof < prev_dof;
    prev_norm = eta;
    prev_dof = dof;
  }

  // intercept-only bases with one block reproduce the homogeneous pipeline
  PipelineInput in = sim_input(5, 250, 7001, 0.75, 0.9, 3.0);
  in.model.z1_site = Eigen::MatrixXd::Ones(25, 1);
  Partition p1 = partition_grid(in.sites, 25);
  PipelineResult stat = run_pipeline(in, p1);
  SvcConfig icfg;
  icfg.intercept_only = true;
  icfg.lambda_grid = {{0, 0}};
  SvcPipelineResult nested = run_pipeline_svc(in, p1, icfg);
  double e_nest = (nested.theta - stat.theta).cwiseAbs().maxCoeff();
  double mu_spread = nested.fields.mu.maxCoeff() - nested.fields.mu.minCoeff();

  char buf[220];
  std::snprintf(buf, sizeof buf,
                "gcv trace identity err %.1e (<1e-10), shrinkage monotone %s, "
                "intercept-only nesting err %.1e (<1e-8), field spread %.1e",
                e_trace, mono ? "yes" : "NO", e_nest, mu_spread);
  detail = buf;
  return e_trace < 1e-10 && mono && e_nest < 1e-8 && mu_spread < 1e-10;
}

void criterion_svc(bool heavy) {
  std::string qdetail;
  bool quick_ok = svc_quick_checks(qdetail);
  if (!heavy) {
    report("svc-suite(quick)", quick_ok, qdetail);
    return;
  }

  // varying-coefficient surfaces on the 10x10 grid, homogeneous (alpha, phi, xi)
  const int nseeds = scaled(100);
  std::vector<Site> sites = grid(10);
  const int d = (int)sites.size();
  auto b1f = [&](const Site& s) {
    return (s.x * s.x * s.x * s.x + s.y * s.y * s.y * s.y + s.x * s.y) / ((double)d * d);
  };
  auto b2f = [&](const Site& s) { return std::sqrt(s.x * s.x + s.y * s.y) / 10.0; };
  double b1_lo = kInf, b1_hi = -kInf;
  for (const Site& s : sites) {
    b1_lo = std::min(b1_lo, b1f(s));
    b1_hi = std::max(b1_hi, b1f(s));
  }
  Partition part = partition_grid(sites, 25);

  int done = 0, cov_a = 0, cov_p = 0;
  std::vector<double> aaed1;
  for (int sd = 0; sd < nseeds; ++sd) {
    SimConfig sc;
    sc.sites = sites;
    sc.n = 800;
    sc.dep = DependenceParams::from_natural(1.0, 10.0);
    sc.seed = 300000 + sd;
    for (const Site& s : sites) sc.margins.push_back({b1f(s), std::exp(b2f(s)), 0.2});
    PipelineInput in;
    in.sites = sites;
    in.obs = simulate_gev_field(sc);
    in.model.z1_site = Eigen::MatrixXd::Ones(d, 1);
    in.model.z2_site = Eigen::MatrixXd::Ones(d, 1);
    in.model.z3_site = Eigen::MatrixXd::Ones(d, 1);
    in.thresholds = empirical_thresholds(in.obs, 0.90);
    try {
      SvcPipelineResult res = run_pipeline_svc(in, part, SvcConfig{});
      ++done;
      double acc = 0.0;
      for (std::size_t r = 0; r < res.fields.site_index.size(); ++r)
        acc += std::abs(res.fields.mu((int)r) - b1f(sites[res.fields.site_index[r]])) /
               (b1_hi - b1_lo);
      aaed1.push_back(acc / d);
      if (std::abs(res.alpha - 1.0) <= 1.96 * res.alpha_se) ++cov_a;
      if (std::abs(res.phi - 10.0) <= 1.96 * res.phi_se) ++cov_p;
    } catch (const std::exception&) {
    }
  }
  double mean_aaed = 0.0;
  for (double v : aaed1) mean_aaed += v / aaed1.size();
  double ca = (double)cov_a / done, cp = (double)cov_p / done;
  bool ok = quick_ok && done >= nseeds * 9 / 10 && mean_aaed <= 0.10 && ca >= 0.88 &&
            ca <= 0.99 && cp >= 0.88 && cp <= 0.99;
  char buf[360];
  std::snprintf(buf, sizeof buf,
                "%s; surfaces: %d/%d seeds, aAED(mu) %.4f (<=0.10), coverage alpha %.3f "
                "phi %.3f (need within [0.88, 0.99])",
                qdetail.c_str(), done, nseeds, mean_aaed, ca, cp);
  report("svc-suite", ok, buf);
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--quick") quick = true;

  criterion_math_kernels();
  criterion_score_fd();
  criterion_k1_reductions();
  criterion_gmm_oracle();
  if (!quick) criterion_table1();
  if (!quick) criterion_bias_vs_k();
  criterion_svc(!quick);
  criterion_simulator();
  criterion_diagnostics();

  std::cout << (g_failures == 0 ? "ALL PASS" : "FAILURES: " + std::to_string(g_failures))
            << "\n";
  return g_failures == 0 ? 0 : 1;
}
