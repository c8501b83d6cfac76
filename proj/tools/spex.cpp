// Batch front end: simulate / fit / fit-svc / diagnose / return-levels.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "spex/diagnostics.hpp"
#include "spex/io.hpp"
#include "spex/pipeline.hpp"
#include "spex/simulate.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spex;

namespace {

std::vector<Site> make_grid(int side, double spacing) {
  std::vector<Site> sites;
  for (int iy = 0; iy < side; ++iy)
    for (int ix = 0; ix < side; ++ix)
      sites.push_back({ix * spacing, iy * spacing});
  return sites;
}

void write_sites_csv(const std::string& path, const std::vector<Site>& sites) {
  std::ofstream f(path);
  if (!f) throw DataError(path + ": cannot open for writing");
  f << "site_id,x,y\n";
  f.precision(17);
  for (std::size_t j = 0; j < sites.size(); ++j)
    f << "s" << j << "," << sites[j].x << "," << sites[j].y << "\n";
}

void write_obs_csv(const std::string& path, const Eigen::MatrixXd& obs) {
  std::ofstream f(path);
  if (!f) throw DataError(path + ": cannot open for writing");
  f << "replicate_id,site_id,value\n";
  f.precision(17);
  for (int i = 0; i < obs.rows(); ++i)
    for (int j = 0; j < obs.cols(); ++j)
      f << "r" << i << ",s" << j << "," << obs(i, j) << "\n";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_manifest(const fs::path& outdir, const std::string& verb, const json& config) {
  json m;
  m["format_version"] = 1;
  m["verb"] = verb;
  m["config"] = config;
  m["config_hash"] = fnv1a(config.dump());
  std::ofstream f(outdir / "manifest.json");
  f << m.dump(2) << "\n";
}

struct FitFlags {
  std::string sites_path, obs_path, outdir = ".";
  double q = 0.8;
  int block_size = 25;
  int workers = 1;
  bool label_partition = false;
  bool standardize_data = false;
  bool drop_failed = false;
};

void add_fit_flags(CLI::App* cmd, FitFlags& ff) {
  cmd->add_option("--sites", ff.sites_path, "sites CSV (site_id,x,y[,block])")->required();
  cmd->add_option("--obs", ff.obs_path, "observations CSV (replicate_id,site_id,value)")
      ->required();
  cmd->add_option("--out", ff.outdir, "output directory");
  cmd->add_option("-q,--quantile", ff.q, "threshold quantile in (0,1)");
  cmd->add_option("--block-size", ff.block_size, "target sites per block (grid partition)");
  cmd->add_flag("--partition-by-label", ff.label_partition,
                "use the sites file's block column instead of the grid partition");
  cmd->add_option("--workers", ff.workers, "worker threads");
  cmd->add_flag("--standardize", ff.standardize_data, "robust per-site standardization");
  cmd->add_flag("--drop-failed-blocks", ff.drop_failed, "drop non-converged blocks");
}

struct LoadedFit {
  Dataset ds;
  Partition part;
  PipelineInput input;
  PipelineConfig cfg;
  std::vector<std::string> warnings;
};

LoadedFit load_for_fit(const FitFlags& ff) {
  LoadedFit L;
  L.ds = ingest(ff.sites_path, ff.obs_path);
  if (ff.standardize_data) standardize(L.ds);
  L.part = !ff.label_partition ? partition_grid(L.ds.sites, ff.block_size)
                                      : partition_from_labels(L.ds);
  L.input.sites = L.ds.sites;
  L.input.obs = L.ds.obs;
  L.input.thresholds = thresholds(L.ds, ff.q, &L.warnings);
  L.input.model = ModelSpec::linear_trend(L.ds.sites);
  L.cfg.workers = ff.workers;
  L.cfg.drop_failed_blocks = ff.drop_failed;
  return L;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

int cmd_simulate(int side, double spacing, int n, double alpha, double phi,
                 std::vector<double> beta1, double beta2, double beta3, std::uint64_t seed,
                 bool approx, int workers, const std::string& outdir) {
  if (alpha <= 0 || alpha >= 2 || phi <= 0) throw ConfigError("need alpha in (0,2), phi > 0");
  fs::create_directories(outdir);
  SimConfig sc;
  sc.sites = make_grid(side, spacing);
  sc.n = n;
  sc.dep = DependenceParams::from_natural(alpha, phi);
  sc.seed = seed;
  sc.exact = !approx;
  sc.workers = workers;
  for (const Site& s : sc.sites) {
    double mu = beta1[0] * s.x + beta1[1] * s.y;
    sc.margins.push_back({mu, std::exp(beta2), beta3});
  }
  Eigen::MatrixXd obs = simulate_gev_field(sc);
  write_sites_csv((fs::path(outdir) / "sites.csv").string(), sc.sites);
  write_obs_csv((fs::path(outdir) / "obs.csv").string(), obs);
  json cfg{{"grid", side},   {"spacing", spacing}, {"n", n},
           {"alpha", alpha}, {"phi", phi},         {"beta1", beta1},
           {"beta2", beta2}, {"beta3", beta3},     {"seed", seed},
           {"exact", !approx}};
  write_manifest(outdir, "simulate", cfg);
  return 0;
}

int cmd_fit(const FitFlags& ff) {
  fs::create_directories(ff.outdir);
  LoadedFit L = load_for_fit(ff);
  PipelineResult res = run_pipeline(L.input, L.part, L.cfg);

  json rep;
  rep["mode"] = "stationary";
  rep["note"] = "no varying-coefficient fields in stationary mode";
  rep["n"] = res.n;
  rep["blocks"] = res.K;
  rep["parameters_per_block"] = res.p;
  rep["estimate_working_scale"] = vec_to_json(res.theta);
  rep["estimate"] = vec_to_json(res.theta_natural);
  Eigen::VectorXd se = res.cov_natural.diagonal().cwiseMax(0.0).cwiseSqrt();
  rep["se"] = vec_to_json(se);
  rep["parameter_names"] = {"alpha", "phi", "beta1_x", "beta1_y", "beta2", "beta3"};
  json blocks = json::array();
  for (const auto& m : res.round_one)
    blocks.push_back({{"block", m.block_id},
                      {"theta", vec_to_json(m.theta)},
                      {"converged", m.converged},
                      {"iterations", m.iterations},
                      {"grad_norm", m.grad_norm}});
  rep["round_one"] = blocks;
  for (const auto& w : L.warnings) res.warnings.push_back(w);
  rep["warnings"] = res.warnings;
  std::ofstream(fs::path(ff.outdir) / "report.json") << rep.dump(2) << "\n";

  json cfg{{"q", ff.q},
           {"block_size", ff.block_size},
           {"standardize", ff.standardize_data},
           {"partition", !ff.label_partition ? "grid" : "label"}};
  write_manifest(ff.outdir, "fit", cfg);
  std::cout << "alpha " << res.theta_natural(0) << " (" << se(0) << ")\n"
            << "phi   " << res.theta_natural(1) << " (" << se(1) << ")\n";
  return 0;
}

int cmd_fit_svc(const FitFlags& ff, int knots, const std::vector<double>& lambda_axis) {
  fs::create_directories(ff.outdir);
  LoadedFit L = load_for_fit(ff);
  SvcConfig sc;
  sc.knots_per_block = knots;
  if (!lambda_axis.empty()) {
    sc.lambda_grid.clear();
    for (double l1 : lambda_axis)
      for (double l2 : lambda_axis) sc.lambda_grid.push_back({l1, l2});
  }
  SvcPipelineResult res = run_pipeline_svc(L.input, L.part, sc, L.cfg);

  json rep;
  rep["mode"] = "svc";
  rep["n"] = res.n;
  rep["blocks"] = res.layout.blocks();
  rep["alpha"] = res.alpha;
  rep["alpha_se"] = res.alpha_se;
  rep["phi"] = res.phi;
  rep["phi_se"] = res.phi_se;
  rep["beta3"] = res.beta3;
  rep["beta3_se"] = res.beta3_se;
  rep["lambda1"] = res.lambda1;
  rep["lambda2"] = res.lambda2;
  json gtab = json::array();
  for (const auto& [lam, g] : res.gcv_table)
    gtab.push_back({{"lambda1", lam.first}, {"lambda2", lam.second}, {"gcv", g}});
  rep["gcv"] = gtab;
  for (const auto& w : L.warnings) res.warnings.push_back(w);
  rep["warnings"] = res.warnings;
  std::ofstream(fs::path(ff.outdir) / "report.json") << rep.dump(2) << "\n";

  std::ofstream ft(fs::path(ff.outdir) / "fields.csv");
  ft << "site_id,mu,mu_se,log_sigma,log_sigma_se\n";
  ft.precision(17);
  for (int r = 0; r < (int)res.fields.site_index.size(); ++r)
    ft << L.ds.site_ids[res.fields.site_index[r]] << "," << res.fields.mu(r) << ","
       << res.fields.mu_se(r) << "," << res.fields.log_sigma(r) << ","
       << res.fields.log_sigma_se(r) << "\n";

  json cfg{{"q", ff.q},
           {"block_size", ff.block_size},
           {"knots", knots},
           {"standardize", ff.standardize_data},
           {"partition", !ff.label_partition ? "grid" : "label"}};
  write_manifest(ff.outdir, "fit-svc", cfg);
  std::cout << "alpha " << res.alpha << " (" << res.alpha_se << ")\n"
            << "phi   " << res.phi << " (" << res.phi_se << ")\n"
            << "lambda (" << res.lambda1 << ", " << res.lambda2 << ")\n";
  return 0;
}

int cmd_diagnose(const FitFlags& ff) {
  fs::create_directories(ff.outdir);
  LoadedFit L = load_for_fit(ff);
  PipelineResult res = run_pipeline(L.input, L.part, L.cfg);
  const Eigen::VectorXd& t = res.theta;
  auto margins = [&](int, int s) -> GevParams {
    double mu = t(2) * L.ds.sites[s].x + t(3) * L.ds.sites[s].y;
    return {mu, std::exp(t(4)), t(5)};
  };
  PitResult pit = pit_values(L.ds.obs, margins);
  std::ofstream pf(fs::path(ff.outdir) / "pit.csv");
  pf << "replicate,site_id,u\n";
  pf.precision(17);
  for (int s = 0; s < L.ds.d(); ++s)
    for (int i = 0; i < L.ds.n(); ++i)
      pf << i << "," << L.ds.site_ids[s] << "," << pit.u(i, s) << "\n";
  json cfg{{"q", ff.q}, {"block_size", ff.block_size}};
  write_manifest(ff.outdir, "diagnose", cfg);
  std::cout << "pit values written, " << pit.support_violations.size()
            << " support violations\n";
  return 0;
}

int cmd_return_levels(const std::string& months_path, std::vector<double> rs,
                      const std::string& outdir) {
  std::vector<GevParams> months;
  {
    std::ifstream f(months_path);
    if (!f) throw DataError(months_path + ": cannot open");
    std::string line;
    if (!std::getline(f, line)) throw DataError(months_path + ": empty file");
    auto hdr = detail::split_csv_line(line);
    if (hdr.size() != 3 || hdr[0] != "mu" || hdr[1] != "sigma" || hdr[2] != "xi")
      throw DataError(months_path + ": header must be mu,sigma,xi");
    int row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      auto fi = detail::split_csv_line(line);
      if (fi.size() != 3)
        throw DataError(months_path + ": row " + std::to_string(row) + ": expected 3 fields");
      months.push_back({detail::parse_double(fi[0], months_path, row),
                        detail::parse_double(fi[1], months_path, row),
                        detail::parse_double(fi[2], months_path, row)});
    }
  }
  if (months.empty()) throw DataError(months_path + ": no rows");
  for (double r : rs)
    if (!(r > 1.0)) throw ConfigError("return period must exceed 1");
  std::sort(rs.begin(), rs.end());
  fs::create_directories(outdir);
  std::ofstream f(fs::path(outdir) / "return_levels.csv");
  f << "r,level\n";
  f.precision(17);
  for (double r : rs) {
    ReturnLevel rl = return_level(months, r);
    f << r << "," << rl.level << "\n";
    std::cout << r << "-year level: " << rl.level << "\n";
  }
  json cfg{{"months", months_path}, {"r", rs}};
  write_manifest(outdir, "return-levels", cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributed censored pairwise likelihood for spatial extremes"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw max-stable fields on a square grid");
  int side = 10, n = 100, workers = 1;
  double spacing = 1.0, alpha = 1.0, phi = 1.0, beta2 = 0.0, beta3 = 0.1;
  std::vector<double> beta1{0.0, 0.0};
  std::uint64_t seed = 1;
  bool approx = false;
  std::string outdir = ".";
  sim->add_option("--grid", side, "grid side length")->check(CLI::PositiveNumber);
  sim->add_option("--spacing", spacing, "grid spacing");
  sim->add_option("-n,--replicates", n, "number of replicates")->check(CLI::PositiveNumber);
  sim->add_option("--alpha", alpha, "variogram smoothness in (0,2)");
  sim->add_option("--phi", phi, "variogram range > 0");
  sim->add_option("--beta1", beta1, "location trend coefficients (x y)")->expected(2);
  sim->add_option("--beta2", beta2, "log scale");
  sim->add_option("--beta3", beta3, "shape");
  sim->add_option("--seed", seed, "RNG seed");
  sim->add_flag("--approx", approx, "spectral approximation instead of the exact sampler");
  sim->add_option("--workers", workers, "worker threads");
  sim->add_option("--out", outdir, "output directory");

  // fit / fit-svc / diagnose
  FitFlags ff_fit, ff_svc, ff_diag;
  auto* fit = app.add_subcommand("fit", "stationary-model distributed fit");
  add_fit_flags(fit, ff_fit);
  auto* fitsvc = app.add_subcommand("fit-svc", "spatially-varying-coefficient fit");
  add_fit_flags(fitsvc, ff_svc);
  int knots = -1;
  std::vector<double> lambda_axis;
  fitsvc->add_option("--knots", knots, "radial basis knots per block (-1 = automatic)");
  fitsvc->add_option("--lambda-grid", lambda_axis, "penalty grid axis values");
  auto* diag = app.add_subcommand("diagnose", "probability integral transform table");
  add_fit_flags(diag, ff_diag);

  // return-levels
  auto* rl = app.add_subcommand("return-levels", "annual-maximum return levels");
  std::string months_path, rl_out = ".";
  std::vector<double> rs{50.0};
  rl->add_option("--months", months_path, "monthly GEV parameter CSV (mu,sigma,xi)")
      ->required();
  rl->add_option("-r,--years", rs, "return periods in years");
  rl->add_option("--out", rl_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(side, spacing, n, alpha, phi, beta1, beta2, beta3, seed, approx,
                          workers, outdir);
    if (fit->parsed()) return cmd_fit(ff_fit);
    if (fitsvc->parsed()) return cmd_fit_svc(ff_svc, knots, lambda_axis);
    if (diag->parsed()) return cmd_diagnose(ff_diag);
    if (rl->parsed()) return cmd_return_levels(months_path, rs, rl_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PartitionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
