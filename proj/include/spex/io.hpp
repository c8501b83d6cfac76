#pragma once

// Dataset ingestion and validation, per-site empirical thresholds, and the
// optional robust standardization (median / central 90% range) with exact
// back-transformation.

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spex/partition.hpp"

namespace spex {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<std::string> site_ids;
  std::vector<Site> sites;
  std::vector<std::string> block_labels;  // empty when the sites file has none
  Eigen::MatrixXd obs;                    // n x d, complete
  std::vector<std::string> rep_cov_names;
  Eigen::MatrixXd rep_covariates;  // n x m, optional

  bool standardized = false;
  Eigen::VectorXd center, scale;  // per site

  int n() const { return (int)obs.rows(); }
  int d() const { return (int)obs.cols(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == ';' || ch == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ')) f.pop_back();
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, int row) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw DataError(file + ": row " + std::to_string(row) + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

// Empirical quantile with linear interpolation of order statistics
// (h = (n-1)q, zero-based): the fixed convention for thresholds.
inline double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("quantile level must be in (0,1)");
  std::sort(v.begin(), v.end());
  double h = (v.size() - 1) * q;
  std::size_t lo = (std::size_t)std::floor(h);
  if (lo + 1 >= v.size()) return v.back();
  double w = h - lo;
  return v[lo] * (1.0 - w) + v[lo + 1] * w;
}

// Per-site thresholds at quantile level q; sites with short series are
// reported through `warnings`.
inline Eigen::VectorXd thresholds(const Dataset& ds, double q,
                                  std::vector<std::string>* warnings = nullptr) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("threshold quantile must be in (0,1)");
  if (ds.n() < 2) throw DataError("need at least 2 replicates for thresholds");
  Eigen::VectorXd u(ds.d());
  for (int s = 0; s < ds.d(); ++s) {
    if (ds.n() < 20 && warnings)
      warnings->push_back("site " + ds.site_ids[s] + ": fewer than 20 observations");
    std::vector<double> col(ds.obs.col(s).data(), ds.obs.col(s).data() + ds.n());
    u(s) = empirical_quantile(std::move(col), q);
  }
  return u;
}

// sites file: site_id,x,y[,block][,covariate...] ; observations file:
// replicate_id,site_id,value. The observation matrix must be complete.
inline Dataset ingest(const std::string& sites_path, const std::string& obs_path) {
  Dataset ds;
  {
    std::ifstream f(sites_path);
    if (!f) throw DataError(sites_path + ": cannot open");
    std::string line;
    if (!std::getline(f, line)) throw DataError(sites_path + ": empty file");
    auto hdr = detail::split_csv_line(line);
    if (hdr.size() < 3 || hdr[0] != "site_id" || hdr[1] != "x" || hdr[2] != "y")
      throw DataError(sites_path + ": header must start with site_id,x,y");
    bool has_block = hdr.size() > 3 && hdr[3] == "block";
    int row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      auto fields = detail::split_csv_line(line);
      if (fields.size() != hdr.size())
        throw DataError(sites_path + ": row " + std::to_string(row) + ": expected " +
                        std::to_string(hdr.size()) + " fields, got " +
                        std::to_string(fields.size()));
      ds.site_ids.push_back(fields[0]);
      ds.sites.push_back({detail::parse_double(fields[1], sites_path, row),
                          detail::parse_double(fields[2], sites_path, row)});
      if (has_block) ds.block_labels.push_back(fields[3]);
    }
  }
  const int d = (int)ds.sites.size();
  if (d == 0) throw DataError(sites_path + ": no sites");
  std::map<std::string, int> site_index;
  for (int s = 0; s < d; ++s)
    if (!site_index.emplace(ds.site_ids[s], s).second)
      throw DataError(sites_path + ": duplicate site_id " + ds.site_ids[s]);

  std::map<std::string, int> rep_index;
  std::vector<std::string> rep_order;
  std::vector<std::map<int, double>> cells;  // per replicate: site -> value
  std::vector<std::string> unknown;
  {
    std::ifstream f(obs_path);
    if (!f) throw DataError(obs_path + ": cannot open");
    std::string line;
    if (!std::getline(f, line)) throw DataError(obs_path + ": empty file");
    auto hdr = detail::split_csv_line(line);
    if (hdr.size() != 3 || hdr[0] != "replicate_id" || hdr[1] != "site_id" || hdr[2] != "value")
      throw DataError(obs_path + ": header must be replicate_id,site_id,value");
    int row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      auto fields = detail::split_csv_line(line);
      if (fields.size() != 3)
        throw DataError(obs_path + ": row " + std::to_string(row) + ": expected 3 fields");
      auto si = site_index.find(fields[1]);
      if (si == site_index.end()) {
        unknown.push_back(fields[1]);
        continue;
      }
      auto [it, fresh] = rep_index.emplace(fields[0], (int)rep_order.size());
      if (fresh) {
        rep_order.push_back(fields[0]);
        cells.emplace_back();
      }
      double v = detail::parse_double(fields[2], obs_path, row);
      if (!cells[it->second].emplace(si->second, v).second)
        throw DataError(obs_path + ": row " + std::to_string(row) + ": duplicate (replicate " +
                        fields[0] + ", site " + fields[1] + ")");
    }
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end()), unknown.end());
    std::string msg = obs_path + ": unknown site_id:";
    for (const auto& u : unknown) msg += " " + u;
    throw DataError(msg);
  }
  const int n = (int)rep_order.size();
  if (n == 0) throw DataError(obs_path + ": no observations");
  ds.obs.resize(n, d);
  for (int i = 0; i < n; ++i) {
    if ((int)cells[i].size() != d)
      throw DataError(obs_path + ": replicate " + rep_order[i] + " has " +
                      std::to_string(cells[i].size()) + " of " + std::to_string(d) + " sites");
    for (const auto& [s, v] : cells[i]) ds.obs(i, s) = v;
  }
  return ds;
}

// subtract the site median, divide by the central 90% range; factors stored
// so data-scale outputs can be recovered exactly
inline void standardize(Dataset& ds) {
  if (ds.standardized) throw ConfigError("dataset already standardized");
  ds.center.resize(ds.d());
  ds.scale.resize(ds.d());
  for (int s = 0; s < ds.d(); ++s) {
    std::vector<double> col(ds.obs.col(s).data(), ds.obs.col(s).data() + ds.n());
    double med = empirical_quantile(col, 0.5);
    double range = empirical_quantile(col, 0.95) - empirical_quantile(col, 0.05);
    if (!(range > 0.0))
      throw DataError("site " + ds.site_ids[s] + ": degenerate central 90% range");
    ds.center(s) = med;
    ds.scale(s) = range;
    ds.obs.col(s) = (ds.obs.col(s).array() - med) / range;
  }
  ds.standardized = true;
}

inline void unstandardize(Dataset& ds) {
  if (!ds.standardized) throw ConfigError("dataset is not standardized");
  for (int s = 0; s < ds.d(); ++s)
    ds.obs.col(s) = ds.obs.col(s).array() * ds.scale(s) + ds.center(s);
  ds.standardized = false;
}

inline Partition partition_from_labels(const Dataset& ds) {
  if (ds.block_labels.empty()) throw ConfigError("sites file has no block column");
  return partition_custom(ds.sites, ds.block_labels);
}

}  // namespace spex
