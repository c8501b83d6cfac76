#pragma once

// Disjoint block structure over sites: quantile-based grid blocks of a
// target size, or user-supplied labels (e.g. watershed regions).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace spex {

struct Site {
  double x = 0.0;
  double y = 0.0;
};

inline double site_distance(const Site& a, const Site& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

class PartitionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Partition {
  std::vector<int> assignment;                 // site index -> block id in [0, K)
  std::vector<std::vector<int>> blocks;        // per-block ordered site indices

  int num_blocks() const { return (int)blocks.size(); }
  std::size_t block_size(int k) const { return blocks[k].size(); }

  void validate(std::size_t num_sites) const {
    if (assignment.size() != num_sites)
      throw PartitionError("partition: assignment size mismatch");
    std::vector<char> seen(num_sites, 0);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (blocks[k].size() < 2)
        throw PartitionError("partition: block " + std::to_string(k) +
                             " has fewer than 2 sites");
      for (int s : blocks[k]) {
        if (s < 0 || (std::size_t)s >= num_sites || seen[s])
          throw PartitionError("partition: blocks not disjoint over all sites");
        seen[s] = 1;
        if (assignment[s] != (int)k)
          throw PartitionError("partition: assignment/blocks inconsistent");
      }
    }
    for (char c : seen)
      if (!c) throw PartitionError("partition: union of blocks misses a site");
  }

  static Partition from_assignment(std::vector<int> assignment) {
    Partition p;
    p.assignment = std::move(assignment);
    int K = 0;
    for (int a : p.assignment) K = std::max(K, a + 1);
    p.blocks.resize(K);
    for (std::size_t s = 0; s < p.assignment.size(); ++s)
      p.blocks[p.assignment[s]].push_back((int)s);
    p.validate(p.assignment.size());
    return p;
  }
};

// Quantile grid partition: split x-ranks into strips, then y-ranks within
// each strip. Deterministic and invariant to site input order.
inline Partition partition_grid(const std::vector<Site>& sites, std::size_t target_block_size) {
  const std::size_t d = sites.size();
  if (d < 2) throw PartitionError("partition_grid: need at least 2 sites");
  if (target_block_size < 2)
    throw PartitionError("partition_grid: target block size must be >= 2");
  std::size_t K = std::max<std::size_t>(1, (d + target_block_size / 2) / target_block_size);
  if (K * 2 > d) K = d / 2;  // keep every block at size >= 2
  if (K == 0) K = 1;
  std::size_t nx = (std::size_t)std::ceil(std::sqrt((double)K));
  std::size_t ny = (K + nx - 1) / nx;
  K = nx * ny;
  while (K * 2 > d && K > 1) {
    if (nx >= ny) --nx; else --ny;
    if (nx == 0) nx = 1;
    if (ny == 0) ny = 1;
    K = nx * ny;
  }

  // order sites by (x, y, index) for strip assignment
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (sites[a].x != sites[b].x) return sites[a].x < sites[b].x;
    if (sites[a].y != sites[b].y) return sites[a].y < sites[b].y;
    return a < b;
  });

  std::vector<int> assignment(d, -1);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    std::size_t lo = ix * d / nx, hi = (ix + 1) * d / nx;
    std::vector<int> strip(order.begin() + lo, order.begin() + hi);
    std::stable_sort(strip.begin(), strip.end(), [&](int a, int b) {
      if (sites[a].y != sites[b].y) return sites[a].y < sites[b].y;
      if (sites[a].x != sites[b].x) return sites[a].x < sites[b].x;
      return a < b;
    });
    std::size_t m = strip.size();
    for (std::size_t iy = 0; iy < ny; ++iy) {
      std::size_t slo = iy * m / ny, shi = (iy + 1) * m / ny;
      for (std::size_t j = slo; j < shi; ++j)
        assignment[strip[j]] = (int)(ix * ny + iy);
    }
  }
  // sites within a block sorted by index
  return Partition::from_assignment(std::move(assignment));
}

// User-supplied labels (label -> block, ordered by first-seen label sorted).
inline Partition partition_custom(const std::vector<Site>& sites,
                                  const std::vector<std::string>& labels) {
  if (labels.size() != sites.size())
    throw PartitionError("partition_custom: every site must carry a label");
  std::map<std::string, int> ids;
  for (const auto& l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& [label, id] : ids) id = next++;
  std::vector<int> assignment(sites.size());
  for (std::size_t s = 0; s < sites.size(); ++s) assignment[s] = ids[labels[s]];
  std::vector<std::size_t> counts(next, 0);
  for (int a : assignment) ++counts[a];
  for (auto& [label, id] : ids)
    if (counts[id] < 2)
      throw PartitionError("partition_custom: block '" + label + "' has fewer than 2 sites");
  return Partition::from_assignment(std::move(assignment));
}

}  // namespace spex
