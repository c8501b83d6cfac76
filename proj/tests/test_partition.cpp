#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "spex/math.hpp"
#include "spex/partition.hpp"

using namespace spex;

namespace {

std::vector<Site> grid(int side, double spacing = 1.0) {
  std::vector<Site> s;
  for (int iy = 0; iy < side; ++iy)
    for (int ix = 0; ix < side; ++ix) s.push_back({ix * spacing, iy * spacing});
  return s;
}

void check_valid(const Partition& p, int d) {
  p.validate(d);
  std::set<int> seen;
  for (const auto& blk : p.blocks) {
    CHECK(blk.size() >= 2);
    for (int s : blk) CHECK(seen.insert(s).second);
  }
  CHECK((int)seen.size() == d);
}

}  // namespace

TEST_CASE("grid partition: 10x10 into target 25 gives 4 balanced blocks") {
  auto sites = grid(10);
  Partition p = partition_grid(sites, 25);
  check_valid(p, 100);
  CHECK(p.blocks.size() == 4);
  for (const auto& b : p.blocks) CHECK(b.size() == 25);
}

TEST_CASE("grid partition covers awkward shapes") {
  // irregular scattered sites
  Rng rng(77, 0, 0);
  std::vector<Site> s;
  for (int i = 0; i < 57; ++i) s.push_back({rng.uniform() * 10, rng.uniform() * 10});
  Partition p = partition_grid(s, 10);
  check_valid(p, 57);
  for (const auto& b : p.blocks) CHECK(b.size() >= 2);
}

TEST_CASE("grid partition is deterministic") {
  auto sites = grid(9);
  Partition a = partition_grid(sites, 20), b = partition_grid(sites, 20);
  CHECK(a.assignment == b.assignment);
}

TEST_CASE("grid partition rejects bad inputs") {
  CHECK_THROWS_AS(partition_grid({{0, 0}}, 2), PartitionError);
  CHECK_THROWS_AS(partition_grid(grid(3), 1), PartitionError);
}

TEST_CASE("custom labels") {
  auto sites = grid(4);
  std::vector<std::string> labels(16);
  for (int i = 0; i < 16; ++i) labels[i] = sites[i].x < 2 ? "west" : "east";
  Partition p = partition_custom(sites, labels);
  check_valid(p, 16);
  CHECK(p.blocks.size() == 2);

  labels[3] = "lonely";
  labels[7] = "east";
  CHECK_THROWS_WITH_AS(partition_custom(sites, labels),
                       doctest::Contains("lonely"), PartitionError);
}

TEST_CASE("from_assignment validates") {
  CHECK_THROWS_AS(Partition::from_assignment({0, 0, 1}), PartitionError);  // singleton block
  Partition p = Partition::from_assignment({0, 1, 0, 1});
  check_valid(p, 4);
}
