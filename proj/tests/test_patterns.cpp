#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vclos/patterns.hpp"

using namespace vclos;

namespace {

std::set<std::pair<int, int>> pairs_of(const CommStep& st) {
  std::set<std::pair<int, int>> out;
  for (const Flow& f : st.flows) out.emplace(f.src, f.dst);
  return out;
}

std::vector<int> contiguous(int n, int per_leaf) {
  std::vector<int> leaf(n);
  for (int i = 0; i < n; ++i) leaf[i] = i / per_leaf;
  return leaf;
}

bool all_sums_exact(const CommSchedule& s) {
  // powers of two keep every partial sum exact in double
  double want = 0;
  for (int r = 0; r < s.n_ranks; ++r) want += double(1u << (r % 20)) + r;
  const auto buf = oracle::replay_allreduce(s, [](int r) { return double(1u << (r % 20)) + r; });
  for (const auto& row : buf)
    for (double v : row)
      if (v != want) return false;
  return true;
}

}  // namespace

TEST_CASE("ring schedule") {
  const auto s = ring_steps(4, 4.0);
  CHECK(s.steps.size() == 6);
  CHECK(pairs_of(s.steps[0]) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  for (const Flow& f : s.steps[0].flows) CHECK(f.bytes == doctest::Approx(1.0));
  const auto two = ring_steps(2, 1.0);
  CHECK(two.steps.size() == 2);
  for (const auto& st : two.steps) CHECK(pairs_of(st) == std::set<std::pair<int, int>>{{0, 1}, {1, 0}});
  // per-rank bytes summed over all steps
  const auto eight = ring_steps(8, 1.0);
  std::vector<double> sent(8, 0.0);
  for (const auto& st : eight.steps)
    for (const Flow& f : st.flows) sent[f.src] += f.bytes;
  for (double b : sent) CHECK(b == doctest::Approx(2.0 * 7.0 / 8.0));
  CHECK_THROWS_AS(ring_steps(1, 1.0), PatternError);
}

TEST_CASE("halving-doubling schedule") {
  const auto s = hd_steps(4, 1.0);
  REQUIRE(s.steps.size() == 4);
  CHECK(pairs_of(s.steps[0]) == std::set<std::pair<int, int>>{{0, 1}, {1, 0}, {2, 3}, {3, 2}});
  CHECK(pairs_of(s.steps[1]) == std::set<std::pair<int, int>>{{0, 2}, {2, 0}, {1, 3}, {3, 1}});
  for (int n : {2, 8, 16, 64}) CHECK(hd_steps(n, 1.0).steps.size() == 2 * std::countr_zero(unsigned(n)));
  // data halves every reduce-scatter step
  const auto h = hd_steps(8, 1.0);
  CHECK(h.steps[0].flows[0].bytes == doctest::Approx(0.5));
  CHECK(h.steps[1].flows[0].bytes == doctest::Approx(0.25));
  CHECK(h.steps[2].flows[0].bytes == doctest::Approx(0.125));

  const auto six = hd_steps(6, 1.0);
  CHECK(pairs_of(six.steps.front()) == std::set<std::pair<int, int>>{{0, 4}, {4, 0}, {1, 5}, {5, 1}});
  for (size_t i = 1; i + 1 < six.steps.size(); ++i)
    for (const Flow& f : six.steps[i].flows) CHECK((f.src < 4 && f.dst < 4));
  CHECK(pairs_of(six.steps.back()) == std::set<std::pair<int, int>>{{0, 4}, {1, 5}});
  CHECK(all_sums_exact(six));
  CHECK_THROWS_AS(hd_steps(1, 1.0), PatternError);
}

TEST_CASE("hierarchical ring schedule") {
  auto fabric_pairs = [](const CommSchedule& s, int t) {
    std::set<std::pair<int, int>> out;
    for (const auto& st : s.steps)
      for (const Flow& f : st.flows)
        if (f.src / t != f.dst / t) out.emplace(f.src, f.dst);
    return out;
  };
  CHECK(fabric_pairs(hierarchical_ring_steps(8, 4, 1.0), 4) == std::set<std::pair<int, int>>{{0, 4}, {4, 0}});
  CHECK(fabric_pairs(hierarchical_ring_steps(16, 4, 1.0), 4) ==
        std::set<std::pair<int, int>>{{0, 4}, {4, 8}, {8, 12}, {12, 0}});
  CHECK(fabric_pairs(hierarchical_ring_steps(4, 4, 1.0), 4).empty());
  CHECK_THROWS_AS(hierarchical_ring_steps(6, 4, 1.0), PatternError);
}

TEST_CASE("alltoall schedule") {
  const auto s = alltoall_steps(4, 4.0);
  REQUIRE(s.steps.size() == 3);
  CHECK(pairs_of(s.steps[0]) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  CHECK(pairs_of(s.steps[2]) == std::set<std::pair<int, int>>{{0, 3}, {1, 0}, {2, 1}, {3, 2}});
  for (const Flow& f : s.steps[1].flows) CHECK(f.bytes == doctest::Approx(1.0));
  for (int n = 2; n <= 33; ++n) {
    std::map<std::pair<int, int>, int> seen;
    for (const auto& st : alltoall_steps(n, 1.0).steps)
      for (const Flow& f : st.flows) ++seen[{f.src, f.dst}];
    CHECK(seen.size() == size_t(n) * (n - 1));
    for (const auto& [p, c] : seen) {
      CHECK(c == 1);
      CHECK(p.first != p.second);
    }
  }
}

TEST_CASE("pipeline schedule") {
  const auto s = pipeline_steps(3, 1.0);
  REQUIRE(s.steps.size() == 2);
  CHECK(pairs_of(s.steps[0]) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});
  CHECK(pairs_of(s.steps[1]) == std::set<std::pair<int, int>>{{2, 1}, {1, 0}});
  for (int n = 2; n <= 64; ++n)
    for (const auto& st : pipeline_steps(n, 1.0).steps) {
      std::map<int, int> out, in;
      for (const Flow& f : st.flows) CHECK((++out[f.src] == 1 && ++in[f.dst] == 1));
    }
}

TEST_CASE("double binary tree") {
  const auto two = double_binary_tree_steps(2, 1.0);
  REQUIRE(two.steps.size() == 2);
  for (const auto& st : two.steps) CHECK(st.flows.size() == 2);
  CHECK(double_binary_tree_steps(8, 1.0).steps[0].flows.size() == 14);
  CHECK(double_binary_tree_steps(8, 1.0).steps[1].flows.size() == 14);
  for (int n = 2; n <= 64; n += 2) {
    const auto s = double_binary_tree_steps(n, 1.0);
    // a rank with no child in a tree is a leaf of that tree
    std::vector<std::set<int>> parents(2);
    for (const Flow& f : s.steps[0].flows) parents[f.chunk_begin].insert(f.dst);
    for (int r = 0; r < n; ++r) {
      const int leaf_in = int(!parents[0].count(r)) + int(!parents[1].count(r));
      CHECK(leaf_in == 1);
    }
    // each tree spans all ranks with n-1 edges
    std::vector<int> edges(2);
    for (const Flow& f : s.steps[0].flows) ++edges[f.chunk_begin];
    CHECK(edges[0] == n - 1);
    CHECK(edges[1] == n - 1);
  }
}

TEST_CASE("allreduce schedules leave the full sum on every rank") {
  for (int n = 2; n <= 32; ++n) {
    INFO("n = " << n);
    CHECK(all_sums_exact(ring_steps(n, 1.0)));
    CHECK(all_sums_exact(hd_steps(n, 1.0)));
    for (int t : {1, 2, 4, 8})
      if (n % t == 0) CHECK(all_sums_exact(hierarchical_ring_steps(n, t, 1.0)));
  }
}

TEST_CASE("leaf-wise permutation check") {
  CHECK(is_leafwise_permutation(ring_steps(8, 1.0).steps[0], contiguous(8, 2)));
  // two jobs: GPUs 0 and 3 under leaf A, 1 and 2 under leaf B
  CommStep fig;
  fig.flows = {Flow{0, 1, 1.0}, Flow{3, 2, 1.0}};
  // each job numbers its ports from 0 on every leaf, so both flows leave
  // leaf A through port 0
  const std::vector<int> leaf = {0, 1, 1, 0};
  CHECK_FALSE(is_leafwise_permutation(fig, [&](int r) { return leaf[r]; }, [](int) { return 0; }));
  // with one job's contiguous numbering the same flows are fine
  CHECK(is_leafwise_permutation(fig, [&](int r) { return leaf[r]; }, [](int r) { return r == 3 ? 1 : 0; }));
  CommStep intra;
  intra.flows = {Flow{0, 1, 1.0}};
  CHECK(is_leafwise_permutation(intra, contiguous(2, 2)));
  CommStep fan;
  fan.flows = {Flow{0, 2, 1.0}, Flow{1, 2, 1.0}};
  CHECK_FALSE(is_leafwise_permutation(fan, contiguous(4, 2)));
  CHECK_THROWS_AS(is_leafwise_permutation(intra, std::vector<int>{0}), PatternError);
}

TEST_CASE("generated collectives are leaf-wise permutations") {
  for (int l : {2, 4, 8})
    for (int s = 1; s * l <= 64; ++s) {
      const int n = l * s;
      const auto leaf = contiguous(n, s);
      for (const auto& sched : {ring_steps(n, 1.0), alltoall_steps(n, 1.0), pipeline_steps(n, 1.0)})
        for (const auto& st : sched.steps) REQUIRE(is_leafwise_permutation(st, leaf));
    }
}

TEST_CASE("schedule export") {
  const std::string j = schedule_to_jsonl(ring_steps(3, 3.0));
  CHECK(std::count(j.begin(), j.end(), '\n') == 4);
  CHECK(parse_collective("All2All") == Collective::AlltoAll);
  CHECK(parse_collective("hierarchical-ring") == Collective::HierRing);
  CHECK_FALSE(parse_collective("bogus"));
}
