#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vclos/placement.hpp"

using namespace vclos;

namespace {

ClusterConfig micro(int K = 0) { return ClusterConfig{4, 8, 4, 1, K, 0.05}; }

// blocker job that holds the given GPUs and slots
void block(PhysicalCluster& c, std::vector<GpuId> gpus, std::vector<SlotId> slots = {}, JobId id = 500) {
  c.reserve(Reservation{id, std::move(gpus), std::move(slots)});
}

std::vector<GpuId> server_gpus(const PhysicalCluster& c, int server) {
  std::vector<GpuId> g;
  for (int i = 0; i < c.config().gpus_per_server; ++i) g.push_back(c.first_gpu_of_server(server) + i);
  return g;
}

std::string commit_and_check(PhysicalCluster c, const VirtualClos& vc) {
  commit(c, vc);
  return check_invariants(vc, c);
}

}  // namespace

TEST_CASE("size rounding and shape sequence") {
  const ClusterConfig c{8, 64, 8, 1, 0, 0.05};
  CHECK(normalize_gpu_count(4, c) == 4);
  CHECK(normalize_gpu_count(64, c) == 64);
  CHECK(normalize_gpu_count(24, c) == 32);  // 24 = 2 x 12 breaks whole servers
  CHECK(normalize_gpu_count(100, c) == 112);
  CHECK(normalize_gpu_count(513, c) == std::nullopt);
  CHECK(vclos_shapes(16, ClusterConfig{4, 8, 8, 1, 0, 0.05}) == std::vector<std::pair<int, int>>{{2, 8}});
  CHECK(vclos_shapes(128, c) == std::vector<std::pair<int, int>>{{2, 64}, {4, 32}, {8, 16}});
  CHECK(vclos_shapes(96, c) == std::vector<std::pair<int, int>>{{2, 48}, {4, 24}});
}

TEST_CASE("stage 0 picks the best-fit server") {
  PhysicalCluster c(ClusterConfig{1, 12, 4, 1, 0, 0.05});
  // idle GPUs per server: 4, 2, 3
  block(c, {4, 5, 8});
  auto vc = stage0_single_server(JobRequest{1, 2, 0}, c);
  REQUIRE(vc);
  CHECK(vc->gpus == std::vector<GpuId>{6, 7});
  CHECK(vc->slots.empty());
  CHECK(commit_and_check(c, *vc).empty());

  PhysicalCluster empty(micro());
  auto whole = stage0_single_server(JobRequest{2, 4, 0}, empty);
  REQUIRE(whole);
  CHECK(whole->gpus == std::vector<GpuId>{0, 1, 2, 3});

  PhysicalCluster full(micro());
  std::vector<GpuId> all(32);
  std::iota(all.begin(), all.end(), 0);
  block(full, all);
  CHECK_FALSE(stage0_single_server(JobRequest{3, 1, 0}, full));
}

TEST_CASE("stage 1 picks the leaf with the fewest idle servers") {
  PhysicalCluster c(ClusterConfig{3, 24, 4, 1, 0, 0.05});
  // idle servers per leaf: 6, 4, 5
  std::vector<GpuId> g;
  for (int sv : {6 + 0, 6 + 1, 12 + 0}) {
    auto s = server_gpus(c, sv);
    g.insert(g.end(), s.begin(), s.end());
  }
  block(c, g);
  REQUIRE(c.idle_servers(0) == 6);
  REQUIRE(c.idle_servers(1) == 4);
  REQUIRE(c.idle_servers(2) == 5);
  auto vc = stage1_single_leaf(JobRequest{1, 16, 0}, c);
  REQUIRE(vc);
  for (GpuId x : vc->gpus) CHECK(c.leaf_of_gpu(x) == 1);
  CHECK(vc->gpus.front() == 8 * 4);  // lowest idle server of leaf 1
  CHECK(commit_and_check(c, *vc).empty());

  PhysicalCluster empty(micro());
  auto leaf = stage1_single_leaf(JobRequest{2, 8, 0}, empty);
  REQUIRE(leaf);
  CHECK(leaf->gpus == std::vector<GpuId>{0, 1, 2, 3, 4, 5, 6, 7});

  PhysicalCluster frag(micro());
  block(frag, server_gpus(frag, 0));
  block(frag, server_gpus(frag, 2), {}, 501);
  block(frag, server_gpus(frag, 4), {}, 502);
  block(frag, server_gpus(frag, 6), {}, 503);
  CHECK_FALSE(stage1_single_leaf(JobRequest{3, 8, 0}, frag));
}

TEST_CASE("vClos on an empty micro cluster") {
  PhysicalCluster c(ClusterConfig{4, 8, 8, 1, 0, 0.05});
  auto vc = find_vclos(JobRequest{1, 16, 0}, c);
  REQUIRE(vc);
  CHECK(vc->l == 2);
  CHECK(vc->s == 8);
  CHECK(vc->gpus.size() == 16);
  int spines = 0;
  for (int m = 0; m < 8; ++m) spines += vc->s_m[m];
  CHECK(spines == 8);
  CHECK(vc->slots.size() == 16);
  CHECK(commit_and_check(c, *vc).empty());
  const auto want = oracle::vclos(c, 16);
  CHECK(want.found);
  CHECK(vc->objective == want.cost);
}

TEST_CASE("vClos objective prefers the tighter leaf") {
  // leaves with 1 and 3 idle servers can both host s=4, the one with fewer
  // idle servers is cheaper
  PhysicalCluster c(ClusterConfig{4, 16, 4, 1, 0, 0.05});
  std::vector<GpuId> g;
  for (int sv : {0, 1, 2, 4, 8, 9, 10, 12, 13, 14}) {
    auto s = server_gpus(c, sv);
    g.insert(g.end(), s.begin(), s.end());
  }
  block(c, g);
  auto vc = find_vclos(JobRequest{1, 32, 0}, c);
  const auto want = oracle::vclos(c, 32);
  REQUIRE(vc.has_value() == want.found);
  if (vc) {
    CHECK(vc->objective == want.cost);
    CHECK(commit_and_check(c, *vc).empty());
  }
}

TEST_CASE("vClos matches enumeration on random occupancy") {
  std::mt19937_64 rng(3);
  for (int state = 0; state < 60; ++state) {
    PhysicalCluster c(micro());
    oracle::scramble(c, rng, 0.35, 0.15);
    for (int n = 4; n <= 16; ++n) {
      auto vc = find_vclos(JobRequest{1, n, 0}, c);
      const auto want = oracle::vclos(c, n);
      INFO("state " << state << " n " << n);
      REQUIRE(vc.has_value() == want.found);
      if (!vc) continue;
      CHECK(vc->objective == want.cost);
      CHECK(vc->l == want.l);
      CHECK(commit_and_check(c, *vc) == "");
    }
  }
}

TEST_CASE("OCS ILP matches enumeration on random occupancy") {
  std::mt19937_64 rng(5);
  for (int state = 0; state < 60; ++state) {
    PhysicalCluster c(micro(2 + state % 2));
    oracle::scramble(c, rng, 0.35, 0.15);
    for (int n = 4; n <= 16; ++n) {
      auto vc = ocs_find_clos(JobRequest{1, n, 0}, c);
      const auto want = oracle::ocs(c, n);
      INFO("state " << state << " n " << n);
      REQUIRE(vc.has_value() == want.found);
      if (!vc) continue;
      CHECK(vc->objective == want.cost);
      CHECK(commit_and_check(c, *vc) == "");
    }
  }
}

TEST_CASE("OCS ILP rewires idle links to build a Clos plain vClos cannot") {
  PhysicalCluster c(micro(2));
  // leaf 0 keeps links to spines 0-3 only, leaf 1 to spines 4-7 only, and
  // leaves 2 and 3 have no idle server
  std::vector<SlotId> slots;
  for (int m = 4; m < 8; ++m) slots.push_back(0 * 8 + m);
  for (int m = 0; m < 4; ++m) slots.push_back(1 * 8 + m);
  std::vector<GpuId> g;
  for (int sv : {1, 3, 4, 5, 6, 7}) {
    auto s = server_gpus(c, sv);
    g.insert(g.end(), s.begin(), s.end());
  }
  block(c, g, slots);
  CHECK_FALSE(find_vclos(JobRequest{1, 8, 0}, c));
  auto vc = ocs_find_clos(JobRequest{1, 8, 0}, c);
  REQUIRE(vc);
  CHECK_FALSE(vc->rewire_plan.empty());
  for (const OcsRewire& r : vc->rewire_plan)
    for (const RewireMove& mv : r.moves) CHECK(c.slot_owner(mv.slot) == kNoJob);
  CHECK(vc->objective == oracle::ocs(c, 8).cost);
  PhysicalCluster after = c;
  CHECK(commit(after, *vc) == doctest::Approx(0.05));
  CHECK(check_invariants(*vc, after) == "");
}

TEST_CASE("OCS is unavailable without an OCS layer") {
  PhysicalCluster c(micro(0));
  CHECK_FALSE(ocs_find_clos(JobRequest{1, 8, 0}, c));
  CHECK_FALSE(ocs_leaf_pair(JobRequest{1, 8, 0}, c));
  CHECK_FALSE(ocs_stage2_single_spine(JobRequest{1, 8, 0}, c));
}

TEST_CASE("two-leaf job is wired leaf to leaf without spine ports") {
  PhysicalCluster c(micro(2));
  std::vector<GpuId> g;
  for (int sv : {0, 2, 4, 6}) {
    auto s = server_gpus(c, sv);
    g.insert(g.end(), s.begin(), s.end());
  }
  block(c, g);
  std::vector<int> before(8);
  for (int m = 0; m < 8; ++m) before[m] = c.spine_free_ports(m);
  auto vc = place_ocs_vclos(JobRequest{1, 8, 0}, c);
  REQUIRE(vc);
  CHECK(vc->stage == PlacementStage::OcsLeafPair);
  CHECK(vc->vleaf_leaf == std::vector<int>{0, 1});
  commit(c, *vc);
  CHECK(check_invariants(*vc, c) == "");
  for (int m = 0; m < 8; ++m) CHECK(c.spine_free_ports(m) == before[m]);
  for (SlotId s : vc->vleaf_slots[0]) CHECK(c.slot_peer(s).kind == Peer::Kind::Leaf);
}

TEST_CASE("leaf pairing never touches a reserved link") {
  PhysicalCluster c(micro(2));
  std::vector<GpuId> g;
  for (int sv : {0, 2, 4, 6}) {
    auto s = server_gpus(c, sv);
    g.insert(g.end(), s.begin(), s.end());
  }
  // every uplink of leaf 0 but one is held by a running job
  std::vector<SlotId> slots;
  for (int u = 1; u < 8; ++u) slots.push_back(u);
  block(c, g, slots);
  auto vc = ocs_leaf_pair(JobRequest{1, 8, 0}, c);
  REQUIRE(vc);
  CHECK(vc->vleaf_leaf[0] != 0);
  for (const OcsRewire& r : vc->rewire_plan)
    for (const RewireMove& mv : r.moves) CHECK(c.slot_owner(mv.slot) == kNoJob);
}

TEST_CASE("single spine stage takes the spine with least but enough ports") {
  // 16 leaves of one 4-GPU server, two links per leaf-spine pair; spines
  // left with 32, 16, 8 and 0 free ports
  PhysicalCluster c(ClusterConfig{16, 4, 4, 2, 3, 0.05});
  std::vector<SlotId> slots;
  for (int j = 0; j < 2; ++j) {
    for (int n = 8; n < 16; ++n) slots.push_back(n * 8 + 1 * 2 + j);
    for (int n = 4; n < 16; ++n) slots.push_back(n * 8 + 2 * 2 + j);
    for (int n = 0; n < 16; ++n) slots.push_back(n * 8 + 3 * 2 + j);
  }
  block(c, {}, slots);
  REQUIRE(c.spine_free_ports(0) == 32);
  REQUIRE(c.spine_free_ports(1) == 16);
  REQUIRE(c.spine_free_ports(2) == 8);
  auto vc = ocs_stage2_single_spine(JobRequest{1, 16, 0}, c);
  REQUIRE(vc);
  CHECK(vc->s_m[1] == 1);
  CHECK(vc->gpus.size() == 16);
  commit(c, *vc);
  CHECK(check_invariants(*vc, c) == "");
  CHECK(c.spine_free_ports(1) == 0);

  // nothing with 64 free ports
  CHECK_FALSE(ocs_stage2_single_spine(JobRequest{2, 64, 0}, c));
}

TEST_CASE("stage precedence") {
  PhysicalCluster c(micro(2));
  auto a = place_ocs_vclos(JobRequest{1, 3, 0}, c);
  REQUIRE(a);
  CHECK(a->stage == PlacementStage::SingleServer);
  auto b = place_vclos(JobRequest{2, 8, 0}, c);
  REQUIRE(b);
  CHECK(b->stage == PlacementStage::SingleLeaf);
  // a small job never spills over servers, even when GPUs are idle elsewhere
  PhysicalCluster d(micro());
  std::vector<GpuId> g;
  for (int sv = 0; sv < 8; ++sv) g.push_back(sv * 4);
  block(d, g);
  CHECK_FALSE(place_vclos(JobRequest{3, 4, 0}, d));
  CHECK(place_vclos(JobRequest{3, 3, 0}, d));
}

TEST_CASE("concurrent allocations hold disjoint links") {
  std::mt19937_64 rng(9);
  for (int K : {0, 4}) {
    PhysicalCluster c(ClusterConfig{8, 16, 4, 1, K, 0.05});
    std::map<JobId, VirtualClos> live;
    for (int i = 0; i < 300; ++i) {
      if (!live.empty() && rng() % 3 == 0) {
        auto it = live.begin();
        std::advance(it, rng() % live.size());
        c.release(it->first);
        live.erase(it);
      }
      const int sizes[] = {2, 4, 8, 16, 32, 64};
      JobRequest r{i, sizes[rng() % 6], 0};
      auto vc = K ? place_ocs_vclos(r, c) : place_vclos(r, c);
      if (!vc) continue;
      commit(c, *vc);
      REQUIRE(check_invariants(*vc, c) == "");
      live[i] = *vc;
      std::set<SlotId> seen;
      for (auto& [id, v] : live)
        for (SlotId s : v.slots) REQUIRE(seen.insert(s).second);
    }
  }
}

TEST_CASE("routing table follows the virtual leaves") {
  PhysicalCluster c(ClusterConfig{4, 8, 4, 1, 0, 0.05});
  auto vc = find_vclos(JobRequest{1, 16, 0}, c);
  REQUIRE(vc);
  commit(c, *vc);
  const RoutingTable t = build_routing_table(*vc, c, 16);
  for (int r = 0; r < 16; ++r) {
    CHECK(t.vleaf[r] == r / vc->s);
    CHECK(c.slot_leaf(t.uplink[r]) == c.leaf_of_gpu(t.gpus[r]));
  }
  const auto ring = ring_steps(16, 1.0);
  for (const auto& st : ring.steps) CHECK(source_route(st, t, c).max_load() <= 1);
  CHECK_THROWS_AS(build_routing_table(*vc, c, 17), RoutingError);
}

TEST_CASE("allocation json carries the plan") {
  PhysicalCluster c(micro(2));
  auto vc = place_ocs_vclos(JobRequest{7, 8, 0}, c);
  REQUIRE(vc);
  const auto j = vc->to_json();
  CHECK(j["job_id"] == 7);
  CHECK(j["gpus"].size() == 8);
  CHECK(j.contains("rewire_plan"));
}
