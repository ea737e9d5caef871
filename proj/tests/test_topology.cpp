#include <random>

#include "doctest.h"
#include "vclos/topology.hpp"

using namespace vclos;

TEST_CASE("cluster construction") {
  PhysicalCluster a(ClusterConfig{4, 8, 4, 1, 0, 0.05});
  CHECK(a.config().total_gpus() == 32);
  CHECK(a.config().total_servers() == 8);
  CHECK(a.config().total_slots() == 32);
  CHECK(a.idle_gpus() == 32);
  for (int n = 0; n < 4; ++n)
    for (int m = 0; m < 8; ++m) CHECK(a.free_links(n, m) == 1);

  PhysicalCluster big(ClusterConfig{32, 64, 8, 1, 0, 0.05});
  CHECK(big.config().total_gpus() == 2048);

  CHECK_THROWS_AS(PhysicalCluster(ClusterConfig{2, 4, 8, 1, 0, 0.05}), ConfigError);
  CHECK_THROWS_AS(PhysicalCluster(ClusterConfig{0, 4, 4, 1, 0, 0.05}), ConfigError);
  CHECK_THROWS_AS(PhysicalCluster(ClusterConfig{2, 4, 4, 0, 0, 0.05}), ConfigError);
  CHECK_THROWS_AS(PhysicalCluster(ClusterConfig{2, 4, 4, 1, -1, 0.05}), ConfigError);
  try {
    PhysicalCluster(ClusterConfig{2, 4, 8, 1, 0, 0.05});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("spines mod gpus_per_server") != std::string::npos);
  }
}

TEST_CASE("indexing helpers") {
  PhysicalCluster c(ClusterConfig{4, 8, 4, 2, 3, 0.05});
  CHECK(c.leaf_of_gpu(13) == 1);
  CHECK(c.port_of_gpu(13) == 5);
  CHECK(c.server_of_gpu(13) == 3);
  CHECK(c.leaf_of_server(3) == 1);
  CHECK(c.slot_leaf(17) == 1);
  for (SlotId s = 0; s < c.config().total_slots(); ++s) {
    CHECK(c.slot_ocs(s) == s % 3);
    CHECK(link_slot(up_link(s)) == s);
    CHECK(link_slot(down_link(s)) == s);
    CHECK(link_is_up(up_link(s)));
    CHECK_FALSE(link_is_up(down_link(s)));
  }
  // every physical link sits in exactly one OCS
  int total = 0;
  for (int k = 0; k < 3; ++k)
    for (int n = 0; n < 4; ++n) total += c.leaf_ports(n, k);
  CHECK(total == c.config().total_slots());
  for (int n = 0; n < 4; ++n)
    for (int m = 0; m < 8; ++m) {
      int sum = 0;
      for (int k = 0; k < 3; ++k) sum += c.free_links(k, n, m);
      CHECK(sum == 2);
      CHECK(c.free_links(n, m) == 2);
      CHECK(c.slots_to_spine(n, m).size() == 2);
    }
}

TEST_CASE("reserve and release") {
  PhysicalCluster c(ClusterConfig{4, 8, 4, 1, 0, 0.05});
  const PhysicalCluster before = c;
  const Reservation r{1, {0, 1, 2, 3}, {0, 9}};
  c.reserve(r);
  CHECK(c.idle_servers(0) == 1);
  CHECK(c.idle_gpus() == 28);
  CHECK(c.free_links(0, 0) == 0);
  CHECK(c.free_links(1, 1) == 0);
  CHECK(c.spine_free_ports(0) == 3);
  CHECK(c.gpu_owner(2) == 1);
  CHECK(c.slot_owner(9) == 1);
  CHECK(c.holds(1));

  // a second reservation touching a held GPU changes nothing
  const PhysicalCluster mid = c;
  CHECK_THROWS_AS(c.reserve(Reservation{2, {4, 3}, {}}), ReservationError);
  CHECK(c == mid);
  CHECK_THROWS_AS(c.reserve(Reservation{2, {4}, {1, 9}}), ReservationError);
  CHECK(c == mid);
  CHECK_THROWS_AS(c.reserve(r), ReservationError);
  CHECK(c == mid);
  CHECK_THROWS_AS(c.reserve(Reservation{3, {5, 5}, {}}), ReservationError);
  CHECK(c == mid);

  c.release(1);
  CHECK(c.idle_gpus() == 32);
  CHECK(c.snapshot() == before.snapshot());
  CHECK_THROWS_AS(c.release(1), ReservationError);
  CHECK_THROWS_AS(c.release(77), ReservationError);
}

TEST_CASE("OCS rewire moves one free link between spines") {
  PhysicalCluster c(ClusterConfig{2, 4, 4, 1, 1, 0.05});
  // leaf 0's spine-0 link becomes a spine-1 link; leaf 1 frees a spine-1 port
  const RewireMove mv[] = {{0 * 4 + 0, Peer::spine(1)}, {1 * 4 + 1, Peer::spine(0)}};
  CHECK(c.rewire_ocs(0, mv) == doctest::Approx(0.05));
  CHECK(c.free_links(0, 0, 0) == 0);
  CHECK(c.free_links(0, 0, 1) == 2);
  CHECK(c.free_links(0, 1, 0) == 2);
  CHECK(c.free_links(0, 1, 1) == 0);
  CHECK(c.spine_free_ports(0) == 2);
  CHECK(c.rewire_ocs(0, {}) == 0.0);

  // rewiring persists past release
  c.reserve(Reservation{1, {}, {0}});
  c.release(1);
  CHECK(c.slot_peer(0) == Peer::spine(1));
}

TEST_CASE("OCS rewire never touches reserved links and is atomic") {
  PhysicalCluster c(ClusterConfig{2, 4, 4, 1, 1, 0.05});
  c.reserve(Reservation{1, {}, {5}});
  const PhysicalCluster before = c;
  const RewireMove busy[] = {{0, Peer::dark()}, {5, Peer::dark()}};
  CHECK_THROWS_AS(c.rewire_ocs(0, busy), ReservationError);
  CHECK(c == before);
  // spine 1 has no spare port on the OCS
  const RewireMove over[] = {{0, Peer::spine(1)}};
  CHECK_THROWS_AS(c.rewire_ocs(0, over), ReservationError);
  CHECK(c == before);
  // pairing with a reserved slot
  const RewireMove pair[] = {{0, Peer::leaf_slot(5)}};
  CHECK_THROWS_AS(c.rewire_ocs(0, pair), ReservationError);
  CHECK(c == before);

  PhysicalCluster flat(ClusterConfig{2, 4, 4, 1, 0, 0.05});
  const RewireMove one[] = {{0, Peer::dark()}};
  CHECK_THROWS_AS(flat.rewire_ocs(0, one), ReservationError);
}

TEST_CASE("OCS swap pair and leaf-to-leaf circuits") {
  PhysicalCluster c(ClusterConfig{2, 4, 4, 1, 2, 0.05});
  // slots 0 and 4 share OCS 0; a direct circuit consumes no spine port
  REQUIRE(c.slot_ocs(0) == c.slot_ocs(4));
  const RewireMove mv[] = {{0, Peer::leaf_slot(4)}};
  c.rewire_ocs(0, mv);
  CHECK(c.slot_peer(0) == Peer::leaf_slot(4));
  CHECK(c.slot_peer(4) == Peer::leaf_slot(0));
  CHECK(c.spine_free_ports(0) == 2);  // ports stay free, just unwired
  CHECK(c.free_links(0, 0) == 0);
  // re-pointing one end darkens its partner
  const RewireMove back[] = {{0, Peer::spine(0)}};
  c.rewire_ocs(0, back);
  CHECK(c.slot_peer(4) == Peer::dark());
  CHECK(c.slot_peer(0) == Peer::spine(0));
}

TEST_CASE("conservation under random operations") {
  std::mt19937_64 rng(11);
  PhysicalCluster c(ClusterConfig{4, 8, 4, 2, 3, 0.05});
  const auto& cfg = c.config();
  std::vector<JobId> live;
  for (int it = 0; it < 2000; ++it) {
    const int op = static_cast<int>(rng() % 3);
    if (op == 0) {
      Reservation r{it, {}, {}};
      for (int i = 0; i < 3; ++i) r.gpus.push_back(static_cast<int>(rng() % cfg.total_gpus()));
      for (int i = 0; i < 3; ++i) r.slots.push_back(static_cast<int>(rng() % cfg.total_slots()));
      std::sort(r.gpus.begin(), r.gpus.end());
      r.gpus.erase(std::unique(r.gpus.begin(), r.gpus.end()), r.gpus.end());
      std::sort(r.slots.begin(), r.slots.end());
      r.slots.erase(std::unique(r.slots.begin(), r.slots.end()), r.slots.end());
      const PhysicalCluster before = c;
      try {
        c.reserve(r);
        live.push_back(it);
      } catch (const ReservationError&) {
        CHECK(c == before);
      }
    } else if (op == 1 && !live.empty()) {
      const size_t i = rng() % live.size();
      c.release(live[i]);
      live.erase(live.begin() + static_cast<long>(i));
    } else {
      const SlotId s = static_cast<int>(rng() % cfg.total_slots());
      const RewireMove mv{s, Peer::spine(static_cast<int>(rng() % cfg.spines))};
      const PhysicalCluster before = c;
      try {
        c.rewire_ocs(c.slot_ocs(s), std::span<const RewireMove>(&mv, 1));
      } catch (const ReservationError&) {
        CHECK(c == before);
      }
    }
    // reserved + free slots per OCS equal the build-time port count
    for (int k = 0; k < cfg.ocs_count; ++k)
      for (int n = 0; n < cfg.leaves; ++n) {
        int reserved = 0;
        for (SlotId s : c.leaf_slots_in_ocs(n, k)) reserved += c.slot_owner(s) != kNoJob;
        REQUIRE(c.free_leaf_ports(n, k) + reserved == c.leaf_ports(n, k));
      }
    for (int m = 0; m < cfg.spines; ++m)
      for (int k = 0; k < cfg.ocs_count; ++k) REQUIRE(c.free_spine_ports(m, k) <= c.spine_ports(m, k));
    for (int n = 0; n < cfg.leaves; ++n)
      for (int m = 0; m < cfg.spines; ++m) REQUIRE(c.free_links(n, m) >= 0);
  }
}

TEST_CASE("snapshot lists state") {
  PhysicalCluster c(ClusterConfig{2, 4, 4, 1, 0, 0.05});
  c.reserve(Reservation{3, {0, 1}, {2}});
  const auto j = c.snapshot();
  CHECK(j["config"]["leaves"] == 2);
  CHECK(j.dump().find("\"job\"") != std::string::npos);
}
