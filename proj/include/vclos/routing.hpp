#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vclos/patterns.hpp"
#include "vclos/topology.hpp"

namespace vclos {

std::uint32_t murmur3_32(const void* data, std::size_t len, std::uint32_t seed = 0);

struct FiveTuple {
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 4791;  // RoCEv2
  std::uint8_t protocol = 17;
};

/// 10.<leaf>.<server on leaf>.<gpu on server>
std::uint32_t gpu_ip(const ClusterConfig& c, GpuId g);
/// Hash of the 13-byte big-endian serialization.
std::uint32_t hash_tuple(const FiveTuple& t);

/// Fabric path of one flow. Intra-leaf flows have no links; a cross-leaf
/// flow uses one spine (up + down), or a single direct leaf-to-leaf circuit.
struct Route {
  GpuId src = -1;
  GpuId dst = -1;
  int src_leaf = -1;
  int dst_leaf = -1;
  int spine = -1;
  LinkId up = -1;
  LinkId down = -1;
  bool intra_server = false;

  bool crosses_fabric() const { return up >= 0; }
};

struct RouteAssignment {
  std::vector<Route> routes;
  std::vector<int> link_count;  // flows per directed link

  int max_load() const;
  /// links[c] = number of directed links carrying exactly c flows (c >= 1).
  std::map<int, int> link_histogram() const;
  /// flows[c] = number of flows whose most loaded link carries c flows.
  std::map<int, int> flow_histogram() const;
  /// Human-readable witness of the most loaded link, or "" if max <= 1.
  std::string witness(const PhysicalCluster& cluster) const;
};

/// Per-leaf bijection from server-facing port to uplink index
/// (0 .. uplinks_per_leaf-1). Empty means identity-with-stride: port p uses
/// the first link to spine p.
struct SourceRoutingMap {
  std::vector<std::vector<int>> f;  // [leaf][port]
  bool valid_for(const ClusterConfig& c) const;
};

/// Per-job routing table built from a reservation. uplink[r] is the slot rank
/// r sends cross-leaf traffic on; downlinks are looked up by (virtual leaf,
/// spine). Ranks on the same physical leaf bypass the fabric.
struct RoutingTable {
  std::vector<GpuId> gpus;                          // rank -> gpu
  std::vector<SlotId> uplink;                       // rank -> slot or -1
  std::vector<int> vleaf;                           // rank -> virtual leaf
  std::vector<std::map<int, SlotId>> spine_slot;    // vleaf -> spine -> slot
};

class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source Routing over a whole physical fabric. rank_to_gpu maps step ranks.
RouteAssignment source_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                             const PhysicalCluster& cluster, const SourceRoutingMap& map = {});
/// Source Routing through a job's reserved links.
RouteAssignment source_route(const CommStep& step, const RoutingTable& table,
                             const PhysicalCluster& cluster);

/// ECMP: uplink = murmur3(5-tuple) mod uplinks. The source port of every
/// flow is drawn from rng.
RouteAssignment ecmp_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                           const PhysicalCluster& cluster, std::mt19937_64& rng);

/// Balanced ECMP: flows in shuffled order, each on a uniformly random uplink
/// among the least loaded ones of its leaf (background load included).
RouteAssignment balanced_ecmp_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                                    const PhysicalCluster& cluster,
                                    std::span<const int> background_load, std::mt19937_64& rng);

/// Worst link over every step of a schedule routed with Source Routing.
struct ScheduleCheck {
  int max_load = 0;
  int worst_step = -1;  // first step reaching max_load
  long cross_flows = 0;
  std::string witness;  // empty when max_load <= 1
};
ScheduleCheck check_schedule(const CommSchedule& s, std::span<const GpuId> rank_to_gpu,
                             const PhysicalCluster& cluster, const SourceRoutingMap& map = {});

/// Searches per-leaf port maps that make every step of a single-job schedule
/// contention-free on an l x s sub-fabric with contiguous ranks. Returns an
/// empty map when identity already works or when the search fails.
struct SrSearchResult {
  bool contention_free = false;
  bool exhausted = false;  // search space fully explored without a solution
  long nodes = 0;
  SourceRoutingMap map;  // empty = identity
};
SrSearchResult find_source_routing(const CommSchedule& s, int leaves, int spines,
                                   long node_limit = 200000);

struct ContentionSample {
  long flows = 0;
  long contended_flows = 0;       // flows sharing at least one link
  long flows_at_least6 = 0;       // flows on a link carrying >= 6 flows
  long trials_with_contention = 0;
  long trials = 0;
  std::map<int, long> link_histogram;  // load -> directed links
};

struct MonteCarloScale {
  int gpus = 0;
  int leaves = 0;
  int spines = 0;
};

/// Standard shape for a cluster size used by the collision experiment.
MonteCarloScale monte_carlo_shape(int gpus);

/// Each trial draws a random leaf derangement; every GPU sends to the GPU
/// with the same port on its partner leaf, hashed by ECMP.
ContentionSample collision_monte_carlo(const MonteCarloScale& scale, long trials,
                                       std::uint64_t seed);

/// k flows from k distinct GPUs of leaf 0 to leaf 1 on a 2 x k fabric; the
/// fraction of trials in which two flows share an uplink.
double ecmp_birthday_trial(int k, long trials, std::uint64_t seed);

}  // namespace vclos
