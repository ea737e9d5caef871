#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vclos/ilp.hpp"
#include "vclos/routing.hpp"
#include "vclos/topology.hpp"

namespace vclos {

struct JobRequest {
  JobId job_id = 0;
  int n = 1;
  double arrival_time = 0.0;
};

enum class PlacementStage : std::uint8_t {
  SingleServer,  // stage 0
  SingleLeaf,    // stage 1
  VClos,         // stage 2 ILP
  OcsLeafPair,   // OCS stage 2, direct leaf-leaf circuits
  OcsSpine,      // OCS stage 2, one spine
  OcsClos,       // OCS stage 3 ILP
  Locality,      // unreserved whole-server placement (baselines)
  Scattered,     // unreserved first-fit GPUs (OCS-Relax)
};
std::string_view to_string(PlacementStage s);

/// A job's allocation. gpus holds every reserved GPU in rank order (leaf-,
/// server-, port-major); the job runs its n ranks on the first n of them.
struct VirtualClos {
  JobId job_id = kNoJob;
  int n = 0;                 // requested ranks
  int n_reserved = 0;        // GPUs reserved (N' after rounding up)
  PlacementStage stage = PlacementStage::SingleServer;
  std::vector<GpuId> gpus;
  int l = 1;
  int s = 0;
  std::vector<int> l_n;      // virtual leaves per physical leaf
  std::vector<int> s_m;      // 0/1 per physical spine
  std::vector<int> r_n;      // servers per physical leaf
  std::vector<int> c;        // reserved links, [n * S + m]
  std::vector<SlotId> slots; // reserved link slots
  std::vector<OcsRewire> rewire_plan;
  // per virtual leaf: physical leaf, then the slot to each of its spines
  // in ascending spine order
  std::vector<int> vleaf_leaf;
  std::vector<std::vector<SlotId>> vleaf_slots;
  std::int64_t objective = 0;

  Reservation reservation() const;
  nlohmann::json to_json() const;
};

struct PlacementStats {
  long ilp_solves = 0;
  long ilp_timeouts = 0;
  long ilp_nodes = 0;
};

struct PlacementOptions {
  double ilp_time_budget = 10.0;
};

/// Smallest N' >= n that is a multiple of T and has a valid (l, s) in the
/// doubling sequence, or nullopt when n exceeds what the fabric can tile.
std::optional<int> normalize_gpu_count(int n, const ClusterConfig& c);
/// The (l, s) pairs tried for N' in order (l = 1 excluded).
std::vector<std::pair<int, int>> vclos_shapes(int n_norm, const ClusterConfig& c);

std::optional<VirtualClos> stage0_single_server(const JobRequest& req, const PhysicalCluster& c);
std::optional<VirtualClos> stage1_single_leaf(const JobRequest& req, const PhysicalCluster& c);

/// vClos ILP for one (l, s). Exposed for tests.
IntegerProgram build_vclos_ilp(const PhysicalCluster& c, int l, int s);
std::optional<VirtualClos> find_vclos(const JobRequest& req, const PhysicalCluster& c,
                                      const PlacementOptions& opt = {}, PlacementStats* stats = nullptr);

std::optional<VirtualClos> ocs_leaf_pair(const JobRequest& req, const PhysicalCluster& c);
std::optional<VirtualClos> ocs_stage2_single_spine(const JobRequest& req, const PhysicalCluster& c);

/// OCS-vClos ILP for one (l, s); var_map receives the index layout.
struct OcsIlpLayout {
  std::vector<std::vector<int>> leaf_var;   // [n][a] -> var
  std::vector<int> spine_var;               // [m] -> var (-1 if unusable)
  std::vector<int> server_var;              // [n] -> var
  std::vector<std::tuple<int, int, int, int>> link_vars;  // (var, n, m, k)
};
IntegerProgram build_ocs_ilp(const PhysicalCluster& c, int l, int s, OcsIlpLayout* layout = nullptr);
std::optional<VirtualClos> ocs_find_clos(const JobRequest& req, const PhysicalCluster& c,
                                         const PlacementOptions& opt = {}, PlacementStats* stats = nullptr);

/// Whole idle servers, best-fit server / fewest-idle leaf first, otherwise
/// servers from the leaves with most idle servers. No links reserved.
std::optional<VirtualClos> locality_placement(const JobRequest& req, const PhysicalCluster& c);
/// First-fit idle GPUs in index order; no locality, no links.
std::optional<VirtualClos> scattered_placement(const JobRequest& req, const PhysicalCluster& c);

/// Escalating stage sequences.
std::optional<VirtualClos> place_vclos(const JobRequest& req, const PhysicalCluster& c,
                                       const PlacementOptions& opt = {}, PlacementStats* stats = nullptr);
std::optional<VirtualClos> place_ocs_vclos(const JobRequest& req, const PhysicalCluster& c,
                                           const PlacementOptions& opt = {},
                                           PlacementStats* stats = nullptr);

/// Applies the rewire plan, then reserves. Returns the rewire delay.
double commit(PhysicalCluster& c, const VirtualClos& vc);

/// Routing table for the first `ranks` ranks. `map` permutes each virtual
/// leaf's spines (empty = identity); only reserved placements use links.
RoutingTable build_routing_table(const VirtualClos& vc, const PhysicalCluster& c, int ranks,
                                 const SourceRoutingMap& map = {});

/// Checks every structural invariant of a committed allocation against the
/// cluster. Returns an empty string when all hold, else the first violation.
std::string check_invariants(const VirtualClos& vc, const PhysicalCluster& c);

}  // namespace vclos
