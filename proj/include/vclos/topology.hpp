#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace vclos {

using GpuId = int;
using JobId = int;
using SlotId = int;  // leaf-side uplink port, globally numbered
using LinkId = int;  // directed fabric link, see up_link()/down_link()

constexpr JobId kNoJob = -1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ReservationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClusterConfig {
  int leaves = 0;
  int spines = 0;
  int gpus_per_server = 0;
  int links_per_pair = 1;
  int ocs_count = 0;
  double ocs_rewire_delay = 0.05;

  int total_gpus() const { return leaves * spines; }
  int servers_per_leaf() const { return spines / gpus_per_server; }
  int total_servers() const { return leaves * servers_per_leaf(); }
  int uplinks_per_leaf() const { return spines * links_per_pair; }
  int total_slots() const { return leaves * uplinks_per_leaf(); }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  bool operator==(const ClusterConfig&) const = default;
};

/// What the far end of a leaf uplink is plugged into. Without an OCS layer
/// every slot is permanently wired to one spine; with one, idle slots can be
/// re-pointed to another spine, to another leaf's slot, or left dark.
struct Peer {
  enum class Kind : std::uint8_t { Dark, Spine, Leaf };
  Kind kind = Kind::Dark;
  int index = -1;  // spine id or peer slot id

  static Peer spine(int m) { return {Kind::Spine, m}; }
  static Peer leaf_slot(SlotId s) { return {Kind::Leaf, s}; }
  static Peer dark() { return {}; }
  bool is_spine() const { return kind == Kind::Spine; }
  bool operator==(const Peer&) const = default;
};

struct RewireMove {
  SlotId slot = -1;
  Peer new_peer;
  bool operator==(const RewireMove&) const = default;
};

struct OcsRewire {
  int ocs = -1;
  std::vector<RewireMove> moves;
  bool operator==(const OcsRewire&) const = default;
};

/// Resources held by one job. Placement builds these; the cluster only
/// checks availability and bookkeeping.
struct Reservation {
  JobId job = kNoJob;
  std::vector<GpuId> gpus;
  std::vector<SlotId> slots;
};

inline LinkId up_link(SlotId s) { return 2 * s; }
inline LinkId down_link(SlotId s) { return 2 * s + 1; }
inline SlotId link_slot(LinkId l) { return l / 2; }
inline bool link_is_up(LinkId l) { return (l & 1) == 0; }

class PhysicalCluster {
 public:
  explicit PhysicalCluster(const ClusterConfig& config);

  const ClusterConfig& config() const { return config_; }
  bool has_ocs() const { return config_.ocs_count > 0; }

  // geometry
  int leaf_of_gpu(GpuId g) const { return g / config_.spines; }
  int port_of_gpu(GpuId g) const { return g % config_.spines; }
  int server_of_gpu(GpuId g) const { return g / config_.gpus_per_server; }
  int leaf_of_server(int server) const { return server / config_.servers_per_leaf(); }
  GpuId first_gpu_of_server(int server) const { return server * config_.gpus_per_server; }
  int slot_leaf(SlotId s) const { return s / config_.uplinks_per_leaf(); }
  int slot_ocs(SlotId s) const { return slots_[s].ocs; }
  const Peer& slot_peer(SlotId s) const { return slots_[s].peer; }
  JobId slot_owner(SlotId s) const { return slots_[s].owner; }
  JobId gpu_owner(GpuId g) const { return gpu_owner_[g]; }
  int num_links() const { return 2 * config_.total_slots(); }

  // occupancy queries
  int idle_gpus() const { return idle_gpus_; }
  int idle_gpus_on_server(int server) const;
  bool server_idle(int server) const;
  /// R_n / RSN(L_n): fully idle servers under leaf n.
  int idle_servers(int leaf) const;
  /// C[n][m]: unreserved slots of leaf n currently wired to spine m.
  int free_links(int leaf, int spine) const;
  /// C^k[n][m]: as above, restricted to OCS k.
  int free_links(int ocs, int leaf, int spine) const;
  /// Free slots of leaf n that pass through OCS k, whatever they are wired to.
  int free_leaf_ports(int leaf, int ocs) const;
  /// Ports of spine m inside OCS k not held by a reservation.
  int free_spine_ports(int spine, int ocs) const;
  /// Physical port counts C_n^k and C_m^k.
  int leaf_ports(int leaf, int ocs) const;
  int spine_ports(int spine, int ocs) const;
  /// RPN(S_m): ports of spine m not held by a reservation.
  int spine_free_ports(int spine) const;
  /// Slots of leaf n wired to spine m (any owner), ascending.
  std::vector<SlotId> slots_to_spine(int leaf, int spine) const;
  std::span<const SlotId> leaf_slots_in_ocs(int leaf, int ocs) const;

  // state transitions
  void reserve(const Reservation& r);
  void release(JobId job);
  bool holds(JobId job) const { return reservations_.count(job) != 0; }
  const Reservation& reservation(JobId job) const;
  /// Re-points idle slots of OCS k. Returns the reconfiguration delay charged
  /// to the requesting job (0 for an empty move list).
  double rewire_ocs(int ocs, std::span<const RewireMove> moves);

  /// Bumped by every successful mutation.
  std::uint64_t version() const { return version_; }

  nlohmann::json snapshot() const;

  bool operator==(const PhysicalCluster& o) const;

 private:
  struct Slot {
    int ocs = -1;
    Peer peer;
    JobId owner = kNoJob;
    bool operator==(const Slot&) const = default;
  };

  int ocs_index(int ocs) const { return ocs < 0 ? 0 : ocs; }
  int spine_bucket(int spine, int ocs) const;

  ClusterConfig config_;
  std::vector<Slot> slots_;
  std::vector<JobId> gpu_owner_;
  std::vector<int> server_busy_;
  std::vector<std::vector<SlotId>> leaf_ocs_slots_;  // [leaf * K' + ocs]
  std::vector<int> spine_ports_;                     // [spine * K' + ocs]
  std::vector<int> spine_wired_;                     // slots pointing at (spine, ocs)
  std::vector<int> spine_reserved_;                  // reserved slots pointing at (spine, ocs)
  std::map<JobId, Reservation> reservations_;
  int idle_gpus_ = 0;
  std::uint64_t version_ = 0;
};

}  // namespace vclos
