#include "vclos/topology.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace vclos {

void ClusterConfig::validate() const {
  if (leaves < 1) throw ConfigError(fmt::format("leaves must be >= 1 (got {})", leaves));
  if (spines < 1) throw ConfigError(fmt::format("spines must be >= 1 (got {})", spines));
  if (gpus_per_server < 1)
    throw ConfigError(fmt::format("gpus_per_server must be >= 1 (got {})", gpus_per_server));
  if (links_per_pair < 1)
    throw ConfigError(fmt::format("links_per_pair must be >= 1 (got {})", links_per_pair));
  if (spines % gpus_per_server != 0)
    throw ConfigError(fmt::format("spines mod gpus_per_server must be 0 (got {} mod {})", spines,
                                  gpus_per_server));
  if (ocs_count < 0) throw ConfigError(fmt::format("ocs_count must be >= 0 (got {})", ocs_count));
  if (ocs_count > total_slots())
    throw ConfigError(fmt::format("ocs_count {} exceeds the {} leaf-spine links", ocs_count,
                                  total_slots()));
  if (!(ocs_rewire_delay >= 0.0))
    throw ConfigError(fmt::format("ocs_rewire_delay must be >= 0 (got {})", ocs_rewire_delay));
}

PhysicalCluster::PhysicalCluster(const ClusterConfig& config) : config_(config) {
  config_.validate();
  const int buckets = std::max(1, config_.ocs_count);
  const int uplinks = config_.uplinks_per_leaf();
  slots_.resize(config_.total_slots());
  leaf_ocs_slots_.resize(static_cast<size_t>(config_.leaves) * buckets);
  spine_ports_.assign(static_cast<size_t>(config_.spines) * buckets, 0);
  for (int n = 0; n < config_.leaves; ++n) {
    for (int u = 0; u < uplinks; ++u) {
      const SlotId s = n * uplinks + u;
      const int m = u / config_.links_per_pair;
      // links are dealt to OCS devices round-robin in (leaf, spine, link) order
      const int k = config_.ocs_count > 0 ? s % config_.ocs_count : -1;
      slots_[s] = Slot{k, Peer::spine(m), kNoJob};
      leaf_ocs_slots_[n * buckets + ocs_index(k)].push_back(s);
      ++spine_ports_[spine_bucket(m, k)];
    }
  }
  spine_wired_ = spine_ports_;
  spine_reserved_.assign(spine_ports_.size(), 0);
  gpu_owner_.assign(config_.total_gpus(), kNoJob);
  server_busy_.assign(config_.total_servers(), 0);
  idle_gpus_ = config_.total_gpus();
}

int PhysicalCluster::spine_bucket(int spine, int ocs) const {
  return spine * std::max(1, config_.ocs_count) + ocs_index(ocs);
}

int PhysicalCluster::idle_gpus_on_server(int server) const {
  return config_.gpus_per_server - server_busy_[server];
}

bool PhysicalCluster::server_idle(int server) const { return server_busy_[server] == 0; }

int PhysicalCluster::idle_servers(int leaf) const {
  const int per = config_.servers_per_leaf();
  int idle = 0;
  for (int i = 0; i < per; ++i) idle += server_busy_[leaf * per + i] == 0;
  return idle;
}

int PhysicalCluster::free_links(int leaf, int spine) const {
  const int uplinks = config_.uplinks_per_leaf();
  int count = 0;
  for (SlotId s = leaf * uplinks; s < (leaf + 1) * uplinks; ++s) {
    const Slot& slot = slots_[s];
    count += slot.owner == kNoJob && slot.peer == Peer::spine(spine);
  }
  return count;
}

int PhysicalCluster::free_links(int ocs, int leaf, int spine) const {
  int count = 0;
  for (SlotId s : leaf_slots_in_ocs(leaf, ocs)) {
    const Slot& slot = slots_[s];
    count += slot.owner == kNoJob && slot.peer == Peer::spine(spine);
  }
  return count;
}

int PhysicalCluster::free_leaf_ports(int leaf, int ocs) const {
  int count = 0;
  for (SlotId s : leaf_slots_in_ocs(leaf, ocs)) {
    const Slot& slot = slots_[s];
    if (slot.owner != kNoJob) continue;
    // a free slot wired to a reserved partner slot is not rewirable
    if (slot.peer.kind == Peer::Kind::Leaf && slots_[slot.peer.index].owner != kNoJob) continue;
    ++count;
  }
  return count;
}

int PhysicalCluster::free_spine_ports(int spine, int ocs) const {
  const int b = spine_bucket(spine, ocs);
  return spine_ports_[b] - spine_reserved_[b];
}

int PhysicalCluster::leaf_ports(int leaf, int ocs) const {
  return static_cast<int>(leaf_slots_in_ocs(leaf, ocs).size());
}

int PhysicalCluster::spine_ports(int spine, int ocs) const {
  return spine_ports_[spine_bucket(spine, ocs)];
}

int PhysicalCluster::spine_free_ports(int spine) const {
  const int buckets = std::max(1, config_.ocs_count);
  int free = 0;
  for (int k = 0; k < buckets; ++k) {
    const int b = spine * buckets + k;
    free += spine_ports_[b] - spine_reserved_[b];
  }
  return free;
}

std::vector<SlotId> PhysicalCluster::slots_to_spine(int leaf, int spine) const {
  std::vector<SlotId> out;
  const int uplinks = config_.uplinks_per_leaf();
  for (SlotId s = leaf * uplinks; s < (leaf + 1) * uplinks; ++s)
    if (slots_[s].peer == Peer::spine(spine)) out.push_back(s);
  return out;
}

std::span<const SlotId> PhysicalCluster::leaf_slots_in_ocs(int leaf, int ocs) const {
  const int buckets = std::max(1, config_.ocs_count);
  return leaf_ocs_slots_[leaf * buckets + ocs_index(ocs)];
}

const Reservation& PhysicalCluster::reservation(JobId job) const {
  auto it = reservations_.find(job);
  if (it == reservations_.end())
    throw ReservationError(fmt::format("job {} holds no reservation", job));
  return it->second;
}

void PhysicalCluster::reserve(const Reservation& r) {
  if (r.job == kNoJob) throw ReservationError("reservation without a job id");
  if (reservations_.count(r.job))
    throw ReservationError(fmt::format("job {} already holds a reservation", r.job));
  std::set<GpuId> gpus;
  for (GpuId g : r.gpus) {
    if (g < 0 || g >= config_.total_gpus())
      throw ReservationError(fmt::format("gpu {} out of range", g));
    if (gpu_owner_[g] != kNoJob)
      throw ReservationError(fmt::format("gpu {} already reserved by job {}", g, gpu_owner_[g]));
    if (!gpus.insert(g).second) throw ReservationError(fmt::format("gpu {} listed twice", g));
  }
  std::set<SlotId> slots;
  for (SlotId s : r.slots) {
    if (s < 0 || s >= config_.total_slots())
      throw ReservationError(fmt::format("link slot {} out of range", s));
    if (slots_[s].owner != kNoJob)
      throw ReservationError(
          fmt::format("link slot {} already reserved by job {}", s, slots_[s].owner));
    if (slots_[s].peer.kind == Peer::Kind::Dark)
      throw ReservationError(fmt::format("link slot {} is not wired", s));
    if (!slots.insert(s).second) throw ReservationError(fmt::format("slot {} listed twice", s));
  }
  for (GpuId g : r.gpus) {
    gpu_owner_[g] = r.job;
    ++server_busy_[server_of_gpu(g)];
  }
  for (SlotId s : r.slots) {
    slots_[s].owner = r.job;
    if (slots_[s].peer.is_spine()) ++spine_reserved_[spine_bucket(slots_[s].peer.index, slots_[s].ocs)];
  }
  idle_gpus_ -= static_cast<int>(r.gpus.size());
  reservations_.emplace(r.job, r);
  ++version_;
}

void PhysicalCluster::release(JobId job) {
  auto it = reservations_.find(job);
  if (it == reservations_.end())
    throw ReservationError(fmt::format("release of unknown job {}", job));
  const Reservation& r = it->second;
  for (GpuId g : r.gpus) {
    gpu_owner_[g] = kNoJob;
    --server_busy_[server_of_gpu(g)];
  }
  for (SlotId s : r.slots) {
    slots_[s].owner = kNoJob;
    if (slots_[s].peer.is_spine()) --spine_reserved_[spine_bucket(slots_[s].peer.index, slots_[s].ocs)];
  }
  idle_gpus_ += static_cast<int>(r.gpus.size());
  reservations_.erase(it);
  ++version_;
}

double PhysicalCluster::rewire_ocs(int ocs, std::span<const RewireMove> moves) {
  if (moves.empty()) return 0.0;
  if (!has_ocs()) throw ReservationError("cluster has no OCS layer");
  if (ocs < 0 || ocs >= config_.ocs_count)
    throw ReservationError(fmt::format("OCS {} out of range", ocs));

  std::vector<Slot> slots = slots_;
  std::vector<int> wired = spine_wired_;
  auto check_slot = [&](SlotId s, const char* role) {
    if (s < 0 || s >= config_.total_slots())
      throw ReservationError(fmt::format("{} slot {} out of range", role, s));
    if (slots[s].ocs != ocs)
      throw ReservationError(fmt::format("{} slot {} does not pass through OCS {}", role, s, ocs));
    if (slots[s].owner != kNoJob)
      throw ReservationError(fmt::format("attempt to move link slot {} reserved by job {}", s,
                                         slots[s].owner));
  };
  auto unhook = [&](SlotId s) {
    Peer& p = slots[s].peer;
    if (p.is_spine()) {
      --wired[spine_bucket(p.index, ocs)];
    } else if (p.kind == Peer::Kind::Leaf) {
      if (slots[p.index].owner != kNoJob)
        throw ReservationError(fmt::format("link slot {} is paired with reserved slot {}", s, p.index));
      slots[p.index].peer = Peer::dark();
    }
    p = Peer::dark();
  };

  for (const RewireMove& mv : moves) {
    check_slot(mv.slot, "moved");
    switch (mv.new_peer.kind) {
      case Peer::Kind::Dark:
        unhook(mv.slot);
        break;
      case Peer::Kind::Spine: {
        const int m = mv.new_peer.index;
        if (m < 0 || m >= config_.spines)
          throw ReservationError(fmt::format("spine {} out of range", m));
        if (spine_ports_[spine_bucket(m, ocs)] == 0)
          throw ReservationError(fmt::format("spine {} has no port on OCS {}", m, ocs));
        unhook(mv.slot);
        slots[mv.slot].peer = mv.new_peer;
        ++wired[spine_bucket(m, ocs)];
        break;
      }
      case Peer::Kind::Leaf: {
        const SlotId other = mv.new_peer.index;
        check_slot(other, "partner");
        if (slot_leaf(other) == slot_leaf(mv.slot))
          throw ReservationError(fmt::format("slots {} and {} sit on the same leaf", mv.slot, other));
        unhook(mv.slot);
        unhook(other);
        slots[mv.slot].peer = Peer::leaf_slot(other);
        slots[other].peer = Peer::leaf_slot(mv.slot);
        break;
      }
    }
  }
  for (int m = 0; m < config_.spines; ++m) {
    const int b = spine_bucket(m, ocs);
    if (wired[b] > spine_ports_[b])
      throw ReservationError(fmt::format("spine {} would need {} ports on OCS {} but has {}", m,
                                         wired[b], ocs, spine_ports_[b]));
  }
  slots_ = std::move(slots);
  spine_wired_ = std::move(wired);
  ++version_;
  return config_.ocs_rewire_delay;
}

nlohmann::json PhysicalCluster::snapshot() const {
  nlohmann::json j;
  j["config"] = {{"leaves", config_.leaves},
                 {"spines", config_.spines},
                 {"gpus_per_server", config_.gpus_per_server},
                 {"links_per_pair", config_.links_per_pair},
                 {"ocs_count", config_.ocs_count},
                 {"ocs_rewire_delay", config_.ocs_rewire_delay}};
  j["gpu_owner"] = gpu_owner_;
  auto& servers = j["servers"] = nlohmann::json::array();
  for (int s = 0; s < config_.total_servers(); ++s)
    servers.push_back({{"leaf", leaf_of_server(s)}, {"idle_gpus", idle_gpus_on_server(s)}});
  auto& slots = j["links"] = nlohmann::json::array();
  for (SlotId s = 0; s < config_.total_slots(); ++s) {
    const Slot& slot = slots_[s];
    nlohmann::json peer;
    switch (slot.peer.kind) {
      case Peer::Kind::Dark: peer = nullptr; break;
      case Peer::Kind::Spine: peer = {{"spine", slot.peer.index}}; break;
      case Peer::Kind::Leaf: peer = {{"slot", slot.peer.index}}; break;
    }
    slots.push_back({{"slot", s}, {"leaf", slot_leaf(s)}, {"ocs", slot.ocs}, {"peer", peer},
                     {"owner", slot.owner}});
  }
  auto& jobs = j["reservations"] = nlohmann::json::array();
  for (const auto& [id, r] : reservations_)
    jobs.push_back({{"job", id}, {"gpus", r.gpus}, {"slots", r.slots}});
  return j;
}

bool PhysicalCluster::operator==(const PhysicalCluster& o) const {
  if (!(config_ == o.config_ && slots_ == o.slots_ && gpu_owner_ == o.gpu_owner_ &&
        server_busy_ == o.server_busy_ && spine_wired_ == o.spine_wired_ &&
        spine_reserved_ == o.spine_reserved_ && reservations_.size() == o.reservations_.size()))
    return false;
  for (const auto& [id, r] : reservations_) {
    auto it = o.reservations_.find(id);
    if (it == o.reservations_.end() || it->second.gpus != r.gpus || it->second.slots != r.slots)
      return false;
  }
  return true;
}

}  // namespace vclos
