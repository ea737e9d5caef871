#include "vclos/routing.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

namespace vclos {

std::uint32_t murmur3_32(const void* data, std::size_t len, std::uint32_t seed) {
  const auto* bytes = static_cast<const std::uint8_t*>(data);
  const std::size_t nblocks = len / 4;
  std::uint32_t h = seed;
  constexpr std::uint32_t c1 = 0xcc9e2d51, c2 = 0x1b873593;
  auto rotl = [](std::uint32_t x, int r) { return (x << r) | (x >> (32 - r)); };
  for (std::size_t i = 0; i < nblocks; ++i) {
    std::uint32_t k;
    std::memcpy(&k, bytes + 4 * i, 4);  // little-endian block read, as the reference
    k *= c1;
    k = rotl(k, 15);
    k *= c2;
    h ^= k;
    h = rotl(h, 13);
    h = h * 5 + 0xe6546b64;
  }
  const std::uint8_t* tail = bytes + 4 * nblocks;
  std::uint32_t k1 = 0;
  switch (len & 3) {
    case 3: k1 ^= std::uint32_t(tail[2]) << 16; [[fallthrough]];
    case 2: k1 ^= std::uint32_t(tail[1]) << 8; [[fallthrough]];
    case 1:
      k1 ^= tail[0];
      k1 *= c1;
      k1 = rotl(k1, 15);
      k1 *= c2;
      h ^= k1;
  }
  h ^= static_cast<std::uint32_t>(len);
  h ^= h >> 16;
  h *= 0x85ebca6b;
  h ^= h >> 13;
  h *= 0xc2b2ae35;
  h ^= h >> 16;
  return h;
}

std::uint32_t gpu_ip(const ClusterConfig& c, GpuId g) {
  const std::uint32_t leaf = g / c.spines;
  const std::uint32_t server = (g % c.spines) / c.gpus_per_server;
  const std::uint32_t gpu = g % c.gpus_per_server;
  return (10u << 24) | ((leaf & 0xff) << 16) | ((server & 0xff) << 8) | (gpu & 0xff);
}

std::uint32_t hash_tuple(const FiveTuple& t) {
  std::uint8_t buf[13];
  auto put32 = [&](int at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
  };
  put32(0, t.src_ip);
  put32(4, t.dst_ip);
  buf[8] = static_cast<std::uint8_t>(t.src_port >> 8);
  buf[9] = static_cast<std::uint8_t>(t.src_port);
  buf[10] = static_cast<std::uint8_t>(t.dst_port >> 8);
  buf[11] = static_cast<std::uint8_t>(t.dst_port);
  buf[12] = t.protocol;
  return murmur3_32(buf, sizeof buf);
}

int RouteAssignment::max_load() const {
  int m = 0;
  for (int c : link_count) m = std::max(m, c);
  return m;
}

std::map<int, int> RouteAssignment::link_histogram() const {
  std::map<int, int> h;
  for (int c : link_count)
    if (c > 0) ++h[c];
  return h;
}

std::map<int, int> RouteAssignment::flow_histogram() const {
  std::map<int, int> h;
  for (const Route& r : routes) {
    if (!r.crosses_fabric()) continue;
    int worst = link_count[r.up];
    if (r.down >= 0) worst = std::max(worst, link_count[r.down]);
    ++h[worst];
  }
  return h;
}

std::string RouteAssignment::witness(const PhysicalCluster& cluster) const {
  int worst = 1;
  LinkId link = -1;
  for (LinkId l = 0; l < static_cast<LinkId>(link_count.size()); ++l)
    if (link_count[l] > worst) worst = link_count[l], link = l;
  if (link < 0) return "";
  const SlotId s = link_slot(link);
  const Peer& p = cluster.slot_peer(s);
  std::string far = p.is_spine() ? fmt::format("spine {}", p.index)
                                 : fmt::format("leaf {} (circuit)", cluster.slot_leaf(p.index));
  std::string flows;
  for (const Route& r : routes)
    if (r.up == link || r.down == link) flows += fmt::format(" {}->{}", r.src, r.dst);
  return fmt::format("{} link leaf {} {} {} (slot {}) carries {} flows:{}",
                     link_is_up(link) ? "up" : "down", cluster.slot_leaf(s),
                     link_is_up(link) ? "->" : "<-", far, s, worst, flows);
}

bool SourceRoutingMap::valid_for(const ClusterConfig& c) const {
  if (f.empty()) return true;
  if (static_cast<int>(f.size()) != c.leaves) return false;
  for (const auto& leaf : f) {
    if (static_cast<int>(leaf.size()) != c.spines) return false;
    std::vector<char> used(c.uplinks_per_leaf(), 0);
    for (int u : leaf) {
      if (u < 0 || u >= c.uplinks_per_leaf() || used[u]) return false;
      used[u] = 1;
    }
  }
  return true;
}

namespace {

class Builder {
 public:
  explicit Builder(const PhysicalCluster& c) : c_(c) { out_.link_count.assign(c.num_links(), 0); }

  // returns false when the flow stays inside one leaf
  bool start(GpuId src, GpuId dst, Route& r) const {
    r.src = src;
    r.dst = dst;
    r.src_leaf = c_.leaf_of_gpu(src);
    r.dst_leaf = c_.leaf_of_gpu(dst);
    r.intra_server = c_.server_of_gpu(src) == c_.server_of_gpu(dst);
    return r.src_leaf != r.dst_leaf;
  }

  // first slot of `leaf` wired to spine m, preferring link index `hint`
  SlotId down_slot(int leaf, int spine, int hint = 0) const {
    const int lpp = c_.config().links_per_pair;
    const SlotId canonical = leaf * c_.config().uplinks_per_leaf() + spine * lpp + hint % lpp;
    if (c_.slot_peer(canonical) == Peer::spine(spine)) return canonical;
    auto slots = c_.slots_to_spine(leaf, spine);
    if (slots.empty())
      throw RoutingError(fmt::format("leaf {} has no link to spine {}", leaf, spine));
    return slots[hint % slots.size()];
  }

  void through(Route& r, SlotId up_slot, int hint = 0) {
    const Peer& p = c_.slot_peer(up_slot);
    if (p.is_spine()) {
      r.spine = p.index;
      r.up = up_link(up_slot);
      r.down = down_link(down_slot(r.dst_leaf, p.index, hint));
    } else if (p.kind == Peer::Kind::Leaf && c_.slot_leaf(p.index) == r.dst_leaf) {
      r.up = up_link(up_slot);
    } else {
      throw RoutingError(fmt::format("slot {} does not reach leaf {}", up_slot, r.dst_leaf));
    }
  }

  void add(Route r) {
    if (r.up >= 0) ++out_.link_count[r.up];
    if (r.down >= 0) ++out_.link_count[r.down];
    out_.routes.push_back(r);
  }

  RouteAssignment take() { return std::move(out_); }

 private:
  const PhysicalCluster& c_;
  RouteAssignment out_;
};

GpuId rank_gpu(std::span<const GpuId> map, int rank, const PhysicalCluster& c) {
  if (rank < 0 || rank >= static_cast<int>(map.size()))
    throw RoutingError(fmt::format("rank {} is outside the allocation", rank));
  const GpuId g = map[rank];
  if (g < 0 || g >= c.config().total_gpus()) throw RoutingError(fmt::format("gpu {} out of range", g));
  return g;
}

// uplink a rank uses without a reservation: port p -> first link to spine p,
// or wherever the map sends it; if that slot was rewired away, any slot that
// still reaches a spine
SlotId physical_uplink(const PhysicalCluster& c, const SourceRoutingMap& map, GpuId g) {
  const int leaf = c.leaf_of_gpu(g), port = c.port_of_gpu(g);
  const int uplinks = c.config().uplinks_per_leaf();
  const int u = map.f.empty() ? port * c.config().links_per_pair : map.f[leaf][port];
  const SlotId s = leaf * uplinks + u;
  if (c.slot_peer(s).is_spine()) return s;
  for (int k = 1; k < uplinks; ++k) {
    const SlotId alt = leaf * uplinks + (u + k) % uplinks;
    if (c.slot_peer(alt).is_spine()) return alt;
  }
  throw RoutingError(fmt::format("leaf {} has no spine uplink left", leaf));
}

}  // namespace

RouteAssignment source_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                             const PhysicalCluster& cluster, const SourceRoutingMap& map) {
  if (!map.valid_for(cluster.config())) throw RoutingError("source routing map is not a bijection");
  Builder b(cluster);
  for (const Flow& f : step.flows) {
    Route r;
    const GpuId src = rank_gpu(rank_to_gpu, f.src, cluster);
    const GpuId dst = rank_gpu(rank_to_gpu, f.dst, cluster);
    if (b.start(src, dst, r)) b.through(r, physical_uplink(cluster, map, src));
    b.add(r);
  }
  return b.take();
}

RouteAssignment source_route(const CommStep& step, const RoutingTable& table,
                             const PhysicalCluster& cluster) {
  Builder b(cluster);
  const int n = static_cast<int>(table.gpus.size());
  for (const Flow& f : step.flows) {
    if (f.src < 0 || f.src >= n || f.dst < 0 || f.dst >= n)
      throw RoutingError(fmt::format("flow {}->{} leaves the allocation", f.src, f.dst));
    Route r;
    if (!b.start(table.gpus[f.src], table.gpus[f.dst], r)) {
      b.add(r);
      continue;
    }
    const SlotId up = table.uplink[f.src];
    if (up < 0) throw RoutingError(fmt::format("rank {} has no reserved uplink", f.src));
    const Peer& p = cluster.slot_peer(up);
    r.up = up_link(up);
    if (p.is_spine()) {
      r.spine = p.index;
      // the receiver's own link if it lands on the same spine, else its
      // virtual leaf's link to that spine
      SlotId down = table.uplink[f.dst];
      if (down < 0 || cluster.slot_peer(down) != p) {
        const auto& m = table.spine_slot[table.vleaf[f.dst]];
        auto it = m.find(p.index);
        if (it == m.end())
          throw RoutingError(fmt::format("rank {} cannot be reached from spine {}", f.dst, p.index));
        down = it->second;
      }
      r.down = down_link(down);
    } else if (p.kind != Peer::Kind::Leaf || cluster.slot_leaf(p.index) != r.dst_leaf) {
      throw RoutingError(fmt::format("circuit of slot {} does not reach leaf {}", up, r.dst_leaf));
    }
    b.add(r);
  }
  return b.take();
}

RouteAssignment ecmp_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                           const PhysicalCluster& cluster, std::mt19937_64& rng) {
  Builder b(cluster);
  const auto& cfg = cluster.config();
  const int uplinks = cfg.uplinks_per_leaf();
  std::uniform_int_distribution<int> ephemeral(32768, 60999);
  for (const Flow& f : step.flows) {
    Route r;
    const GpuId src = rank_gpu(rank_to_gpu, f.src, cluster);
    const GpuId dst = rank_gpu(rank_to_gpu, f.dst, cluster);
    FiveTuple t{gpu_ip(cfg, src), gpu_ip(cfg, dst), static_cast<std::uint16_t>(ephemeral(rng))};
    if (b.start(src, dst, r)) {
      const std::uint32_t h = hash_tuple(t);
      SlotId s = r.src_leaf * uplinks + static_cast<int>(h % uplinks);
      if (!cluster.slot_peer(s).is_spine()) s = physical_uplink(cluster, {}, src);
      b.through(r, s, static_cast<int>(h / uplinks));
    }
    b.add(r);
  }
  return b.take();
}

RouteAssignment balanced_ecmp_route(const CommStep& step, std::span<const GpuId> rank_to_gpu,
                                    const PhysicalCluster& cluster,
                                    std::span<const int> background_load, std::mt19937_64& rng) {
  const auto& cfg = cluster.config();
  const int uplinks = cfg.uplinks_per_leaf();
  std::vector<int> load(cluster.num_links(), 0);
  for (size_t i = 0; i < background_load.size() && i < load.size(); ++i) load[i] = background_load[i];

  std::vector<size_t> order(step.flows.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Route> routes(step.flows.size());
  Builder b(cluster);
  std::vector<SlotId> best;
  for (size_t idx : order) {
    const Flow& f = step.flows[idx];
    Route& r = routes[idx];
    const GpuId src = rank_gpu(rank_to_gpu, f.src, cluster);
    const GpuId dst = rank_gpu(rank_to_gpu, f.dst, cluster);
    if (!b.start(src, dst, r)) continue;
    best.clear();
    int low = 0;
    for (int u = 0; u < uplinks; ++u) {
      const SlotId s = r.src_leaf * uplinks + u;
      if (!cluster.slot_peer(s).is_spine()) continue;
      const int l = load[up_link(s)];
      if (best.empty() || l < low) best.assign(1, s), low = l;
      else if (l == low) best.push_back(s);
    }
    if (best.empty()) throw RoutingError(fmt::format("leaf {} has no spine uplink left", r.src_leaf));
    const SlotId s = best[std::uniform_int_distribution<size_t>(0, best.size() - 1)(rng)];
    // downlink: least loaded link from that spine into the destination leaf
    const int spine = cluster.slot_peer(s).index;
    SlotId down = -1;
    for (SlotId d : cluster.slots_to_spine(r.dst_leaf, spine))
      if (down < 0 || load[down_link(d)] < load[down_link(down)]) down = d;
    if (down < 0) throw RoutingError(fmt::format("leaf {} has no link to spine {}", r.dst_leaf, spine));
    r.spine = spine;
    r.up = up_link(s);
    r.down = down_link(down);
    ++load[r.up];
    ++load[r.down];
  }
  for (Route& r : routes) b.add(r);
  return b.take();
}

// ---------------------------------------------------------------------------

namespace {

struct SrProblem {
  int leaves, spines;
  // per step, per cross-leaf flow: (src var, dst leaf)
  std::vector<std::vector<std::pair<int, int>>> steps;
};

class SrSearch {
 public:
  SrSearch(const SrProblem& p, long limit) : p_(p), limit_(limit) {
    const int vars = p.leaves * p.spines;
    value_.assign(vars, -1);
    // conflicts[v]: other vars that must differ from v (same leaf, or same
    // destination leaf in some step)
    std::vector<std::vector<char>> adj(vars, std::vector<char>(vars, 0));
    for (int a = 0; a < p.leaves; ++a)
      for (int i = 0; i < p.spines; ++i)
        for (int j = i + 1; j < p.spines; ++j) adj[a * p.spines + i][a * p.spines + j] = 1;
    for (const auto& step : p.steps) {
      for (size_t x = 0; x < step.size(); ++x)
        for (size_t y = x + 1; y < step.size(); ++y)
          if (step[x].second == step[y].second) {
            adj[step[x].first][step[y].first] = 1;
            adj[step[y].first][step[x].first] = 1;
          }
    }
    nbr_.assign(vars, {});
    for (int v = 0; v < vars; ++v)
      for (int w = 0; w < vars; ++w)
        if (v != w && (adj[v][w] || adj[w][v])) nbr_[v].push_back(w);
  }

  bool solve() {
    // relabelling spines keeps every constraint, so pin leaf 0 to identity
    for (int i = 0; i < p_.spines; ++i) value_[i] = i;
    return dfs(0);
  }
  const std::vector<int>& values() const { return value_; }
  long nodes() const { return nodes_; }
  bool hit_limit() const { return nodes_ > limit_; }

 private:
  int pick() const {
    // most constrained unassigned variable
    int best = -1, best_free = 1 << 30, best_deg = -1;
    for (int v = 0; v < static_cast<int>(value_.size()); ++v) {
      if (value_[v] >= 0) continue;
      std::vector<char> used(p_.spines, 0);
      for (int w : nbr_[v])
        if (value_[w] >= 0) used[value_[w]] = 1;
      const int free = static_cast<int>(std::count(used.begin(), used.end(), 0));
      const int deg = static_cast<int>(nbr_[v].size());
      if (free < best_free || (free == best_free && deg > best_deg)) best = v, best_free = free, best_deg = deg;
    }
    return best;
  }

  bool dfs(int depth) {
    if (++nodes_ > limit_) return false;
    const int v = pick();
    if (v < 0) return true;
    std::vector<char> used(p_.spines, 0);
    for (int w : nbr_[v])
      if (value_[w] >= 0) used[value_[w]] = 1;
    // try the identity port first
    const int own = v % p_.spines;
    for (int k = 0; k < p_.spines; ++k) {
      const int m = (own + k) % p_.spines;
      if (used[m]) continue;
      value_[v] = m;
      if (dfs(depth + 1)) return true;
      if (nodes_ > limit_) break;
    }
    value_[v] = -1;
    return false;
  }

  const SrProblem& p_;
  long limit_;
  long nodes_ = 0;
  std::vector<int> value_;
  std::vector<std::vector<int>> nbr_;
};

}  // namespace

ScheduleCheck check_schedule(const CommSchedule& s, std::span<const GpuId> rank_to_gpu,
                             const PhysicalCluster& cluster, const SourceRoutingMap& map) {
  ScheduleCheck out;
  for (size_t i = 0; i < s.steps.size(); ++i) {
    const RouteAssignment r = source_route(s.steps[i], rank_to_gpu, cluster, map);
    for (const Route& rt : r.routes) out.cross_flows += rt.crosses_fabric();
    const int load = r.max_load();
    if (load > out.max_load) {
      out.max_load = load;
      out.worst_step = static_cast<int>(i);
      out.witness = load > 1 ? r.witness(cluster) : "";
    }
  }
  return out;
}

SrSearchResult find_source_routing(const CommSchedule& s, int leaves, int spines, long node_limit) {
  SrProblem p{leaves, spines, {}};
  bool identity_ok = true;
  for (const CommStep& step : s.steps) {
    std::vector<std::pair<int, int>> flows;
    std::map<std::pair<int, int>, int> seen;  // (spine, dst leaf) under identity
    for (const Flow& f : step.flows) {
      const int a = f.src / spines, b = f.dst / spines;
      if (a == b) continue;
      flows.emplace_back(f.src, b);
      if (seen[{f.src % spines, b}]++ > 0) identity_ok = false;
    }
    p.steps.push_back(std::move(flows));
  }
  if (identity_ok) return {true, false, 0, {}};
  SrSearch search(p, node_limit);
  if (!search.solve()) return {false, !search.hit_limit(), search.nodes(), {}};
  SourceRoutingMap map;
  map.f.assign(leaves, std::vector<int>(spines));
  for (int v = 0; v < leaves * spines; ++v) map.f[v / spines][v % spines] = search.values()[v];
  return {true, false, search.nodes(), map};
}

// ---------------------------------------------------------------------------

MonteCarloScale monte_carlo_shape(int gpus) {
  switch (gpus) {
    case 64: return {64, 8, 8};
    case 256: return {256, 16, 16};
    case 1024: return {1024, 32, 32};
    case 2048: return {2048, 32, 64};
  }
  // square-ish otherwise: spines a power of two, at most 64
  int spines = 1;
  while (spines * spines < gpus && spines < 64) spines *= 2;
  if (gpus % spines != 0) throw ConfigError(fmt::format("no leaf-spine shape for {} GPUs", gpus));
  return {gpus, gpus / spines, spines};
}

ContentionSample collision_monte_carlo(const MonteCarloScale& scale, long trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (scale.leaves < 2) throw ConfigError("collision experiment needs at least 2 leaves");
  const int L = scale.leaves, S = scale.spines;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ephemeral(32768, 60999);
  ClusterConfig cfg{L, S, 1};
  ContentionSample out;
  std::vector<int> up(L * S), down(L * S), perm(L);
  std::vector<int> flow_up(L * S), flow_down(L * S);
  for (long t = 0; t < trials; ++t) {
    // random derangement by rejection
    std::iota(perm.begin(), perm.end(), 0);
    for (;;) {
      std::shuffle(perm.begin(), perm.end(), rng);
      bool fixed = false;
      for (int a = 0; a < L; ++a) fixed |= perm[a] == a;
      if (!fixed) break;
    }
    std::fill(up.begin(), up.end(), 0);
    std::fill(down.begin(), down.end(), 0);
    for (int a = 0; a < L; ++a) {
      for (int p = 0; p < S; ++p) {
        const GpuId src = a * S + p, dst = perm[a] * S + p;
        FiveTuple tuple{gpu_ip(cfg, src), gpu_ip(cfg, dst), static_cast<std::uint16_t>(ephemeral(rng))};
        const int m = static_cast<int>(hash_tuple(tuple) % S);
        flow_up[src] = a * S + m;
        flow_down[src] = perm[a] * S + m;
        ++up[flow_up[src]];
        ++down[flow_down[src]];
      }
    }
    bool any = false;
    for (int f = 0; f < L * S; ++f) {
      const int worst = std::max(up[flow_up[f]], down[flow_down[f]]);
      out.contended_flows += worst >= 2;
      out.flows_at_least6 += worst >= 6;
      any |= worst >= 2;
    }
    for (int i = 0; i < L * S; ++i) {
      if (up[i] > 0) ++out.link_histogram[up[i]];
      if (down[i] > 0) ++out.link_histogram[down[i]];
    }
    out.flows += L * S;
    out.trials_with_contention += any;
    ++out.trials;
  }
  return out;
}

double ecmp_birthday_trial(int k, long trials, std::uint64_t seed) {
  if (k < 1 || trials < 1) throw ConfigError("birthday trial needs k >= 1 and trials >= 1");
  PhysicalCluster cluster(ClusterConfig{2, k, 1});
  CommStep step;
  std::vector<GpuId> gpus(2 * k);
  std::iota(gpus.begin(), gpus.end(), 0);
  for (int i = 0; i < k; ++i) step.flows.push_back(Flow{i, k + i, 1.0});
  std::mt19937_64 rng(seed);
  long hits = 0;
  for (long t = 0; t < trials; ++t) {
    const RouteAssignment r = ecmp_route(step, gpus, cluster, rng);
    int worst = 0;
    for (const Route& route : r.routes) worst = std::max(worst, r.link_count[route.up]);
    hits += worst >= 2;
  }
  return static_cast<double>(hits) / trials;
}

}  // namespace vclos
