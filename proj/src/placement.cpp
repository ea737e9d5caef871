#include "vclos/placement.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace vclos {

std::string_view to_string(PlacementStage s) {
  switch (s) {
    case PlacementStage::SingleServer: return "single_server";
    case PlacementStage::SingleLeaf: return "single_leaf";
    case PlacementStage::VClos: return "vclos";
    case PlacementStage::OcsLeafPair: return "ocs_leaf_pair";
    case PlacementStage::OcsSpine: return "ocs_spine";
    case PlacementStage::OcsClos: return "ocs_clos";
    case PlacementStage::Locality: return "locality";
    case PlacementStage::Scattered: return "scattered";
  }
  return "?";
}

Reservation VirtualClos::reservation() const { return Reservation{job_id, gpus, slots}; }

nlohmann::json VirtualClos::to_json() const {
  nlohmann::json j;
  j["job_id"] = job_id;
  j["n"] = n;
  j["n_reserved"] = n_reserved;
  j["stage"] = std::string(to_string(stage));
  j["l"] = l;
  j["s"] = s;
  j["gpus"] = gpus;
  j["slots"] = slots;
  j["l_n"] = l_n;
  j["s_m"] = s_m;
  j["r_n"] = r_n;
  j["objective"] = objective;
  nlohmann::json plan = nlohmann::json::array();
  for (const OcsRewire& r : rewire_plan) {
    nlohmann::json moves = nlohmann::json::array();
    for (const RewireMove& m : r.moves) {
      const char* kind = m.new_peer.kind == Peer::Kind::Spine  ? "spine"
                         : m.new_peer.kind == Peer::Kind::Leaf ? "leaf_slot"
                                                               : "dark";
      moves.push_back({{"slot", m.slot}, {"to", kind}, {"index", m.new_peer.index}});
    }
    plan.push_back({{"ocs", r.ocs}, {"moves", moves}});
  }
  j["rewire_plan"] = plan;
  return j;
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::vector<int> idle_servers_of_leaf(const PhysicalCluster& c, int leaf) {
  const int spl = c.config().servers_per_leaf();
  std::vector<int> out;
  for (int sv = leaf * spl; sv < (leaf + 1) * spl; ++sv)
    if (c.server_idle(sv)) out.push_back(sv);
  return out;
}

void append_server(const PhysicalCluster& c, int server, std::vector<GpuId>& gpus) {
  const GpuId g0 = c.first_gpu_of_server(server);
  for (int i = 0; i < c.config().gpus_per_server; ++i) gpus.push_back(g0 + i);
}

// first `want` GPUs of the given servers, in order
std::vector<GpuId> take_gpus(const PhysicalCluster& c, const std::vector<int>& servers, int want) {
  std::vector<GpuId> g;
  for (int sv : servers) append_server(c, sv, g);
  g.resize(want);
  return g;
}

VirtualClos base(const JobRequest& req, const PhysicalCluster& c, PlacementStage st) {
  VirtualClos vc;
  vc.job_id = req.job_id;
  vc.n = req.n;
  vc.stage = st;
  const auto& cfg = c.config();
  vc.l_n.assign(cfg.leaves, 0);
  vc.s_m.assign(cfg.spines, 0);
  vc.r_n.assign(cfg.leaves, 0);
  vc.c.assign(static_cast<size_t>(cfg.leaves) * cfg.spines, 0);
  return vc;
}

bool slot_rewirable(const PhysicalCluster& c, SlotId s) {
  if (c.slot_owner(s) != kNoJob) return false;
  const Peer& p = c.slot_peer(s);
  return !(p.kind == Peer::Kind::Leaf && c.slot_owner(p.index) != kNoJob);
}

// Plans one OCS: demand[leaf][spine] slots of each leaf must end up wired to
// the spine. Existing wiring is reused first, then dark slots, then other
// idle slots. Idle slots left on a spine beyond its spare ports are moved to
// a spine with room, or go dark. Returns false if the demand does not fit.
bool plan_ocs(const PhysicalCluster& c, int k, const std::map<int, std::map<int, int>>& demand,
              std::map<int, std::map<int, std::vector<SlotId>>>& taken, OcsRewire& out) {
  const auto& cfg = c.config();
  std::map<SlotId, Peer> final_peer;
  std::set<SlotId> job;
  std::vector<int> job_on_spine(cfg.spines, 0);

  for (const auto& [n, row] : demand) {
    std::vector<SlotId> pool;
    for (SlotId s : c.leaf_slots_in_ocs(n, k))
      if (slot_rewirable(c, s)) pool.push_back(s);
    std::map<int, int> need = row;
    // reuse
    for (SlotId s : pool) {
      const Peer& p = c.slot_peer(s);
      if (!p.is_spine()) continue;
      auto it = need.find(p.index);
      if (it == need.end() || it->second == 0) continue;
      --it->second;
      job.insert(s);
      taken[n][p.index].push_back(s);
    }
    auto rank = [&](SlotId s) {
      const Peer& p = c.slot_peer(s);
      return p.kind == Peer::Kind::Dark ? 0 : p.kind == Peer::Kind::Leaf ? 1 : 2;
    };
    std::vector<SlotId> rest;
    for (SlotId s : pool)
      if (!job.count(s)) rest.push_back(s);
    std::stable_sort(rest.begin(), rest.end(), [&](SlotId a, SlotId b) { return rank(a) < rank(b); });
    size_t next = 0;
    for (auto& [m, cnt] : need) {
      for (; cnt > 0; --cnt) {
        if (next >= rest.size()) return false;
        const SlotId s = rest[next++];
        job.insert(s);
        taken[n][m].push_back(s);
        final_peer[s] = Peer::spine(m);
        const Peer& old = c.slot_peer(s);
        if (old.kind == Peer::Kind::Leaf && !final_peer.count(old.index))
          final_peer[old.index] = Peer::dark();
      }
    }
    for (const auto& [m, cnt] : row) job_on_spine[m] += cnt;
  }
  for (auto& [n, row] : taken)
    for (auto& [m, v] : row) std::sort(v.begin(), v.end());

  std::vector<int> cap(cfg.spines), used(cfg.spines, 0);
  for (int m = 0; m < cfg.spines; ++m) {
    cap[m] = c.free_spine_ports(m, k) - job_on_spine[m];
    if (cap[m] < 0) return false;
  }
  // idle slots that stay on their spine vs. overflow
  std::vector<SlotId> overflow;
  for (int n = 0; n < cfg.leaves; ++n)
    for (SlotId s : c.leaf_slots_in_ocs(n, k)) {
      if (c.slot_owner(s) != kNoJob || job.count(s) || final_peer.count(s)) continue;
      const Peer& p = c.slot_peer(s);
      if (!p.is_spine()) continue;
      if (used[p.index] < cap[p.index])
        ++used[p.index];
      else
        overflow.push_back(s);
    }
  for (SlotId s : overflow) {
    Peer to = Peer::dark();
    for (int m = 0; m < cfg.spines; ++m)
      if (c.spine_ports(m, k) > 0 && used[m] < cap[m]) {
        ++used[m];
        to = Peer::spine(m);
        break;
      }
    final_peer[s] = to;
  }

  out.ocs = k;
  out.moves.clear();
  for (const auto& [s, p] : final_peer)
    if (c.slot_peer(s) != p) out.moves.push_back({s, p});
  return true;
}

std::int64_t placement_cost(const PhysicalCluster& c, const VirtualClos& vc) {
  const int T = c.config().gpus_per_server;
  std::int64_t z = 0;
  for (int m = 0; m < c.config().spines; ++m) z += std::int64_t(c.spine_free_ports(m)) * vc.s_m[m];
  for (int n = 0; n < c.config().leaves; ++n) z += std::int64_t(c.idle_servers(n)) * T * vc.l_n[n];
  return z;
}

void count_ilp(PlacementStats* stats, const IlpResult& r) {
  if (!stats) return;
  ++stats->ilp_solves;
  stats->ilp_nodes += r.nodes;
  if (r.status == IlpStatus::Timeout) ++stats->ilp_timeouts;
}

}  // namespace

std::optional<int> normalize_gpu_count(int n, const ClusterConfig& c) {
  if (n < 1) return std::nullopt;
  const int T = c.gpus_per_server;
  if (n <= T) return n;
  for (int np = ceil_div(n, T) * T; np <= c.total_gpus(); np += T)
    if (!vclos_shapes(np, c).empty()) return np;
  return std::nullopt;
}

std::vector<std::pair<int, int>> vclos_shapes(int n_norm, const ClusterConfig& c) {
  std::vector<std::pair<int, int>> out;
  if (n_norm < 1) return out;
  int l = std::max(1, static_cast<int>(std::bit_floor(static_cast<unsigned>(n_norm))) / c.spines);
  for (; l <= c.leaves; l *= 2) {
    if (l == 1 || n_norm % l != 0) continue;
    const int s = n_norm / l;
    if (s <= c.spines && s % c.gpus_per_server == 0) out.emplace_back(l, s);
  }
  return out;
}

std::optional<VirtualClos> stage0_single_server(const JobRequest& req, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  if (req.n < 1 || req.n > cfg.gpus_per_server) return std::nullopt;
  int best = -1, best_idle = 0;
  for (int sv = 0; sv < cfg.total_servers(); ++sv) {
    const int idle = c.idle_gpus_on_server(sv);
    if (idle >= req.n && (best < 0 || idle < best_idle)) best = sv, best_idle = idle;
  }
  if (best < 0) return std::nullopt;
  VirtualClos vc = base(req, c, PlacementStage::SingleServer);
  const GpuId g0 = c.first_gpu_of_server(best);
  for (GpuId g = g0; g < g0 + cfg.gpus_per_server && static_cast<int>(vc.gpus.size()) < req.n; ++g)
    if (c.gpu_owner(g) == kNoJob) vc.gpus.push_back(g);
  vc.n_reserved = req.n;
  vc.l = 1;
  vc.s = req.n;
  vc.l_n[c.leaf_of_server(best)] = 1;
  return vc;
}

std::optional<VirtualClos> stage1_single_leaf(const JobRequest& req, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  if (req.n <= cfg.gpus_per_server || req.n > cfg.spines) return std::nullopt;
  const int need = ceil_div(req.n, cfg.gpus_per_server);
  int best = -1, best_idle = 0;
  for (int n = 0; n < cfg.leaves; ++n) {
    const int idle = c.idle_servers(n);
    if (idle >= need && (best < 0 || idle < best_idle)) best = n, best_idle = idle;
  }
  if (best < 0) return std::nullopt;
  std::vector<int> servers = idle_servers_of_leaf(c, best);
  servers.resize(need);
  VirtualClos vc = base(req, c, PlacementStage::SingleLeaf);
  vc.gpus = take_gpus(c, servers, req.n);
  vc.n_reserved = req.n;
  vc.l = 1;
  vc.s = req.n;
  vc.l_n[best] = 1;
  vc.r_n[best] = need;
  return vc;
}

IntegerProgram build_vclos_ilp(const PhysicalCluster& c, int l, int s) {
  const auto& cfg = c.config();
  const int L = cfg.leaves, S = cfg.spines, T = cfg.gpus_per_server;
  IntegerProgram p;
  std::vector<int> lv(L), sv(S), rv(L);
  std::vector<int> cv(static_cast<size_t>(L) * S, -1);

  std::vector<int> leaf_order(L), spine_order(S);
  std::iota(leaf_order.begin(), leaf_order.end(), 0);
  std::iota(spine_order.begin(), spine_order.end(), 0);
  std::stable_sort(leaf_order.begin(), leaf_order.end(),
                   [&](int a, int b) { return c.idle_servers(a) < c.idle_servers(b); });
  std::stable_sort(spine_order.begin(), spine_order.end(),
                   [&](int a, int b) { return c.spine_free_ports(a) < c.spine_free_ports(b); });

  for (int n : leaf_order) {
    const int ub = c.idle_servers(n) * T >= s ? 1 : 0;
    lv[n] = p.add_var(fmt::format("l_{}", n), 0, ub, std::int64_t(c.idle_servers(n)) * T, true);
  }
  for (int m : spine_order)
    sv[m] = p.add_var(fmt::format("s_{}", m), 0, 1, c.spine_free_ports(m), true);
  for (int n = 0; n < L; ++n)
    for (int m = 0; m < S; ++m)
      cv[n * S + m] = p.add_var(fmt::format("c_{}_{}", n, m), 0, std::min(1, c.free_links(n, m)));
  for (int n = 0; n < L; ++n) rv[n] = p.add_var(fmt::format("r_{}", n), 0, c.idle_servers(n));

  std::vector<IlpTerm> row;
  for (int n = 0; n < L; ++n) row.push_back({lv[n], 1});
  p.add_constraint(row, Sense::Eq, l, "leaves");
  row.clear();
  for (int m = 0; m < S; ++m) row.push_back({sv[m], 1});
  p.add_constraint(row, Sense::Eq, s, "spines");
  for (int n = 0; n < L; ++n) {
    row.clear();
    for (int m = 0; m < S; ++m) row.push_back({cv[n * S + m], 1});
    row.push_back({lv[n], -s});
    p.add_constraint(row, Sense::Eq, 0, fmt::format("up_{}", n));
  }
  for (int m = 0; m < S; ++m) {
    row.clear();
    for (int n = 0; n < L; ++n) row.push_back({cv[n * S + m], 1});
    row.push_back({sv[m], -l});
    p.add_constraint(row, Sense::Eq, 0, fmt::format("down_{}", m));
  }
  for (int n = 0; n < L; ++n)
    for (int m = 0; m < S; ++m) {
      p.add_constraint({{cv[n * S + m], 1}, {lv[n], -1}}, Sense::Le, 0, fmt::format("cl_{}_{}", n, m));
      p.add_constraint({{cv[n * S + m], 1}, {sv[m], -1}}, Sense::Le, 0, fmt::format("cs_{}_{}", n, m));
    }
  for (int n = 0; n < L; ++n)
    p.add_constraint({{rv[n], T}, {lv[n], -s}}, Sense::Eq, 0, fmt::format("srv_{}", n));
  return p;
}

std::optional<VirtualClos> find_vclos(const JobRequest& req, const PhysicalCluster& c,
                                      const PlacementOptions& opt, PlacementStats* stats) {
  const auto& cfg = c.config();
  const auto np = normalize_gpu_count(req.n, cfg);
  if (!np || *np <= cfg.gpus_per_server) return std::nullopt;
  const int L = cfg.leaves, S = cfg.spines, T = cfg.gpus_per_server;
  for (auto [l, s] : vclos_shapes(*np, cfg)) {
    const IntegerProgram p = build_vclos_ilp(c, l, s);
    const IlpResult r = ilp_solve(p, opt.ilp_time_budget);
    count_ilp(stats, r);
    if (r.status != IlpStatus::Optimal) continue;

    // leaves and spines were declared in cost order, so look values up by name
    std::map<std::string, std::int64_t> val;
    for (int j = 0; j < p.num_vars(); ++j) val[p.vars()[j].name] = r.x[j];

    VirtualClos vc = base(req, c, PlacementStage::VClos);
    vc.n_reserved = *np;
    vc.l = l;
    vc.s = s;
    vc.objective = r.objective;
    for (int n = 0; n < L; ++n) vc.l_n[n] = static_cast<int>(val[fmt::format("l_{}", n)]);
    for (int m = 0; m < S; ++m) vc.s_m[m] = static_cast<int>(val[fmt::format("s_{}", m)]);
    for (int n = 0; n < L; ++n) {
      if (!vc.l_n[n]) continue;
      vc.r_n[n] = s / T;
      std::vector<int> servers = idle_servers_of_leaf(c, n);
      servers.resize(vc.r_n[n]);
      for (int sv : servers) append_server(c, sv, vc.gpus);
      vc.vleaf_leaf.push_back(n);
      std::vector<SlotId> vs;
      for (int m = 0; m < S; ++m) {
        vc.c[n * S + m] = static_cast<int>(val[fmt::format("c_{}_{}", n, m)]);
        if (!vc.c[n * S + m]) continue;
        SlotId pick = -1;
        for (SlotId sl : c.slots_to_spine(n, m))
          if (c.slot_owner(sl) == kNoJob) {
            pick = sl;
            break;
          }
        if (pick < 0) throw std::logic_error("vClos ILP chose a link that is not free");
        vs.push_back(pick);
        vc.slots.push_back(pick);
      }
      vc.vleaf_slots.push_back(std::move(vs));
    }
    return vc;
  }
  return std::nullopt;
}

std::optional<VirtualClos> ocs_leaf_pair(const JobRequest& req, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  if (!c.has_ocs()) return std::nullopt;
  const auto np = normalize_gpu_count(req.n, cfg);
  if (!np || *np <= cfg.gpus_per_server) return std::nullopt;
  const auto shapes = vclos_shapes(*np, cfg);
  if (std::none_of(shapes.begin(), shapes.end(), [](auto sh) { return sh.first == 2; }))
    return std::nullopt;
  const int half = *np / 2, T = cfg.gpus_per_server, K = cfg.ocs_count;

  // existing a<->b circuits first, then new ones one at a time from the OCS
  // with the most idle slots left on both sides, so neither leaf runs dry in
  // one OCS
  auto pairs_for = [&](int a, int b, std::vector<std::pair<SlotId, SlotId>>& out) {
    out.clear();
    std::vector<std::vector<SlotId>> left_a(K), left_b(K);
    for (int k = 0; k < K; ++k) {
      std::vector<SlotId> sb;
      for (SlotId x : c.leaf_slots_in_ocs(b, k))
        if (slot_rewirable(c, x)) sb.push_back(x);
      std::set<SlotId> used_b;
      for (SlotId x : c.leaf_slots_in_ocs(a, k)) {
        if (!slot_rewirable(c, x)) continue;
        const Peer& p = c.slot_peer(x);
        if (static_cast<int>(out.size()) < half && p.kind == Peer::Kind::Leaf &&
            c.slot_leaf(p.index) == b && std::count(sb.begin(), sb.end(), p.index)) {
          out.emplace_back(x, p.index);
          used_b.insert(p.index);
        } else {
          left_a[k].push_back(x);
        }
      }
      for (SlotId x : sb)
        if (!used_b.count(x)) left_b[k].push_back(x);
    }
    std::vector<size_t> next(K, 0);
    while (static_cast<int>(out.size()) < half) {
      int pick = -1;
      size_t room = 0;
      for (int k = 0; k < K; ++k) {
        const size_t r = std::min(left_a[k].size(), left_b[k].size()) - next[k];
        if (r > room) pick = k, room = r;
      }
      if (pick < 0) break;
      out.emplace_back(left_a[pick][next[pick]], left_b[pick][next[pick]]);
      ++next[pick];
    }
    return static_cast<int>(out.size()) >= half;
  };

  int ba = -1, bb = -1;
  std::int64_t best = 0;
  std::vector<std::pair<SlotId, SlotId>> pairs, best_pairs;
  for (int a = 0; a < cfg.leaves; ++a) {
    if (c.idle_servers(a) * T < half) continue;
    for (int b = a + 1; b < cfg.leaves; ++b) {
      if (c.idle_servers(b) * T < half) continue;
      const std::int64_t cost = std::int64_t(c.idle_servers(a) + c.idle_servers(b)) * T;
      if (ba >= 0 && cost >= best) continue;
      if (!pairs_for(a, b, pairs)) continue;
      ba = a, bb = b, best = cost, best_pairs = pairs;
    }
  }
  if (ba < 0) return std::nullopt;

  VirtualClos vc = base(req, c, PlacementStage::OcsLeafPair);
  vc.n_reserved = *np;
  vc.l = 2;
  vc.s = half;
  vc.objective = best;
  std::sort(best_pairs.begin(), best_pairs.end());
  std::map<int, OcsRewire> plan;
  std::vector<SlotId> va, vb;
  for (auto [x, y] : best_pairs) {
    va.push_back(x);
    vb.push_back(y);
    if (c.slot_peer(x) != Peer::leaf_slot(y)) {
      const int k = c.slot_ocs(x);
      plan[k].ocs = k;
      plan[k].moves.push_back({x, Peer::leaf_slot(y)});
    }
  }
  for (auto& [k, r] : plan) vc.rewire_plan.push_back(std::move(r));
  for (int n : {ba, bb}) {
    vc.l_n[n] = 1;
    vc.r_n[n] = half / T;
    std::vector<int> servers = idle_servers_of_leaf(c, n);
    servers.resize(vc.r_n[n]);
    for (int sv : servers) append_server(c, sv, vc.gpus);
    vc.vleaf_leaf.push_back(n);
  }
  vc.vleaf_slots = {va, vb};
  vc.slots = va;
  vc.slots.insert(vc.slots.end(), vb.begin(), vb.end());
  std::sort(vc.slots.begin(), vc.slots.end());
  return vc;
}

std::optional<VirtualClos> ocs_stage2_single_spine(const JobRequest& req, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  if (!c.has_ocs()) return std::nullopt;
  const int T = cfg.gpus_per_server, K = cfg.ocs_count;
  if (req.n <= T) return std::nullopt;
  const int servers_needed = ceil_div(req.n, T);
  const int need = servers_needed * T;

  std::vector<int> spines(cfg.spines);
  std::iota(spines.begin(), spines.end(), 0);
  std::stable_sort(spines.begin(), spines.end(),
                   [&](int a, int b) { return c.spine_free_ports(a) < c.spine_free_ports(b); });
  std::vector<int> leaves(cfg.leaves);
  std::iota(leaves.begin(), leaves.end(), 0);
  std::stable_sort(leaves.begin(), leaves.end(),
                   [&](int a, int b) { return c.idle_servers(a) < c.idle_servers(b); });

  for (int m : spines) {
    if (c.spine_free_ports(m) < need) continue;
    std::vector<int> room(K);
    for (int k = 0; k < K; ++k) room[k] = c.free_spine_ports(m, k);
    // per leaf and OCS, how many of its GPUs to hook to m
    std::map<int, std::map<int, int>> per_ocs_leaf;  // k -> leaf -> count
    std::vector<int> take(cfg.leaves, 0);
    int remaining = servers_needed;
    for (int n : leaves) {
      if (remaining == 0) break;
      int ports = 0;
      std::vector<int> avail(K);
      for (int k = 0; k < K; ++k) {
        avail[k] = std::min(c.free_leaf_ports(n, k), room[k]);
        ports += avail[k];
      }
      const int sv = std::min({c.idle_servers(n), ports / T, remaining});
      if (sv == 0) continue;
      take[n] = sv;
      remaining -= sv;
      // one link at a time into the OCS with the most spine room left, so
      // later leaves still find ports everywhere
      for (int want = sv * T; want > 0; --want) {
        int best = -1;
        for (int k = 0; k < K; ++k)
          if (avail[k] > 0 && (best < 0 || room[k] > room[best])) best = k;
        ++per_ocs_leaf[best][n];
        --avail[best];
        --room[best];
      }
    }
    if (remaining > 0) continue;

    std::map<int, std::vector<SlotId>> leaf_slots;
    std::vector<OcsRewire> plan;
    bool ok = true;
    for (const auto& [k, row] : per_ocs_leaf) {
      std::map<int, std::map<int, int>> demand;
      for (const auto& [n, x] : row) demand[n][m] = x;
      std::map<int, std::map<int, std::vector<SlotId>>> taken;
      OcsRewire rw;
      if (!plan_ocs(c, k, demand, taken, rw)) {
        ok = false;
        break;
      }
      for (auto& [n, row2] : taken)
        for (auto& [mm, v] : row2) leaf_slots[n].insert(leaf_slots[n].end(), v.begin(), v.end());
      if (!rw.moves.empty()) plan.push_back(std::move(rw));
    }
    if (!ok) continue;

    VirtualClos vc = base(req, c, PlacementStage::OcsSpine);
    vc.n_reserved = need;
    vc.s = 1;
    vc.l = 0;
    vc.s_m[m] = 1;
    vc.rewire_plan = std::move(plan);
    for (int n = 0; n < cfg.leaves; ++n) {
      if (!take[n]) continue;
      ++vc.l;
      vc.l_n[n] = 1;
      vc.r_n[n] = take[n];
      vc.c[n * cfg.spines + m] = take[n] * T;
      std::vector<int> servers = idle_servers_of_leaf(c, n);
      servers.resize(take[n]);
      std::vector<SlotId>& sl = leaf_slots[n];
      std::sort(sl.begin(), sl.end());
      int i = 0;
      for (int sv : servers)
        for (int g = 0; g < T; ++g) {
          vc.gpus.push_back(c.first_gpu_of_server(sv) + g);
          vc.vleaf_leaf.push_back(n);
          vc.vleaf_slots.push_back({sl[i]});
          vc.slots.push_back(sl[i++]);
        }
    }
    vc.objective = placement_cost(c, vc);
    return vc;
  }
  return std::nullopt;
}

IntegerProgram build_ocs_ilp(const PhysicalCluster& c, int l, int s, OcsIlpLayout* layout) {
  const auto& cfg = c.config();
  const int L = cfg.leaves, S = cfg.spines, T = cfg.gpus_per_server, K = std::max(1, cfg.ocs_count);
  IntegerProgram p;
  OcsIlpLayout lay;
  lay.leaf_var.assign(L, {});
  lay.spine_var.assign(S, -1);
  lay.server_var.assign(L, -1);

  std::vector<int> leaf_order(L), spine_order(S);
  std::iota(leaf_order.begin(), leaf_order.end(), 0);
  std::iota(spine_order.begin(), spine_order.end(), 0);
  std::stable_sort(leaf_order.begin(), leaf_order.end(),
                   [&](int a, int b) { return c.idle_servers(a) < c.idle_servers(b); });
  std::stable_sort(spine_order.begin(), spine_order.end(),
                   [&](int a, int b) { return c.spine_free_ports(a) < c.spine_free_ports(b); });

  std::vector<int> cap_a(L), leaf_free(L, 0);
  for (int n = 0; n < L; ++n) {
    for (int k = 0; k < K; ++k) leaf_free[n] += c.free_leaf_ports(n, k);
    cap_a[n] = std::min(c.idle_servers(n) * T / s, leaf_free[n] / s);
  }
  for (int n : leaf_order)
    for (int a = 0; a < cap_a[n]; ++a)
      lay.leaf_var[n].push_back(p.add_var(fmt::format("L_{}_{}", n, a), 0, 1,
                                          std::int64_t(c.idle_servers(n)) * T, true));
  // spines whose ports all sit on one OCS are counted per OCS in z_k; this
  // adds no solutions but lets infeasible spine counts fail before the
  // search enumerates individual spines
  std::vector<int> home(S, -1);
  std::vector<std::vector<int>> homed(K);
  for (int m = 0; m < S; ++m) {
    int seen = 0;
    for (int k = 0; k < K; ++k)
      if (c.spine_ports(m, k) > 0) ++seen, home[m] = k;
    if (seen != 1) home[m] = -1;
    else homed[home[m]].push_back(m);
  }
  std::vector<int> zv(K, -1);
  for (int k = 0; k < K; ++k)
    if (!homed[k].empty())
      zv[k] = p.add_var(fmt::format("z_{}", k), 0, static_cast<std::int64_t>(homed[k].size()), 0, true);
  for (int m : spine_order) {
    int ports = 0;
    for (int k = 0; k < K; ++k) ports += c.free_spine_ports(m, k);
    lay.spine_var[m] = p.add_var(fmt::format("s_{}", m), 0, ports >= l ? 1 : 0, c.spine_free_ports(m), true);
  }
  // y[n][m][k] = links of all virtual leaves on n to spine m through OCS k
  std::vector<std::vector<std::vector<int>>> y(L, std::vector<std::vector<int>>(S));
  for (int n = 0; n < L; ++n)
    for (int m = 0; m < S; ++m)
      for (int k = 0; k < K; ++k) {
        if (c.spine_ports(m, k) == 0 || cap_a[n] == 0) continue;
        const int ub = std::min({c.free_leaf_ports(n, k), c.free_spine_ports(m, k), cap_a[n]});
        const int v = p.add_var(fmt::format("c_{}_{}_{}", n, m, k), 0, std::max(0, ub));
        y[n][m].push_back(v);
        lay.link_vars.emplace_back(v, n, m, k);
      }
  for (int n = 0; n < L; ++n)
    lay.server_var[n] = p.add_var(fmt::format("r_{}", n), 0, c.idle_servers(n));

  auto leaf_terms = [&](int n, std::int64_t coef) {
    std::vector<IlpTerm> t;
    for (int v : lay.leaf_var[n]) t.push_back({v, coef});
    return t;
  };

  std::vector<IlpTerm> row;
  for (int n = 0; n < L; ++n)
    for (int v : lay.leaf_var[n]) row.push_back({v, 1});
  p.add_constraint(row, Sense::Eq, l, "leaves");
  for (int n = 0; n < L; ++n)
    for (size_t a = 1; a < lay.leaf_var[n].size(); ++a)
      p.add_constraint({{lay.leaf_var[n][a], 1}, {lay.leaf_var[n][a - 1], -1}}, Sense::Le, 0,
                       fmt::format("order_{}_{}", n, a));
  row.clear();
  for (int m = 0; m < S; ++m) row.push_back({lay.spine_var[m], 1});
  p.add_constraint(row, Sense::Eq, s, "spines");

  for (int n = 0; n < L; ++n)
    for (int m = 0; m < S; ++m) {
      if (y[n][m].empty()) continue;
      row.clear();
      for (int v : y[n][m]) row.push_back({v, 1});
      std::vector<IlpTerm> r1 = row;
      for (const IlpTerm& t : leaf_terms(n, -1)) r1.push_back(t);
      p.add_constraint(r1, Sense::Le, 0, fmt::format("cl_{}_{}", n, m));
      std::vector<IlpTerm> r2 = row;
      r2.push_back({lay.spine_var[m], -cap_a[n]});
      p.add_constraint(r2, Sense::Le, 0, fmt::format("cs_{}_{}", n, m));
    }
  // a chosen spine gets exactly one link from every virtual leaf, so
  // sum_k y >= v_n - A_n (1 - s_m); redundant but lets propagation see it early
  for (int n = 0; n < L; ++n)
    for (int m = 0; m < S; ++m) {
      if (cap_a[n] == 0) continue;
      row = leaf_terms(n, -1);
      for (int v : y[n][m]) row.push_back({v, 1});
      row.push_back({lay.spine_var[m], -cap_a[n]});
      p.add_constraint(row, Sense::Ge, -cap_a[n], fmt::format("full_{}_{}", n, m));
    }
  for (int n = 0; n < L; ++n) {
    row = leaf_terms(n, -s);
    for (int m = 0; m < S; ++m)
      for (int v : y[n][m]) row.push_back({v, 1});
    p.add_constraint(row, Sense::Eq, 0, fmt::format("up_{}", n));
  }
  for (int m = 0; m < S; ++m) {
    row.clear();
    for (int n = 0; n < L; ++n)
      for (int v : y[n][m]) row.push_back({v, 1});
    row.push_back({lay.spine_var[m], -l});
    p.add_constraint(row, Sense::Eq, 0, fmt::format("down_{}", m));
  }
  std::map<std::pair<int, int>, std::vector<IlpTerm>> by_leaf_ocs, by_spine_ocs;
  row.clear();
  for (const auto& [v, n, m, k] : lay.link_vars) {
    by_leaf_ocs[{n, k}].push_back({v, 1});
    by_spine_ocs[{m, k}].push_back({v, 1});
    row.push_back({v, 1});
  }
  for (auto& [key, t] : by_leaf_ocs)
    p.add_constraint(t, Sense::Le, c.free_leaf_ports(key.first, key.second),
                     fmt::format("leafport_{}_{}", key.first, key.second));
  for (auto& [key, t] : by_spine_ocs)
    p.add_constraint(t, Sense::Le, c.free_spine_ports(key.first, key.second),
                     fmt::format("spineport_{}_{}", key.first, key.second));
  p.add_constraint(row, Sense::Eq, std::int64_t(l) * s, "links");

  row.clear();
  for (int m = 0; m < S; ++m)
    if (home[m] < 0) row.push_back({lay.spine_var[m], 1});
  for (int k = 0; k < K; ++k) {
    if (zv[k] < 0) continue;
    row.push_back({zv[k], 1});
    std::vector<IlpTerm> t{{zv[k], -1}};
    for (int m : homed[k]) t.push_back({lay.spine_var[m], 1});
    p.add_constraint(t, Sense::Eq, 0, fmt::format("zdef_{}", k));
    const std::int64_t big = static_cast<std::int64_t>(homed[k].size());
    for (int n = 0; n < L; ++n)
      for (size_t a = 0; a < lay.leaf_var[n].size(); ++a) {
        // a leaf with more than a virtual leaves feeds each such spine a+1 links
        const std::int64_t room = c.free_leaf_ports(n, k) / static_cast<std::int64_t>(a + 1);
        if (room >= big) continue;
        p.add_constraint({{zv[k], 1}, {lay.leaf_var[n][a], big}}, Sense::Le, room + big,
                         fmt::format("zcap_{}_{}_{}", k, n, a));
      }
  }
  p.add_constraint(row, Sense::Eq, s, "spine_count");

  // interchangeable spines (and leaves) are used in index order
  std::map<std::vector<int>, int> last;
  for (int m = 0; m < S; ++m) {
    std::vector<int> key{c.spine_free_ports(m)};
    for (int k = 0; k < K; ++k) key.push_back(c.spine_ports(m, k)), key.push_back(c.free_spine_ports(m, k));
    auto [it, fresh] = last.try_emplace(key, m);
    if (!fresh) {
      p.add_constraint({{lay.spine_var[m], 1}, {lay.spine_var[it->second], -1}}, Sense::Le, 0,
                       fmt::format("sym_s_{}", m));
      it->second = m;
    }
  }
  last.clear();
  for (int n = 0; n < L; ++n) {
    std::vector<int> key{-1, c.idle_servers(n)};
    for (int k = 0; k < K; ++k) key.push_back(c.free_leaf_ports(n, k));
    auto [it, fresh] = last.try_emplace(key, n);
    if (!fresh) {
      row = leaf_terms(n, 1);
      for (const IlpTerm& t : leaf_terms(it->second, -1)) row.push_back(t);
      if (!row.empty()) p.add_constraint(row, Sense::Le, 0, fmt::format("sym_l_{}", n));
      it->second = n;
    }
  }
  for (int n = 0; n < L; ++n) {
    row = leaf_terms(n, -s);
    row.push_back({lay.server_var[n], T});
    p.add_constraint(row, Sense::Eq, 0, fmt::format("srv_{}", n));
  }
  if (layout) *layout = std::move(lay);
  return p;
}

std::optional<VirtualClos> ocs_find_clos(const JobRequest& req, const PhysicalCluster& c,
                                         const PlacementOptions& opt, PlacementStats* stats) {
  const auto& cfg = c.config();
  if (!c.has_ocs()) return std::nullopt;
  const auto np = normalize_gpu_count(req.n, cfg);
  if (!np || *np <= cfg.gpus_per_server) return std::nullopt;
  const int L = cfg.leaves, S = cfg.spines;
  for (auto [l, s] : vclos_shapes(*np, cfg)) {
    OcsIlpLayout lay;
    const IntegerProgram p = build_ocs_ilp(c, l, s, &lay);
    const IlpResult r = ilp_solve(p, opt.ilp_time_budget);
    count_ilp(stats, r);
    if (r.status != IlpStatus::Optimal) continue;

    VirtualClos vc = base(req, c, PlacementStage::OcsClos);
    vc.n_reserved = *np;
    vc.l = l;
    vc.s = s;
    vc.objective = r.objective;
    for (int n = 0; n < L; ++n)
      for (int v : lay.leaf_var[n]) vc.l_n[n] += static_cast<int>(r.x[v]);
    for (int m = 0; m < S; ++m) vc.s_m[m] = static_cast<int>(r.x[lay.spine_var[m]]);
    std::map<int, std::map<int, std::map<int, int>>> demand;  // k -> n -> m -> count
    for (const auto& [v, n, m, k] : lay.link_vars)
      if (r.x[v] > 0) {
        demand[k][n][m] += static_cast<int>(r.x[v]);
        vc.c[n * S + m] += static_cast<int>(r.x[v]);
      }
    std::map<int, std::map<int, std::vector<SlotId>>> taken;  // n -> m -> slots
    for (const auto& [k, d] : demand) {
      OcsRewire rw;
      if (!plan_ocs(c, k, d, taken, rw))
        throw std::logic_error(fmt::format("OCS ILP solution does not fit OCS {}", k));
      if (!rw.moves.empty()) vc.rewire_plan.push_back(std::move(rw));
    }
    for (int n = 0; n < L; ++n) {
      if (!vc.l_n[n]) continue;
      vc.r_n[n] = static_cast<int>(r.x[lay.server_var[n]]);
      std::vector<int> servers = idle_servers_of_leaf(c, n);
      servers.resize(vc.r_n[n]);
      for (int sv : servers) append_server(c, sv, vc.gpus);
      for (auto& [m, v] : taken[n]) std::sort(v.begin(), v.end());
      for (int a = 0; a < vc.l_n[n]; ++a) {
        vc.vleaf_leaf.push_back(n);
        std::vector<SlotId> vs;
        for (int m = 0; m < S; ++m)
          if (vc.s_m[m]) vs.push_back(taken[n][m].at(a));
        vc.slots.insert(vc.slots.end(), vs.begin(), vs.end());
        vc.vleaf_slots.push_back(std::move(vs));
      }
    }
    std::sort(vc.slots.begin(), vc.slots.end());
    return vc;
  }
  return std::nullopt;
}

std::optional<VirtualClos> locality_placement(const JobRequest& req, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  if (req.n <= cfg.gpus_per_server) {
    auto vc = stage0_single_server(req, c);
    if (vc) vc->stage = PlacementStage::Locality;
    return vc;
  }
  if (auto vc = stage1_single_leaf(req, c)) {
    vc->stage = PlacementStage::Locality;
    return vc;
  }
  const int need = ceil_div(req.n, cfg.gpus_per_server);
  std::vector<int> leaves(cfg.leaves);
  std::iota(leaves.begin(), leaves.end(), 0);
  std::stable_sort(leaves.begin(), leaves.end(),
                   [&](int a, int b) { return c.idle_servers(a) > c.idle_servers(b); });
  std::vector<int> servers;
  for (int n : leaves)
    for (int sv : idle_servers_of_leaf(c, n))
      if (static_cast<int>(servers.size()) < need) servers.push_back(sv);
  if (static_cast<int>(servers.size()) < need) return std::nullopt;
  std::sort(servers.begin(), servers.end());
  VirtualClos vc = base(req, c, PlacementStage::Locality);
  vc.gpus = take_gpus(c, servers, req.n);
  vc.n_reserved = req.n;
  for (int sv : servers) ++vc.r_n[c.leaf_of_server(sv)];
  for (int n = 0; n < cfg.leaves; ++n) vc.l_n[n] = vc.r_n[n] ? 1 : 0;
  vc.l = std::accumulate(vc.l_n.begin(), vc.l_n.end(), 0);
  return vc;
}

std::optional<VirtualClos> scattered_placement(const JobRequest& req, const PhysicalCluster& c) {
  if (c.idle_gpus() < req.n) return std::nullopt;
  VirtualClos vc = base(req, c, PlacementStage::Scattered);
  for (GpuId g = 0; g < c.config().total_gpus() && static_cast<int>(vc.gpus.size()) < req.n; ++g)
    if (c.gpu_owner(g) == kNoJob) vc.gpus.push_back(g);
  vc.n_reserved = req.n;
  for (GpuId g : vc.gpus) vc.l_n[c.leaf_of_gpu(g)] = 1;
  vc.l = std::accumulate(vc.l_n.begin(), vc.l_n.end(), 0);
  return vc;
}

std::optional<VirtualClos> place_vclos(const JobRequest& req, const PhysicalCluster& c,
                                       const PlacementOptions& opt, PlacementStats* stats) {
  if (req.n <= c.config().gpus_per_server) return stage0_single_server(req, c);
  if (auto vc = stage1_single_leaf(req, c)) return vc;
  return find_vclos(req, c, opt, stats);
}

std::optional<VirtualClos> place_ocs_vclos(const JobRequest& req, const PhysicalCluster& c,
                                           const PlacementOptions& opt, PlacementStats* stats) {
  if (req.n <= c.config().gpus_per_server) return stage0_single_server(req, c);
  if (auto vc = stage1_single_leaf(req, c)) return vc;
  if (auto vc = ocs_leaf_pair(req, c)) return vc;
  if (auto vc = ocs_stage2_single_spine(req, c)) return vc;
  return ocs_find_clos(req, c, opt, stats);
}

double commit(PhysicalCluster& c, const VirtualClos& vc) {
  double delay = 0.0;
  // switches reconfigure in parallel
  for (const OcsRewire& r : vc.rewire_plan) delay = std::max(delay, c.rewire_ocs(r.ocs, r.moves));
  c.reserve(vc.reservation());
  return delay;
}

RoutingTable build_routing_table(const VirtualClos& vc, const PhysicalCluster& c, int ranks,
                                 const SourceRoutingMap& map) {
  if (ranks < 0 || ranks > static_cast<int>(vc.gpus.size()))
    throw RoutingError(fmt::format("{} ranks requested from an allocation of {}", ranks, vc.gpus.size()));
  RoutingTable t;
  t.gpus.assign(vc.gpus.begin(), vc.gpus.begin() + ranks);
  t.uplink.assign(ranks, -1);
  t.vleaf.assign(ranks, 0);
  if (vc.vleaf_slots.empty()) {
    for (int r = 0; r < ranks; ++r) t.vleaf[r] = c.leaf_of_gpu(t.gpus[r]);
    return t;
  }
  const int per = static_cast<int>(vc.vleaf_slots[0].size());
  t.spine_slot.resize(vc.vleaf_slots.size());
  for (size_t v = 0; v < vc.vleaf_slots.size(); ++v)
    for (SlotId s : vc.vleaf_slots[v])
      if (c.slot_peer(s).is_spine()) t.spine_slot[v][c.slot_peer(s).index] = s;
  for (int r = 0; r < ranks; ++r) {
    const int v = r / per, port = r % per;
    int idx = port;
    if (!map.f.empty()) {
      if (v >= static_cast<int>(map.f.size()) || port >= static_cast<int>(map.f[v].size()))
        throw RoutingError(fmt::format("routing map has no entry for virtual leaf {} port {}", v, port));
      idx = map.f[v][port];
      if (idx < 0 || idx >= per) throw RoutingError(fmt::format("routing map entry {} out of range", idx));
    }
    t.vleaf[r] = v;
    t.uplink[r] = vc.vleaf_slots[v][idx];
  }
  return t;
}

std::string check_invariants(const VirtualClos& vc, const PhysicalCluster& c) {
  const auto& cfg = c.config();
  const int L = cfg.leaves, S = cfg.spines, T = cfg.gpus_per_server;
  if (vc.n < 1 || vc.n > vc.n_reserved) return fmt::format("n={} n_reserved={}", vc.n, vc.n_reserved);
  if (static_cast<int>(vc.gpus.size()) != vc.n_reserved)
    return fmt::format("{} gpus for n_reserved={}", vc.gpus.size(), vc.n_reserved);
  std::set<GpuId> gs(vc.gpus.begin(), vc.gpus.end());
  if (gs.size() != vc.gpus.size()) return "duplicate gpu";
  for (GpuId g : vc.gpus)
    if (c.gpu_owner(g) != vc.job_id) return fmt::format("gpu {} not held by job {}", g, vc.job_id);
  std::set<SlotId> ss(vc.slots.begin(), vc.slots.end());
  if (ss.size() != vc.slots.size()) return "duplicate slot";
  for (SlotId s : vc.slots)
    if (c.slot_owner(s) != vc.job_id) return fmt::format("slot {} not held by job {}", s, vc.job_id);
  if (!c.holds(vc.job_id)) return "job holds no reservation";
  const Reservation& res = c.reservation(vc.job_id);
  if (res.gpus.size() != vc.gpus.size() || res.slots.size() != vc.slots.size())
    return "reservation differs from allocation";
  if (!std::is_sorted(vc.gpus.begin(), vc.gpus.end()) && vc.stage != PlacementStage::OcsSpine)
    return "gpus not in leaf/server/port order";

  std::vector<int> gpus_on_leaf(L, 0);
  for (GpuId g : vc.gpus) ++gpus_on_leaf[c.leaf_of_gpu(g)];
  auto whole_servers = [&]() -> std::string {
    std::map<int, int> per;
    for (GpuId g : vc.gpus) ++per[c.server_of_gpu(g)];
    for (auto [sv, k] : per)
      if (k != T) return fmt::format("server {} only partly used", sv);
    return "";
  };

  switch (vc.stage) {
    case PlacementStage::SingleServer: {
      if (vc.n > T) return "single-server job larger than a server";
      for (GpuId g : vc.gpus)
        if (c.server_of_gpu(g) != c.server_of_gpu(vc.gpus[0])) return "gpus span servers";
      if (!vc.slots.empty()) return "single-server job holds links";
      return "";
    }
    case PlacementStage::SingleLeaf: {
      for (GpuId g : vc.gpus)
        if (c.leaf_of_gpu(g) != c.leaf_of_gpu(vc.gpus[0])) return "gpus span leaves";
      if (!vc.slots.empty()) return "single-leaf job holds links";
      return "";
    }
    case PlacementStage::Locality:
    case PlacementStage::Scattered:
      if (!vc.slots.empty()) return "unreserved placement holds links";
      return "";
    case PlacementStage::OcsLeafPair: {
      if (auto e = whole_servers(); !e.empty()) return e;
      if (vc.vleaf_slots.size() != 2 || vc.vleaf_leaf.size() != 2) return "leaf pair needs two virtual leaves";
      const auto& a = vc.vleaf_slots[0];
      const auto& b = vc.vleaf_slots[1];
      if (static_cast<int>(a.size()) != vc.s || static_cast<int>(b.size()) != vc.s) return "leaf pair link count";
      if (2 * vc.s != vc.n_reserved) return "leaf pair size";
      for (size_t i = 0; i < a.size(); ++i) {
        if (c.slot_leaf(a[i]) != vc.vleaf_leaf[0] || c.slot_leaf(b[i]) != vc.vleaf_leaf[1])
          return "leaf pair slot on wrong leaf";
        if (c.slot_peer(a[i]) != Peer::leaf_slot(b[i])) return fmt::format("slot {} not wired to {}", a[i], b[i]);
      }
      for (int n = 0; n < L; ++n)
        if (gpus_on_leaf[n] != (vc.l_n[n] ? vc.s : 0)) return fmt::format("leaf {} gpu count", n);
      return "";
    }
    case PlacementStage::OcsSpine: {
      if (auto e = whole_servers(); !e.empty()) return e;
      int spine = -1;
      for (int m = 0; m < S; ++m)
        if (vc.s_m[m]) spine = m;
      if (std::accumulate(vc.s_m.begin(), vc.s_m.end(), 0) != 1) return "single spine job uses several spines";
      if (vc.vleaf_slots.size() != vc.gpus.size()) return "one link per gpu expected";
      for (size_t i = 0; i < vc.gpus.size(); ++i) {
        const SlotId s = vc.vleaf_slots[i].at(0);
        if (c.slot_leaf(s) != c.leaf_of_gpu(vc.gpus[i])) return fmt::format("slot {} on wrong leaf", s);
        if (c.slot_peer(s) != Peer::spine(spine)) return fmt::format("slot {} not wired to spine {}", s, spine);
      }
      return "";
    }
    case PlacementStage::VClos:
    case PlacementStage::OcsClos:
      break;
  }

  if (auto e = whole_servers(); !e.empty()) return e;
  const int l = vc.l, s = vc.s;
  if (l < 2 || l * s != vc.n_reserved) return fmt::format("l*s={}*{} != {}", l, s, vc.n_reserved);
  if (std::accumulate(vc.l_n.begin(), vc.l_n.end(), 0) != l) return "sum l_n != l";
  if (std::accumulate(vc.s_m.begin(), vc.s_m.end(), 0) != s) return "sum s_m != s";
  if (vc.stage == PlacementStage::VClos)
    for (int n = 0; n < L; ++n)
      if (vc.l_n[n] > 1) return "vClos leaf hosts more than one virtual leaf";
  for (int n = 0; n < L; ++n) {
    int row = 0;
    for (int m = 0; m < S; ++m) {
      const int x = vc.c[n * S + m];
      row += x;
      if (x > vc.l_n[n] * vc.s_m[m]) return fmt::format("c[{}][{}] exceeds l_n*s_m", n, m);
    }
    if (row != s * vc.l_n[n]) return fmt::format("leaf {} has {} uplinks, want {}", n, row, s * vc.l_n[n]);
    if (T * vc.r_n[n] != s * vc.l_n[n]) return fmt::format("T*r_n != s*l_n on leaf {}", n);
    if (gpus_on_leaf[n] != s * vc.l_n[n]) return fmt::format("leaf {} gpu count", n);
  }
  for (int m = 0; m < S; ++m) {
    int col = 0;
    for (int n = 0; n < L; ++n) col += vc.c[n * S + m];
    if (col != l * vc.s_m[m]) return fmt::format("spine {} has {} links, want {}", m, col, l * vc.s_m[m]);
  }
  if (static_cast<int>(vc.vleaf_slots.size()) != l) return "virtual leaf count";
  for (int v = 0; v < l; ++v) {
    std::set<int> sp;
    for (SlotId sl : vc.vleaf_slots[v]) {
      if (c.slot_leaf(sl) != vc.vleaf_leaf[v]) return fmt::format("slot {} on wrong leaf", sl);
      const Peer& p = c.slot_peer(sl);
      if (!p.is_spine() || !vc.s_m[p.index]) return fmt::format("slot {} not wired to a chosen spine", sl);
      sp.insert(p.index);
    }
    if (static_cast<int>(sp.size()) != s || vc.vleaf_slots[v].size() != sp.size())
      return fmt::format("virtual leaf {} does not reach every spine once", v);
  }
  return "";
}

}  // namespace vclos
