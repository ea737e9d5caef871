#include "vclos/patterns.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <map>
#include <set>

#include <fmt/format.h>

#include "json.hpp"

namespace vclos {

namespace {

void require_ranks(int n, const char* who) {
  if (n < 2) throw PatternError(fmt::format("{}: need at least 2 ranks (got {})", who, n));
}

Flow make_flow(int src, int dst, double bytes, int begin, int count, ChunkOp op) {
  return Flow{src, dst, bytes, begin, count, op};
}

void push_step(CommSchedule& s, std::vector<Flow> flows) {
  CommStep step;
  step.index = static_cast<int>(s.steps.size());
  step.flows = std::move(flows);
  s.steps.push_back(std::move(step));
}

// ring over `members`, data split into members.size() chunks
void append_ring(CommSchedule& s, const std::vector<int>& members, double data_bytes) {
  const int n = static_cast<int>(members.size());
  const double chunk = data_bytes / n;
  for (int t = 0; t < n - 1; ++t) {
    std::vector<Flow> flows;
    for (int i = 0; i < n; ++i) {
      const int c = ((i - t) % n + n) % n;
      flows.push_back(make_flow(members[i], members[(i + 1) % n], chunk, c, 1, ChunkOp::Reduce));
    }
    push_step(s, std::move(flows));
  }
  for (int t = 0; t < n - 1; ++t) {
    std::vector<Flow> flows;
    for (int i = 0; i < n; ++i) {
      const int c = ((i + 1 - t) % n + n) % n;
      flows.push_back(make_flow(members[i], members[(i + 1) % n], chunk, c, 1, ChunkOp::Copy));
    }
    push_step(s, std::move(flows));
  }
}

}  // namespace

std::string_view to_string(Collective c) {
  switch (c) {
    case Collective::Ring: return "ring";
    case Collective::HierRing: return "hier_ring";
    case Collective::HD: return "hd";
    case Collective::AlltoAll: return "alltoall";
    case Collective::Pipeline: return "pipeline";
    case Collective::DoubleBinaryTree: return "double_binary_tree";
  }
  return "?";
}

std::optional<Collective> parse_collective(std::string_view name) {
  std::string key;
  for (char ch : name) {
    if (ch == '-' || ch == ' ') ch = '_';
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  static const std::map<std::string, Collective, std::less<>> names = {
      {"ring", Collective::Ring},
      {"hier_ring", Collective::HierRing},
      {"hierarchical_ring", Collective::HierRing},
      {"hierring", Collective::HierRing},
      {"hd", Collective::HD},
      {"halving_doubling", Collective::HD},
      {"alltoall", Collective::AlltoAll},
      {"all2all", Collective::AlltoAll},
      {"pipeline", Collective::Pipeline},
      {"double_binary_tree", Collective::DoubleBinaryTree},
      {"dbt", Collective::DoubleBinaryTree},
      {"tree", Collective::DoubleBinaryTree},
  };
  auto it = names.find(key);
  if (it == names.end()) return std::nullopt;
  return it->second;
}

CommSchedule ring_steps(int n, double data_bytes) {
  require_ranks(n, "ring");
  CommSchedule s{Collective::Ring, n, n, {}};
  std::vector<int> members(n);
  for (int i = 0; i < n; ++i) members[i] = i;
  append_ring(s, members, data_bytes);
  return s;
}

CommSchedule hd_steps(int n, double data_bytes) {
  require_ranks(n, "hd");
  const int p = static_cast<int>(std::bit_floor(static_cast<unsigned>(n)));
  const int k = std::countr_zero(static_cast<unsigned>(p));
  const int extra = n - p;
  CommSchedule s{Collective::HD, n, p, {}};

  // fold the ranks above p into their partner i
  if (extra > 0) {
    std::vector<Flow> flows;
    for (int i = 0; i < extra; ++i) {
      flows.push_back(make_flow(i, i + p, data_bytes, 0, p, ChunkOp::Reduce));
      flows.push_back(make_flow(i + p, i, data_bytes, 0, p, ChunkOp::Reduce));
    }
    push_step(s, std::move(flows));
  }

  // recursive halving: rank i keeps the half picked by bit t
  std::vector<int> begin(p, 0);
  int size = p;
  for (int t = 0; t < k; ++t) {
    const int half = size / 2;
    std::vector<Flow> flows;
    for (int i = 0; i < p; ++i) {
      const int bit = (i >> t) & 1;
      const int give = begin[i] + (1 - bit) * half;
      flows.push_back(make_flow(i, i ^ (1 << t), data_bytes / (2 << t), give, half, ChunkOp::Reduce));
    }
    for (int i = 0; i < p; ++i) begin[i] += ((i >> t) & 1) * half;
    size = half;
    push_step(s, std::move(flows));
  }
  // recursive doubling mirrors it
  for (int t = k - 1; t >= 0; --t) {
    std::vector<Flow> flows;
    for (int i = 0; i < p; ++i)
      flows.push_back(make_flow(i, i ^ (1 << t), data_bytes / (2 << t), begin[i], size, ChunkOp::Copy));
    const std::vector<int> prev = begin;
    for (int i = 0; i < p; ++i) begin[i] = std::min(prev[i], prev[i ^ (1 << t)]);
    size *= 2;
    push_step(s, std::move(flows));
  }

  if (extra > 0) {
    std::vector<Flow> flows;
    for (int i = 0; i < extra; ++i) flows.push_back(make_flow(i, i + p, data_bytes, 0, p, ChunkOp::Copy));
    push_step(s, std::move(flows));
  }
  return s;
}

CommSchedule hierarchical_ring_steps(int n, int t, double data_bytes) {
  if (t < 1) throw PatternError(fmt::format("hier_ring: ranks per server must be >= 1 (got {})", t));
  if (n < 1 || n % t != 0)
    throw PatternError(fmt::format("hier_ring: {} ranks do not split into servers of {}", n, t));
  if (n < 2) throw PatternError("hier_ring: need at least 2 ranks (got 1)");
  const int servers = n / t;
  CommSchedule s{Collective::HierRing, n, servers, {}};

  // chain-reduce inside each server towards its first rank
  for (int j = t - 1; j >= 1; --j) {
    std::vector<Flow> flows;
    for (int m = 0; m < servers; ++m)
      flows.push_back(make_flow(m * t + j, m * t + j - 1, data_bytes, 0, servers, ChunkOp::Reduce));
    push_step(s, std::move(flows));
  }
  if (servers >= 2) {
    std::vector<int> reps(servers);
    for (int m = 0; m < servers; ++m) reps[m] = m * t;
    append_ring(s, reps, data_bytes);
  }
  for (int j = 0; j + 1 < t; ++j) {
    std::vector<Flow> flows;
    for (int m = 0; m < servers; ++m)
      flows.push_back(make_flow(m * t + j, m * t + j + 1, data_bytes, 0, servers, ChunkOp::Copy));
    push_step(s, std::move(flows));
  }
  return s;
}

CommSchedule alltoall_steps(int n, double data_bytes) {
  require_ranks(n, "alltoall");
  CommSchedule s{Collective::AlltoAll, n, n, {}};
  for (int t = 0; t < n - 1; ++t) {
    std::vector<Flow> flows;
    for (int i = 0; i < n; ++i) {
      const int d = (i + t + 1) % n;
      // each rank ships the chunk addressed to d
      flows.push_back(make_flow(i, d, data_bytes / n, d, 1, ChunkOp::Copy));
    }
    push_step(s, std::move(flows));
  }
  return s;
}

CommSchedule pipeline_steps(int n, double data_bytes) {
  require_ranks(n, "pipeline");
  CommSchedule s{Collective::Pipeline, n, 1, {}};
  std::vector<Flow> fwd, bwd;
  for (int i = 0; i + 1 < n; ++i) fwd.push_back(make_flow(i, i + 1, data_bytes, 0, 1, ChunkOp::Copy));
  for (int i = n - 1; i > 0; --i) bwd.push_back(make_flow(i, i - 1, data_bytes, 0, 1, ChunkOp::Copy));
  push_step(s, std::move(fwd));
  push_step(s, std::move(bwd));
  return s;
}

int dbt_parent(int x, int n) {
  const int root = static_cast<int>(std::bit_floor(static_cast<unsigned>(n)));
  if (x == root) return 0;
  int p = x;
  do {
    const int b = p & -p;
    p = (p & (2 * b)) == 0 ? p + b : p - b;
  } while (p > n);
  return p;
}

CommSchedule double_binary_tree_steps(int n, double data_bytes) {
  require_ranks(n, "double_binary_tree");
  CommSchedule s{Collective::DoubleBinaryTree, n, 2, {}};
  auto rank_a = [](int x) { return x - 1; };
  auto rank_b = [n](int x) { return x == 1 ? n - 1 : x - 2; };
  std::vector<Flow> up, down;
  for (int x = 1; x <= n; ++x) {
    const int p = dbt_parent(x, n);
    if (p == 0) continue;
    up.push_back(make_flow(rank_a(x), rank_a(p), data_bytes / 2, 0, 1, ChunkOp::Reduce));
    up.push_back(make_flow(rank_b(x), rank_b(p), data_bytes / 2, 1, 1, ChunkOp::Reduce));
    down.push_back(make_flow(rank_a(p), rank_a(x), data_bytes / 2, 0, 1, ChunkOp::Copy));
    down.push_back(make_flow(rank_b(p), rank_b(x), data_bytes / 2, 1, 1, ChunkOp::Copy));
  }
  push_step(s, std::move(up));
  push_step(s, std::move(down));
  return s;
}

CommSchedule make_schedule(Collective c, int n, double data_bytes, int gpus_per_server) {
  switch (c) {
    case Collective::Ring: return ring_steps(n, data_bytes);
    case Collective::HierRing: return hierarchical_ring_steps(n, gpus_per_server, data_bytes);
    case Collective::HD: return hd_steps(n, data_bytes);
    case Collective::AlltoAll: return alltoall_steps(n, data_bytes);
    case Collective::Pipeline: return pipeline_steps(n, data_bytes);
    case Collective::DoubleBinaryTree: return double_binary_tree_steps(n, data_bytes);
  }
  throw PatternError("unknown collective");
}

bool is_leafwise_permutation(const CommStep& step, const std::function<int(int)>& leaf,
                             const std::function<int(int)>& port) {
  std::set<int> senders, receivers;
  std::set<std::pair<int, int>> out_ports;
  std::map<std::pair<int, int>, int> into;  // (port, dst leaf) -> src leaf
  bool ok = true;
  for (const Flow& f : step.flows) {
    const int a = leaf(f.src), b = leaf(f.dst);
    if (a < 0) throw PatternError(fmt::format("rank {} has no leaf", f.src));
    if (b < 0) throw PatternError(fmt::format("rank {} has no leaf", f.dst));
    if (f.src == f.dst) ok = false;
    if (!senders.insert(f.src).second || !receivers.insert(f.dst).second) ok = false;
    if (a == b) continue;
    const int p = port(f.src);
    if (!out_ports.emplace(a, p).second) ok = false;
    auto [it, fresh] = into.emplace(std::make_pair(p, b), a);
    if (!fresh && it->second != a) ok = false;
  }
  return ok;
}

bool is_leafwise_permutation(const CommStep& step, const std::vector<int>& rank_to_leaf) {
  std::vector<int> local(rank_to_leaf.size(), -1);
  std::map<int, int> seen;
  for (size_t r = 0; r < rank_to_leaf.size(); ++r)
    if (rank_to_leaf[r] >= 0) local[r] = seen[rank_to_leaf[r]]++;
  auto lookup = [&](const std::vector<int>& v) {
    return [&v](int r) { return r >= 0 && r < static_cast<int>(v.size()) ? v[r] : -1; };
  };
  return is_leafwise_permutation(step, lookup(rank_to_leaf), lookup(local));
}

bool is_strict_leaf_permutation(const CommStep& step, const std::vector<int>& rank_to_leaf) {
  auto leaf = [&](int r) {
    if (r < 0 || r >= static_cast<int>(rank_to_leaf.size()) || rank_to_leaf[r] < 0)
      throw PatternError(fmt::format("rank {} has no leaf", r));
    return rank_to_leaf[r];
  };
  std::set<int> senders, receivers;
  std::map<int, int> fwd, back;
  bool ok = true;
  for (const Flow& f : step.flows) {
    const int a = leaf(f.src), b = leaf(f.dst);
    if (f.src == f.dst) ok = false;
    if (!senders.insert(f.src).second || !receivers.insert(f.dst).second) ok = false;
    if (a == b) continue;
    auto [i, fi] = fwd.emplace(a, b);
    auto [j, fj] = back.emplace(b, a);
    if ((!fi && i->second != b) || (!fj && j->second != a)) ok = false;
  }
  return ok;
}

std::string schedule_to_jsonl(const CommSchedule& s) {
  std::string out;
  for (const CommStep& step : s.steps) {
    nlohmann::json j;
    j["algo"] = to_string(s.algo);
    j["n_ranks"] = s.n_ranks;
    j["step"] = step.index;
    auto& flows = j["flows"] = nlohmann::json::array();
    for (const Flow& f : step.flows)
      flows.push_back({{"src", f.src}, {"dst", f.dst}, {"bytes", f.bytes},
                       {"op", f.op == ChunkOp::Reduce ? "reduce" : "copy"}});
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace vclos
