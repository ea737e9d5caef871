#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vclos {

enum class Collective : std::uint8_t { Ring, HierRing, HD, AlltoAll, Pipeline, DoubleBinaryTree };

std::string_view to_string(Collective c);
/// Accepts the canonical names plus a few aliases ("hd", "all2all", "dbt", ...).
std::optional<Collective> parse_collective(std::string_view name);

enum class ChunkOp : std::uint8_t { Reduce, Copy };

/// One point-to-point transfer inside a step, in rank space. The chunk range
/// lets tests replay the data movement; the simulator only looks at bytes.
struct Flow {
  int src = 0;
  int dst = 0;
  double bytes = 0.0;
  int chunk_begin = 0;
  int chunk_count = 0;
  ChunkOp op = ChunkOp::Copy;
};

struct CommStep {
  int index = 0;
  std::vector<Flow> flows;
};

struct CommSchedule {
  Collective algo = Collective::Ring;
  int n_ranks = 0;
  int chunks = 1;  // data is split into this many equal chunks
  std::vector<CommStep> steps;
};

class PatternError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

CommSchedule ring_steps(int n, double data_bytes);
CommSchedule hd_steps(int n, double data_bytes);
CommSchedule hierarchical_ring_steps(int n, int t, double data_bytes);
CommSchedule alltoall_steps(int n, double data_bytes);
CommSchedule pipeline_steps(int n, double data_bytes);
/// Two in-order binary trees, the second shifted by one rank. For even n every
/// rank is a leaf of exactly one tree; odd n leaves rank n-1 a leaf of both.
CommSchedule double_binary_tree_steps(int n, double data_bytes);

/// Dispatch by enum; gpus_per_server is only used by HierRing.
CommSchedule make_schedule(Collective c, int n, double data_bytes, int gpus_per_server);

/// Parent of node x (1-based) in the in-order tree over 1..n, or 0 for the root.
int dbt_parent(int x, int n);

/// Leaf-wise permutation check. `port` gives the server-facing port each rank
/// is routed from (its local index on the leaf for a single job). The step
/// passes iff every rank sends and receives at most once, no two cross-leaf
/// flows leave the same (leaf, port), and for a fixed port no two source
/// leaves target the same destination leaf. Throws PatternError for a rank
/// the mapping does not cover (negative leaf).
bool is_leafwise_permutation(const CommStep& step, const std::function<int(int)>& leaf,
                             const std::function<int(int)>& port);
/// Single-job form: ports are local indices in ascending rank order per leaf.
bool is_leafwise_permutation(const CommStep& step, const std::vector<int>& rank_to_leaf);

/// The literal leaf-level rule: cross-leaf flows from different source leaves
/// never share a destination leaf and a leaf sends to at most one other leaf.
bool is_strict_leaf_permutation(const CommStep& step, const std::vector<int>& rank_to_leaf);

/// One JSON object per step, newline separated.
std::string schedule_to_jsonl(const CommSchedule& s);

}  // namespace vclos
