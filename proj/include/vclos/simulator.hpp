#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "vclos/placement.hpp"
#include "vclos/workload.hpp"

namespace vclos {

enum class Strategy : std::uint8_t { ECMP, Balanced, SR, VClos, OcsVClos, Best, OcsRelax };
enum class Scheduler : std::uint8_t { FIFO, EDF, FF };

std::string_view to_string(Strategy s);
std::string_view to_string(Scheduler s);
std::optional<Strategy> parse_strategy(std::string_view name);
std::optional<Scheduler> parse_scheduler(std::string_view name);

struct SimOptions {
  ClusterConfig cluster{8, 64, 8, 1, 8, 0.05};
  Strategy strategy = Strategy::VClos;
  Scheduler scheduler = Scheduler::FIFO;
  std::uint64_t seed = 1;
  double nic_gbps = 100.0;
  double queue_sample_interval = 600.0;
  double edf_slack = 2.0;  // deadline = arrival + slack * ideal runtime
  double ilp_time_budget = 10.0;
  bool check_invariants = false;  // verify link capacity and isolation at every event
};

/// T_iter = max(compute, (1 - alpha) * comm) + alpha * comm.
double iteration_time(const JobProfile& p, double comm_time_actual, double comm_time_ideal);

/// Communication time of one iteration with every fabric flow at full NIC
/// rate; flows between GPUs of one server cost nothing. gpus maps ranks.
double ideal_comm_time(const CommSchedule& s, const std::vector<GpuId>& gpus, const ClusterConfig& c,
                       double nic_bytes_per_s);

/// Standalone runtime on whole contiguous servers with no contention.
double ideal_runtime(const JobProfile& p, const ClusterConfig& c, double nic_gbps);

struct JobRecord {
  JobId id = 0;
  std::string model_tag;
  int n = 0;
  std::string batch_size;
  double arrival = 0.0;
  double start = 0.0;   // when the job begins running (after any rewire)
  double finish = 0.0;
  double jwt = 0.0;
  double jrt = 0.0;
  double jct = 0.0;
  double ideal_jrt = 0.0;
  double rewire_delay = 0.0;
  int gpus_reserved = 0;
  std::string stage;
  bool rejected = false;
  std::string error;
};

struct FragmentationCount {
  long gpu_caused = 0;
  long network_caused = 0;
  // failures with enough idle GPUs in total, whether or not whole servers
  // were available
  long idle_sufficient = 0;
};

struct SimReport {
  SimOptions options;
  std::vector<JobRecord> jobs;
  std::vector<std::pair<double, int>> queue_depth;  // (time, waiting jobs)
  FragmentationCount fragmentation;
  PlacementStats placement;
  double avg_jrt = 0, avg_jwt = 0, avg_jct = 0;
  double stability = 0;
  std::map<std::tuple<std::string, int, std::string>, double> stability_groups;
  double makespan = 0;
  long events = 0;
  long rate_updates = 0;
  int max_link_flows = 0;      // most flows ever seen on one fabric link
  long capacity_violations = 0;
  long isolation_violations = 0;  // reserved links shared by two jobs
  long rejected = 0;

  nlohmann::ordered_json summary_json() const;
  std::string jobs_csv() const;
};

/// Discrete-event run of a trace. Deterministic in (trace, options).
SimReport simulate(const std::vector<Job>& trace, const SimOptions& options);

/// Population standard deviation of JCT per (model_tag, N, batch_size) group
/// with at least two jobs, and their mean.
double stability(const std::vector<JobRecord>& jobs,
                 std::map<std::tuple<std::string, int, std::string>, double>* groups = nullptr);

/// Candidate order for a waiting queue: FIFO keeps arrival order, EDF sorts
/// by deadline, FF by GPU count (ties by arrival, then id).
struct QueueEntry {
  JobId id = 0;
  double arrival = 0;
  double deadline = 0;
  int n = 0;
};
std::vector<JobId> schedule_order(std::vector<QueueEntry> queue, Scheduler policy);

}  // namespace vclos
