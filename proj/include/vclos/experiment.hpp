#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vclos/simulator.hpp"

namespace vclos {

struct ExperimentConfig {
  ClusterConfig cluster{8, 64, 8, 1, 8, 0.05};
  std::vector<Strategy> strategies;
  std::vector<Scheduler> schedulers{Scheduler::FIFO};
  std::vector<double> lambda_values{120.0};
  std::vector<std::uint64_t> seeds;
  std::optional<std::filesystem::path> trace_path;  // replaces synthesis when set
  JobMix mix = default_job_mix();
  int job_count = 5000;
  std::filesystem::path output_dir = "results";
  double nic_gbps = 100.0;
  double queue_sample_interval = 600.0;
  double edf_slack = 2.0;
  double ilp_time_budget = 10.0;
  bool check_invariants = false;
  int workers = 1;
};

/// YAML config. Errors (ConfigError) name the origin, line and field.
/// Relative trace paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                              const std::filesystem::path& base_dir = {});

struct Cell {
  Strategy strategy = Strategy::VClos;
  Scheduler scheduler = Scheduler::FIFO;
  std::optional<double> lambda;  // empty for a trace file
  std::uint64_t seed = 1;
  std::string name() const;
};

std::vector<Cell> expand_cells(const ExperimentConfig& cfg);

struct CellResult {
  Cell cell;
  std::optional<SimReport> report;
  std::string error;
};

/// Runs every cell on a pool of cfg.workers threads; results keep cell order.
std::vector<CellResult> run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(const CellResult&)>& on_done = {});

/// Per-cell CSV and summary JSON, plus summary.csv when there is more than
/// one cell. Returns the written paths.
std::vector<std::filesystem::path> write_results(const ExperimentConfig& cfg,
                                                 const std::vector<CellResult>& results);

/// Seed-averaged metrics, one row per (scheduler, lambda, metric) and one
/// column per strategy.
std::string summary_table(const ExperimentConfig& cfg, const std::vector<CellResult>& results);

/// Writes via a temporary file and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace vclos
