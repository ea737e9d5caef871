#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "vclos/experiment.hpp"
#include "vclos/routing.hpp"

using namespace vclos;
using nlohmann::ordered_json;

namespace {

constexpr int kSchemaVersion = 1;

template <class T, class F>
std::vector<T> parse_list(const std::string& csv, F parse, const char* what) {
  std::vector<T> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    auto v = parse(tok);
    if (!v) throw ConfigError(fmt::format("unknown {} '{}'", what, tok));
    out.push_back(*v);
  }
  return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int workers, const std::string& strategies,
            const std::string& schedulers, const std::string& seeds, const std::string& lambdas, bool json) {
  ExperimentConfig cfg = load_config(config_path);
  // precedence: flag, then environment, then file
  if (const char* env = std::getenv("VCLOS_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (workers > 0) cfg.workers = workers;
  if (!strategies.empty()) cfg.strategies = parse_list<Strategy>(strategies, parse_strategy, "strategy");
  if (!schedulers.empty()) cfg.schedulers = parse_list<Scheduler>(schedulers, parse_scheduler, "scheduler");
  if (!seeds.empty())
    cfg.seeds = parse_list<std::uint64_t>(
        seeds, [](const std::string& s) { return std::optional<std::uint64_t>(std::stoull(s)); }, "seed");
  if (!lambdas.empty())
    cfg.lambda_values =
        parse_list<double>(lambdas, [](const std::string& s) { return std::optional<double>(std::stod(s)); }, "lambda");
  if (cfg.strategies.empty() || cfg.seeds.empty()) throw ConfigError("strategies and seeds must not be empty");

  const auto results = run_experiment(cfg, [&](const CellResult& r) {
    if (r.report)
      fmt::print(stderr, "{}: avg JCT {:.1f} s, JRT {:.1f} s, JWT {:.1f} s\n", r.cell.name(), r.report->avg_jct,
                 r.report->avg_jrt, r.report->avg_jwt);
    else
      fmt::print(stderr, "{}: FAILED: {}\n", r.cell.name(), r.error);
  });
  const auto files = write_results(cfg, results);
  int failed = 0;
  for (const auto& r : results) failed += !r.report;

  if (json) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["output_dir"] = cfg.output_dir.string();
    auto& cells = j["cells"] = ordered_json::array();
    for (const auto& r : results) {
      ordered_json c;
      c["name"] = r.cell.name();
      c["ok"] = r.report.has_value();
      if (r.report) {
        c["avg_jct"] = r.report->avg_jct;
        c["avg_jrt"] = r.report->avg_jrt;
        c["avg_jwt"] = r.report->avg_jwt;
      } else {
        c["error"] = r.error;
      }
      cells.push_back(std::move(c));
    }
    auto& fs = j["files"] = ordered_json::array();
    for (const auto& f : files) fs.push_back(f.string());
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << summary_table(cfg, results);
  }
  return failed ? 1 : 0;
}

int cmd_collisions(const std::string& scales, long trials, std::uint64_t seed, const std::string& out, bool json) {
  const auto sizes =
      parse_list<int>(scales, [](const std::string& s) { return std::optional<int>(std::stoi(s)); }, "scale");
  std::string csv = "gpus,leaves,spines,trials,flows,p_any_contention,p_flow_contended,p_flow_on_ge6,max_load\n";
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  auto& rows = j["scales"] = ordered_json::array();
  for (int g : sizes) {
    const MonteCarloScale sc = monte_carlo_shape(g);
    const ContentionSample s = collision_monte_carlo(sc, trials, seed);
    const int worst = s.link_histogram.empty() ? 0 : s.link_histogram.rbegin()->first;
    const double any = static_cast<double>(s.trials_with_contention) / s.trials;
    const double flow = s.flows ? static_cast<double>(s.contended_flows) / s.flows : 0.0;
    const double ge6 = s.flows ? static_cast<double>(s.flows_at_least6) / s.flows : 0.0;
    csv += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{}\n", sc.gpus, sc.leaves, sc.spines, s.trials, s.flows,
                       any, flow, ge6, worst);
    ordered_json hist = ordered_json::object();
    for (const auto& [load, links] : s.link_histogram) hist[std::to_string(load)] = links;
    rows.push_back({{"gpus", sc.gpus},
                    {"leaves", sc.leaves},
                    {"spines", sc.spines},
                    {"trials", s.trials},
                    {"p_any_contention", any},
                    {"p_flow_contended", flow},
                    {"p_flow_on_ge6", ge6},
                    {"max_load", worst},
                    {"link_histogram", hist}});
  }
  if (!out.empty()) write_file_atomic(out, csv);
  std::cout << (json ? j.dump(2) + "\n" : csv);
  return 0;
}

// Two jobs that are each fine under their own valid port map but together
// push two flows through leaf 0's uplink to spine 0.
int verify_shared_link(bool json) {
  PhysicalCluster c(ClusterConfig{2, 2, 1, 1, 0, 0.05});
  // leaf 0 holds GPUs 0 and 1, leaf 1 holds GPUs 2 and 3
  CommStep job1, job2;
  job1.flows = {Flow{0, 2, 1.0}};  // identity map
  job2.flows = {Flow{1, 3, 1.0}};  // port-swapped map
  const std::vector<GpuId> g{0, 1, 2, 3};
  const SourceRoutingMap swapped{{{1, 0}, {1, 0}}};
  RouteAssignment both = source_route(job1, g, c);
  const RouteAssignment second = source_route(job2, g, c, swapped);
  both.routes.insert(both.routes.end(), second.routes.begin(), second.routes.end());
  for (size_t l = 0; l < both.link_count.size(); ++l) both.link_count[l] += second.link_count[l];
  const int worst = both.max_load();
  const std::string witness = both.witness(c);
  if (json) {
    ordered_json j{{"schema_version", kSchemaVersion}, {"scenario", "shared-link"}, {"pass", worst <= 1},
                   {"max_load", worst}, {"witness", witness}};
    std::cout << j.dump(2) << '\n';
  } else {
    fmt::print("{} max={} {}\n", worst <= 1 ? "PASS" : "FAIL", worst, witness);
  }
  return worst <= 1 ? 0 : 1;
}

int cmd_verify(const std::string& collective, int n, int leaves, int spines, int gpus_per_server, int bound,
               bool json) {
  const auto coll = parse_collective(collective);
  if (!coll) throw ConfigError(fmt::format("unknown collective '{}'", collective));
  if (n < 2 || leaves < 1) throw ConfigError("need N >= 2 and leaves >= 1");
  if (spines <= 0) spines = (n + leaves - 1) / leaves;
  if (gpus_per_server <= 0) gpus_per_server = spines % 8 == 0 && n % 8 == 0 ? 8 : 1;
  const PhysicalCluster c(ClusterConfig{leaves, spines, gpus_per_server, 1, 0, 0.05});
  if (n > c.config().total_gpus())
    throw ConfigError(fmt::format("N={} exceeds {} leaves x {} spines", n, leaves, spines));
  std::vector<GpuId> g(n);
  for (int i = 0; i < n; ++i) g[i] = i;
  const CommSchedule s = make_schedule(*coll, n, 1.0, gpus_per_server);
  const ScheduleCheck r = check_schedule(s, g, c);
  const bool pass = r.max_load <= bound;
  if (json) {
    ordered_json j{{"schema_version", kSchemaVersion},
                   {"collective", std::string(to_string(*coll))},
                   {"n", n},
                   {"leaves", leaves},
                   {"spines", spines},
                   {"gpus_per_server", gpus_per_server},
                   {"steps", s.steps.size()},
                   {"cross_flows", r.cross_flows},
                   {"max_load", r.max_load},
                   {"bound", bound},
                   {"pass", pass},
                   {"worst_step", r.worst_step},
                   {"witness", r.witness}};
    std::cout << j.dump(2) << '\n';
  } else {
    fmt::print("{} {} N={} on {}x{}: max={} over {} steps ({} fabric flows)\n", pass ? "PASS" : "FAIL",
               to_string(*coll), n, leaves, spines, r.max_load, s.steps.size(), r.cross_flows);
    if (r.max_load > 1) fmt::print("  step {}: {}\n", r.worst_step, r.witness);
  }
  return pass ? 0 : 1;
}

int cmd_synth(double lambda, int count, std::uint64_t seed, const std::string& config, const std::string& out) {
  JobMix mix = default_job_mix();
  if (!config.empty()) mix = load_config(config).mix;
  const auto trace = synthesize_trace(mix, lambda, count, seed);
  std::ostringstream ss;
  write_trace(ss, trace);
  if (out.empty()) std::cout << ss.str();
  else write_file_atomic(out, ss.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Leaf-spine GPU cluster simulator with contention-free job placement"};
  app.require_subcommand(1);
  bool json = false;
  app.add_flag("--json", json, "Machine-readable output");

  auto* run = app.add_subcommand("run", "Run an experiment sweep from a YAML config");
  std::string config, out_dir, strategies, schedulers, seeds, lambdas;
  int workers = 0;
  run->add_option("config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir", out_dir, "Output directory (overrides VCLOS_OUTPUT_DIR and the config)");
  run->add_option("--workers", workers, "Parallel cells");
  run->add_option("--strategies", strategies, "Comma-separated strategies");
  run->add_option("--schedulers", schedulers, "Comma-separated schedulers");
  run->add_option("--seeds", seeds, "Comma-separated seeds");
  run->add_option("--lambda", lambdas, "Comma-separated mean inter-arrival times (s)");
  run->add_flag("--json", json, "Machine-readable output");

  auto* coll = app.add_subcommand("collisions", "ECMP hash-collision Monte Carlo across cluster scales");
  std::string scales = "64,256,1024,2048", coll_out;
  long trials = 10000;
  std::uint64_t seed = 1;
  coll->add_option("--scales", scales, "Comma-separated GPU counts");
  coll->add_option("--trials", trials, "Trials per scale")->check(CLI::PositiveNumber);
  coll->add_option("--seed", seed, "Random seed");
  coll->add_option("-o,--out", coll_out, "Also write the CSV here");
  coll->add_flag("--json", json, "Machine-readable output");

  auto* ver = app.add_subcommand("verify", "Check Source Routing contention for a collective on a contiguous shape");
  std::string collective = "ring";
  int n = 64, leaves = 8, spines = 0, tps = 0, bound = 1;
  bool shared_link = false;
  ver->add_option("--collective", collective, "ring, hier_ring, hd, alltoall, pipeline, dbt");
  ver->add_option("--n", n, "Ranks");
  ver->add_option("--leaves", leaves, "Leaves the job spans");
  ver->add_option("--spines", spines, "Spines (default N / leaves)");
  ver->add_option("--gpus-per-server", tps, "GPUs per server (default 8 when it divides the shape)");
  ver->add_option("--bound", bound, "Largest acceptable per-link flow count");
  ver->add_flag("--shared-link", shared_link, "Two-job example where a link is shared");
  ver->add_flag("--json", json, "Machine-readable output");

  auto* syn = app.add_subcommand("synth-trace", "Write a synthetic JSON-lines trace");
  double lambda = 120;
  int count = 5000;
  std::string syn_config, syn_out;
  syn->add_option("--lambda", lambda, "Mean inter-arrival time (s)")->check(CLI::PositiveNumber);
  syn->add_option("--count", count, "Jobs")->check(CLI::PositiveNumber);
  syn->add_option("--seed", seed, "Random seed");
  syn->add_option("--config", syn_config, "Take the job mix from this config")->check(CLI::ExistingFile);
  syn->add_option("-o,--out", syn_out, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, out_dir, workers, strategies, schedulers, seeds, lambdas, json);
    if (*coll) return cmd_collisions(scales, trials, seed, coll_out, json);
    if (*ver) return shared_link ? verify_shared_link(json) : cmd_verify(collective, n, leaves, spines, tps, bound, json);
    if (*syn) return cmd_synth(lambda, count, seed, syn_config, syn_out);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const TraceError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
