#include "vclos/experiment.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace vclos {

namespace {

class Reader {
 public:
  explicit Reader(std::string origin) : origin_(std::move(origin)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& why) const {
    const int line = n.Mark().line >= 0 ? n.Mark().line + 1 : 0;
    throw ConfigError(fmt::format("{}:{}: field '{}': {}", origin_, line, field, why));
  }

  void only(const YAML::Node& map, const std::string& where, std::initializer_list<const char*> keys) const {
    if (!map.IsMap()) fail(map, where, "expected a mapping");
    for (const auto& kv : map) {
      const auto k = kv.first.as<std::string>();
      if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
        fail(kv.first, where.empty() ? k : where + "." + k, "unknown key");
    }
  }

  template <class T>
  T get(const YAML::Node& n, const std::string& field) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, field, fmt::format("cannot read '{}' as {}", YAML::Dump(n), kind<T>()));
    }
  }

  template <class T>
  void opt(const YAML::Node& map, const char* key, const std::string& where, T& out) const {
    if (const YAML::Node n = map[key]) out = get<T>(n, where.empty() ? key : where + "." + key);
  }

  template <class T>
  std::vector<T> list(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence()) fail(n, field, "expected a list");
    std::vector<T> out;
    for (size_t i = 0; i < n.size(); ++i) out.push_back(get<T>(n[i], fmt::format("{}[{}]", field, i)));
    return out;
  }

 private:
  template <class T>
  static const char* kind() {
    if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "an integer";
  }

  std::string origin_;
};

JobMix read_mix(const Reader& r, const YAML::Node& n, int& count) {
  r.only(n, "trace.synth",
         {"count", "runtime_median", "runtime_sigma", "runtime_min", "runtime_max", "sizes", "models"});
  JobMix m = default_job_mix();
  r.opt(n, "count", "trace.synth", count);
  if (count < 1) r.fail(n["count"], "trace.synth.count", "must be >= 1");
  r.opt(n, "runtime_median", "trace.synth", m.runtime_median);
  r.opt(n, "runtime_sigma", "trace.synth", m.runtime_sigma);
  r.opt(n, "runtime_min", "trace.synth", m.runtime_min);
  r.opt(n, "runtime_max", "trace.synth", m.runtime_max);
  if (!(m.runtime_median > 0 && m.runtime_min > 0 && m.runtime_min <= m.runtime_max && m.runtime_sigma >= 0))
    r.fail(n, "trace.synth", "runtime bounds must satisfy 0 < min <= max, median > 0, sigma >= 0");
  if (const YAML::Node s = n["sizes"]) {
    if (!s.IsMap() || s.size() == 0) r.fail(s, "trace.synth.sizes", "expected a mapping of N to weight");
    m.sizes.clear();
    for (const auto& kv : s) {
      const int size = r.get<int>(kv.first, "trace.synth.sizes");
      const double w = r.get<double>(kv.second, fmt::format("trace.synth.sizes.{}", size));
      if (size < 1 || w < 0) r.fail(kv.first, "trace.synth.sizes", "sizes must be >= 1 and weights >= 0");
      m.sizes.emplace_back(size, w);
    }
  }
  if (const YAML::Node ms = n["models"]) {
    if (!ms.IsSequence() || ms.size() == 0) r.fail(ms, "trace.synth.models", "expected a nonempty list");
    m.models.clear();
    for (size_t i = 0; i < ms.size(); ++i) {
      const std::string where = fmt::format("trace.synth.models[{}]", i);
      const YAML::Node e = ms[i];
      r.only(e, where,
             {"tag", "collective", "alpha", "compute_time_per_iter", "comm_bytes_per_iter", "batch_size", "weight"});
      ModelClass c;
      r.opt(e, "tag", where, c.tag);
      std::string coll = "ring";
      r.opt(e, "collective", where, coll);
      const auto parsed = parse_collective(coll);
      if (!parsed) r.fail(e["collective"], where + ".collective", fmt::format("unknown collective '{}'", coll));
      c.collective = *parsed;
      r.opt(e, "alpha", where, c.alpha);
      r.opt(e, "compute_time_per_iter", where, c.compute_time_per_iter);
      r.opt(e, "comm_bytes_per_iter", where, c.comm_bytes_per_iter);
      r.opt(e, "batch_size", where, c.batch_size);
      r.opt(e, "weight", where, c.weight);
      if (c.tag.empty()) r.fail(e, where + ".tag", "required");
      if (!(c.alpha >= 0 && c.alpha <= 1)) r.fail(e, where + ".alpha", "must lie in [0, 1]");
      if (!(c.compute_time_per_iter > 0)) r.fail(e, where + ".compute_time_per_iter", "must be > 0");
      if (!(c.comm_bytes_per_iter >= 0)) r.fail(e, where + ".comm_bytes_per_iter", "must be >= 0");
      if (!(c.weight >= 0)) r.fail(e, where + ".weight", "must be >= 0");
      m.models.push_back(std::move(c));
    }
  }
  return m;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}: {}", origin, e.mark.line + 1, e.msg));
  }
  const Reader r(origin);
  if (!root || root.IsNull()) throw ConfigError(fmt::format("{}: empty config", origin));
  r.only(root, "",
         {"cluster", "strategies", "schedulers", "lambda_values", "seeds", "trace", "output_dir", "simulation",
          "workers"});
  ExperimentConfig cfg;

  if (const YAML::Node c = root["cluster"]) {
    r.only(c, "cluster",
           {"leaves", "spines", "gpus_per_server", "links_per_pair", "ocs_count", "ocs_rewire_delay"});
    auto& k = cfg.cluster;
    r.opt(c, "leaves", "cluster", k.leaves);
    r.opt(c, "spines", "cluster", k.spines);
    r.opt(c, "gpus_per_server", "cluster", k.gpus_per_server);
    r.opt(c, "links_per_pair", "cluster", k.links_per_pair);
    r.opt(c, "ocs_count", "cluster", k.ocs_count);
    r.opt(c, "ocs_rewire_delay", "cluster", k.ocs_rewire_delay);
    try {
      PhysicalCluster check(k);
    } catch (const ConfigError& e) {
      r.fail(c, "cluster", e.what());
    }
  }

  if (!root["strategies"]) throw ConfigError(fmt::format("{}: field 'strategies': required", origin));
  const YAML::Node sn = root["strategies"];
  for (size_t i = 0; const auto& name : r.list<std::string>(sn, "strategies")) {
    const auto s = parse_strategy(name);
    if (!s) r.fail(sn[i], fmt::format("strategies[{}]", i), fmt::format("unknown strategy '{}'", name));
    cfg.strategies.push_back(*s);
    ++i;
  }
  if (cfg.strategies.empty()) r.fail(sn, "strategies", "must not be empty");

  if (const YAML::Node sc = root["schedulers"]) {
    cfg.schedulers.clear();
    for (size_t i = 0; const auto& name : r.list<std::string>(sc, "schedulers")) {
      const auto s = parse_scheduler(name);
      if (!s) r.fail(sc[i], fmt::format("schedulers[{}]", i), fmt::format("unknown scheduler '{}'", name));
      cfg.schedulers.push_back(*s);
      ++i;
    }
    if (cfg.schedulers.empty()) r.fail(sc, "schedulers", "must not be empty");
  }

  if (const YAML::Node l = root["lambda_values"]) {
    cfg.lambda_values = r.list<double>(l, "lambda_values");
    if (cfg.lambda_values.empty()) r.fail(l, "lambda_values", "must not be empty");
    for (double v : cfg.lambda_values)
      if (!(v > 0)) r.fail(l, "lambda_values", "values must be > 0");
  }

  if (!root["seeds"]) throw ConfigError(fmt::format("{}: field 'seeds': required", origin));
  cfg.seeds = r.list<std::uint64_t>(root["seeds"], "seeds");
  if (cfg.seeds.empty()) r.fail(root["seeds"], "seeds", "must not be empty");

  if (const YAML::Node t = root["trace"]) {
    r.only(t, "trace", {"path", "synth"});
    if (t["path"] && t["synth"]) r.fail(t, "trace", "give either path or synth, not both");
    if (const YAML::Node p = t["path"]) {
      std::filesystem::path path = r.get<std::string>(p, "trace.path");
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      cfg.trace_path = path;
    }
    if (const YAML::Node s = t["synth"]) cfg.mix = read_mix(r, s, cfg.job_count);
  }

  if (const YAML::Node o = root["output_dir"]) cfg.output_dir = r.get<std::string>(o, "output_dir");

  if (const YAML::Node s = root["simulation"]) {
    r.only(s, "simulation",
           {"nic_gbps", "queue_sample_interval", "edf_slack", "ilp_time_budget", "check_invariants"});
    r.opt(s, "nic_gbps", "simulation", cfg.nic_gbps);
    r.opt(s, "queue_sample_interval", "simulation", cfg.queue_sample_interval);
    r.opt(s, "edf_slack", "simulation", cfg.edf_slack);
    r.opt(s, "ilp_time_budget", "simulation", cfg.ilp_time_budget);
    r.opt(s, "check_invariants", "simulation", cfg.check_invariants);
    if (!(cfg.nic_gbps > 0)) r.fail(s["nic_gbps"], "simulation.nic_gbps", "must be > 0");
    if (!(cfg.queue_sample_interval > 0))
      r.fail(s["queue_sample_interval"], "simulation.queue_sample_interval", "must be > 0");
    if (!(cfg.edf_slack > 0)) r.fail(s["edf_slack"], "simulation.edf_slack", "must be > 0");
    if (!(cfg.ilp_time_budget > 0)) r.fail(s["ilp_time_budget"], "simulation.ilp_time_budget", "must be > 0");
  }

  if (const YAML::Node w = root["workers"]) {
    cfg.workers = r.get<int>(w, "workers");
    if (cfg.workers < 1) r.fail(w, "workers", "must be >= 1");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("{}: cannot open config", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), path.parent_path());
}

std::string Cell::name() const {
  const std::string lam = lambda ? fmt::format("lam{:g}", *lambda) : std::string("trace");
  return fmt::format("{}_{}_{}_seed{}", to_string(strategy), to_string(scheduler), lam, seed);
}

std::vector<Cell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<std::optional<double>> lambdas;
  if (cfg.trace_path) lambdas.push_back(std::nullopt);
  else lambdas.assign(cfg.lambda_values.begin(), cfg.lambda_values.end());
  std::vector<Cell> out;
  for (Scheduler sch : cfg.schedulers)
    for (const auto& lam : lambdas)
      for (std::uint64_t seed : cfg.seeds)
        for (Strategy s : cfg.strategies) out.push_back(Cell{s, sch, lam, seed});
  return out;
}

std::vector<CellResult> run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(const CellResult&)>& on_done) {
  const std::vector<Cell> cells = expand_cells(cfg);
  std::vector<Job> file_trace;
  if (cfg.trace_path) {
    std::ifstream in(*cfg.trace_path);
    if (!in) throw ConfigError(fmt::format("trace file '{}' does not exist", cfg.trace_path->string()));
    file_trace = read_trace(in);
    if (file_trace.empty()) throw TraceError(fmt::format("trace file '{}' has no jobs", cfg.trace_path->string()));
  }

  std::vector<CellResult> results(cells.size());
  std::atomic<size_t> next{0};
  std::mutex done_mu;
  auto work = [&] {
    for (size_t i = next++; i < cells.size(); i = next++) {
      CellResult& out = results[i];
      out.cell = cells[i];
      try {
        const std::vector<Job> trace = cfg.trace_path
                                           ? file_trace
                                           : synthesize_trace(cfg.mix, *cells[i].lambda, cfg.job_count, cells[i].seed);
        SimOptions o;
        o.cluster = cfg.cluster;
        o.strategy = cells[i].strategy;
        o.scheduler = cells[i].scheduler;
        o.seed = cells[i].seed;
        o.nic_gbps = cfg.nic_gbps;
        o.queue_sample_interval = cfg.queue_sample_interval;
        o.edf_slack = cfg.edf_slack;
        o.ilp_time_budget = cfg.ilp_time_budget;
        o.check_invariants = cfg.check_invariants;
        out.report = simulate(trace, o);
      } catch (const std::exception& e) {
        out.error = e.what();
      }
      if (on_done) {
        std::lock_guard lock(done_mu);
        on_done(out);
      }
    }
  };
  const int n = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return results;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out << content;
    if (!out.flush()) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string summary_table(const ExperimentConfig& cfg, const std::vector<CellResult>& results) {
  struct Acc {
    double jct = 0, jrt = 0, jwt = 0, stab = 0, gpu = 0, net = 0;
    int n = 0;
  };
  using Row = std::pair<int, double>;  // (scheduler, lambda or -1)
  std::map<Row, std::map<int, Acc>> table;
  for (const CellResult& r : results) {
    if (!r.report) continue;
    Acc& a = table[{static_cast<int>(r.cell.scheduler), r.cell.lambda.value_or(-1)}]
                  [static_cast<int>(r.cell.strategy)];
    a.jct += r.report->avg_jct;
    a.jrt += r.report->avg_jrt;
    a.jwt += r.report->avg_jwt;
    a.stab += r.report->stability;
    a.gpu += static_cast<double>(r.report->fragmentation.gpu_caused);
    a.net += static_cast<double>(r.report->fragmentation.network_caused);
    ++a.n;
  }
  std::string out = "scheduler,lambda,metric";
  for (Strategy s : cfg.strategies) out += fmt::format(",{}", to_string(s));
  out += '\n';
  const std::pair<const char*, double Acc::*> metrics[] = {
      {"avg_jct", &Acc::jct}, {"avg_jrt", &Acc::jrt},          {"avg_jwt", &Acc::jwt},
      {"stability", &Acc::stab}, {"frag_gpu", &Acc::gpu}, {"frag_network", &Acc::net}};
  for (const auto& [row, cols] : table)
    for (const auto& [metric, field] : metrics) {
      out += fmt::format("{},{},{}", to_string(static_cast<Scheduler>(row.first)),
                         row.second < 0 ? std::string("trace") : fmt::format("{:g}", row.second), metric);
      for (Strategy s : cfg.strategies) {
        auto it = cols.find(static_cast<int>(s));
        out += it == cols.end() ? std::string(",") : fmt::format(",{:.3f}", it->second.*field / it->second.n);
      }
      out += '\n';
    }
  return out;
}

std::vector<std::filesystem::path> write_results(const ExperimentConfig& cfg,
                                                 const std::vector<CellResult>& results) {
  std::vector<std::filesystem::path> written;
  for (const CellResult& r : results) {
    if (!r.report) continue;
    const auto base = cfg.output_dir / r.cell.name();
    written.push_back(base.string() + ".jobs.csv");
    write_file_atomic(written.back(), r.report->jobs_csv());
    written.push_back(base.string() + ".summary.json");
    write_file_atomic(written.back(), r.report->summary_json().dump(2) + "\n");
  }
  if (results.size() > 1) {
    written.push_back(cfg.output_dir / "summary.csv");
    write_file_atomic(written.back(), summary_table(cfg, results));
  }
  return written;
}

}  // namespace vclos
