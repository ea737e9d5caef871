#include "vclos/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>

#include <fmt/format.h>

#include "vclos/maxmin.hpp"
#include "vclos/routing.hpp"

namespace vclos {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::ECMP: return "ecmp";
    case Strategy::Balanced: return "balanced";
    case Strategy::SR: return "sr";
    case Strategy::VClos: return "vclos";
    case Strategy::OcsVClos: return "ocs-vclos";
    case Strategy::Best: return "best";
    case Strategy::OcsRelax: return "ocs-relax";
  }
  return "?";
}

std::string_view to_string(Scheduler s) {
  switch (s) {
    case Scheduler::FIFO: return "fifo";
    case Scheduler::EDF: return "edf";
    case Scheduler::FF: return "ff";
  }
  return "?";
}

namespace {

std::string lower(std::string_view s) {
  std::string out;
  for (char ch : s) out.push_back(ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return out;
}

}  // namespace

std::optional<Strategy> parse_strategy(std::string_view name) {
  const std::string k = lower(name);
  for (Strategy s : {Strategy::ECMP, Strategy::Balanced, Strategy::SR, Strategy::VClos, Strategy::OcsVClos,
                     Strategy::Best, Strategy::OcsRelax})
    if (k == to_string(s)) return s;
  if (k == "source-routing") return Strategy::SR;
  if (k == "ocsvclos") return Strategy::OcsVClos;
  if (k == "ocs-relax" || k == "ocsrelax" || k == "ocs-releax") return Strategy::OcsRelax;
  return std::nullopt;
}

std::optional<Scheduler> parse_scheduler(std::string_view name) {
  const std::string k = lower(name);
  for (Scheduler s : {Scheduler::FIFO, Scheduler::EDF, Scheduler::FF})
    if (k == to_string(s)) return s;
  return std::nullopt;
}

double iteration_time(const JobProfile& p, double comm_time_actual, double /*comm_time_ideal*/) {
  return std::max(p.compute_time_per_iter, (1.0 - p.alpha) * comm_time_actual) + p.alpha * comm_time_actual;
}

double ideal_comm_time(const CommSchedule& s, const std::vector<GpuId>& gpus, const ClusterConfig& c,
                       double nic_bytes_per_s) {
  double t = 0;
  for (const CommStep& st : s.steps) {
    double worst = 0;
    for (const Flow& f : st.flows)
      if (gpus[f.src] / c.gpus_per_server != gpus[f.dst] / c.gpus_per_server) worst = std::max(worst, f.bytes);
    t += worst / nic_bytes_per_s;
  }
  return t;
}

double ideal_runtime(const JobProfile& p, const ClusterConfig& c, double nic_gbps) {
  double comm = 0;
  if (p.n >= 2) {
    std::vector<GpuId> g(p.n);
    std::iota(g.begin(), g.end(), 0);
    const int t = p.collective == Collective::HierRing && p.n % c.gpus_per_server ? 1 : c.gpus_per_server;
    comm = ideal_comm_time(make_schedule(p.collective, p.n, p.comm_bytes_per_iter, t), g, c, nic_gbps * 1e9 / 8);
  }
  return static_cast<double>(p.iterations) * iteration_time(p, comm, comm);
}

std::vector<JobId> schedule_order(std::vector<QueueEntry> q, Scheduler policy) {
  auto by_arrival = [](const QueueEntry& a, const QueueEntry& b) {
    return std::tie(a.arrival, a.id) < std::tie(b.arrival, b.id);
  };
  switch (policy) {
    case Scheduler::FIFO: std::stable_sort(q.begin(), q.end(), by_arrival); break;
    case Scheduler::EDF:
      std::stable_sort(q.begin(), q.end(), [&](const QueueEntry& a, const QueueEntry& b) {
        return a.deadline != b.deadline ? a.deadline < b.deadline : by_arrival(a, b);
      });
      break;
    case Scheduler::FF:
      std::stable_sort(q.begin(), q.end(), [&](const QueueEntry& a, const QueueEntry& b) {
        return a.n != b.n ? a.n < b.n : by_arrival(a, b);
      });
      break;
  }
  std::vector<JobId> out;
  for (const auto& e : q) out.push_back(e.id);
  return out;
}

double stability(const std::vector<JobRecord>& jobs,
                 std::map<std::tuple<std::string, int, std::string>, double>* groups) {
  std::map<std::tuple<std::string, int, std::string>, std::vector<double>> by;
  for (const JobRecord& j : jobs)
    if (!j.rejected) by[{j.model_tag, j.n, j.batch_size}].push_back(j.jct);
  double sum = 0;
  int count = 0;
  for (const auto& [key, v] : by) {
    if (v.size() < 2) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / v.size());
    if (groups) (*groups)[key] = sd;
    sum += sd;
    ++count;
  }
  return count ? sum / count : 0.0;
}

namespace {

enum EventKind : int { kFinish = 0, kRewire = 1, kArrival = 2, kAttempt = 3, kSample = 4 };

struct Event {
  double t;
  int kind;
  JobId job;
  std::uint64_t version;
  bool operator>(const Event& o) const { return std::tie(t, kind, job) > std::tie(o.t, o.kind, o.job); }
};

struct Active {
  size_t idx = 0;
  VirtualClos alloc;
  std::vector<GpuId> gpus;                  // rank -> gpu
  std::vector<std::vector<int>> flow_links; // fabric flows of the representative step
  double comm_ideal = 0;
  double iter_time = 0;
  double remaining = 0;  // iterations
  double last = 0;
  double slowdown = 1;
  std::uint64_t version = 0;
  bool running = false;
};

bool contention_possible(Strategy s) {
  return s == Strategy::ECMP || s == Strategy::Balanced || s == Strategy::SR || s == Strategy::OcsRelax;
}

class Sim {
 public:
  Sim(const std::vector<Job>& trace, const SimOptions& opt)
      : trace_(trace), opt_(opt), cluster_(effective_config(opt)), nic_(opt.nic_gbps * 1e9 / 8) {
    report_.options = opt;
    report_.options.cluster = cluster_.config();
    link_load_.assign(cluster_.num_links(), 0);
  }

  SimReport run() {
    const auto& cfg = cluster_.config();
    report_.jobs.resize(trace_.size());
    for (size_t i = 0; i < trace_.size(); ++i) {
      const Job& j = trace_[i];
      validate_job(j);
      if (!index_.emplace(j.id, i).second) throw TraceError(fmt::format("duplicate job id {}", j.id));
      JobRecord& r = report_.jobs[i];
      r.id = j.id;
      r.model_tag = j.profile.model_tag;
      r.n = j.profile.n;
      r.batch_size = j.profile.batch_size;
      r.arrival = j.arrival_time;
      r.ideal_jrt = ideal_runtime(j.profile, cfg, opt_.nic_gbps);
      push({j.arrival_time, kArrival, j.id, 0});
    }
    if (!trace_.empty()) push({0.0, kSample, -1, 0});

    while (!events_.empty()) {
      const Event e = events_.top();
      events_.pop();
      now_ = e.t;
      ++report_.events;
      switch (e.kind) {
        case kArrival: on_arrival(e.job); break;
        case kAttempt:
          attempt_pending_ = false;
          on_attempt();
          break;
        case kRewire: start_running(e.job); break;
        case kFinish: on_finish(e.job, e.version); break;
        case kSample:
          report_.queue_depth.emplace_back(now_, static_cast<int>(waiting_.size()));
          if (!done()) push({now_ + opt_.queue_sample_interval, kSample, -1, 0});
          break;
      }
    }
    finish_report();
    return std::move(report_);
  }

 private:
  static ClusterConfig effective_config(const SimOptions& o) {
    ClusterConfig c = o.cluster;
    if (o.strategy != Strategy::OcsVClos) c.ocs_count = 0;
    else if (c.ocs_count < 1) throw ConfigError("ocs-vclos needs ocs_count >= 1");
    return c;
  }

  void push(const Event& e) { events_.push(e); }

  bool done() const { return arrived_ == trace_.size() && waiting_.empty() && active_.empty(); }

  void request_attempt() {
    if (attempt_pending_) return;
    attempt_pending_ = true;
    push({now_, kAttempt, -1, 0});
  }

  void on_arrival(JobId id) {
    ++arrived_;
    const size_t i = index_.at(id);
    const Job& j = trace_[i];
    if (j.profile.n > cluster_.config().total_gpus()) {
      reject(i, fmt::format("needs {} GPUs, cluster has {}", j.profile.n, cluster_.config().total_gpus()));
      return;
    }
    waiting_.push_back(i);
    request_attempt();
  }

  void reject(size_t i, std::string why) {
    JobRecord& r = report_.jobs[i];
    r.rejected = true;
    r.error = std::move(why);
    ++report_.rejected;
  }

  std::optional<VirtualClos> place(const JobRequest& r) {
    PlacementOptions po;
    po.ilp_time_budget = opt_.ilp_time_budget;
    switch (opt_.strategy) {
      case Strategy::VClos: return place_vclos(r, cluster_, po, &report_.placement);
      case Strategy::OcsVClos: return place_ocs_vclos(r, cluster_, po, &report_.placement);
      case Strategy::OcsRelax: return scattered_placement(r, cluster_);
      default: return locality_placement(r, cluster_);
    }
  }

  void on_attempt() {
    std::vector<QueueEntry> q;
    for (size_t i : waiting_) {
      const Job& j = trace_[i];
      q.push_back({j.id, j.arrival_time, j.arrival_time + opt_.edf_slack * report_.jobs[i].ideal_jrt, j.profile.n});
    }
    const std::vector<JobId> order = schedule_order(std::move(q), opt_.scheduler);
    bool head = true;
    for (JobId id : order) {
      const size_t i = index_.at(id);
      const int n = trace_[i].profile.n;
      auto cached = failed_.find(n);
      if (cached != failed_.end() && cached->second == cluster_.version()) {
        if (opt_.scheduler == Scheduler::FIFO) return;
        head = false;
        continue;
      }
      const JobRequest req{id, n, trace_[i].arrival_time};
      auto vc = place(req);
      if (!vc) {
        if (active_.empty()) {
          // nothing will ever free up more room than an empty cluster has
          reject(i, "cannot be placed even on an empty cluster");
          waiting_.erase(std::find(waiting_.begin(), waiting_.end(), i));
          continue;
        }
        failed_[n] = cluster_.version();
        if (head) classify_failure(req);
        head = false;
        if (opt_.scheduler == Scheduler::FIFO) return;
        continue;
      }
      waiting_.erase(std::find(waiting_.begin(), waiting_.end(), i));
      launch(i, std::move(*vc));
    }
  }

  void classify_failure(const JobRequest& req) {
    if (cluster_.idle_gpus() < req.n) {
      ++report_.fragmentation.gpu_caused;
      return;
    }
    ++report_.fragmentation.idle_sufficient;
    // network-caused only when whole idle servers would have hosted the job
    const bool links_matter = opt_.strategy == Strategy::VClos || opt_.strategy == Strategy::OcsVClos;
    if (links_matter && locality_placement(req, cluster_)) ++report_.fragmentation.network_caused;
    else ++report_.fragmentation.gpu_caused;
  }

  const CommSchedule& schedule_for(const JobProfile& p, int t) {
    const auto key = std::make_tuple(static_cast<int>(p.collective), p.n, t);
    auto it = schedules_.find(key);
    if (it == schedules_.end()) it = schedules_.emplace(key, make_schedule(p.collective, p.n, 1.0, t)).first;
    return it->second;
  }

  void launch(size_t i, VirtualClos vc) {
    const Job& j = trace_[i];
    const double delay = commit(cluster_, vc);
    if (opt_.check_invariants && (vc.stage != PlacementStage::Locality && vc.stage != PlacementStage::Scattered)) {
      const std::string bad = check_invariants(vc, cluster_);
      if (!bad.empty()) ++report_.isolation_violations;
    }
    Active a;
    a.idx = i;
    a.gpus.assign(vc.gpus.begin(), vc.gpus.begin() + j.profile.n);
    a.alloc = std::move(vc);
    JobRecord& r = report_.jobs[i];
    r.rewire_delay = delay;
    r.gpus_reserved = static_cast<int>(a.alloc.gpus.size());
    r.stage = std::string(to_string(a.alloc.stage));
    active_.emplace(j.id, std::move(a));
    if (delay > 0) push({now_ + delay, kRewire, j.id, 0});
    else start_running(j.id);
  }

  void build_flows(Active& a) {
    const JobProfile& p = trace_[a.idx].profile;
    const auto& cfg = cluster_.config();
    if (p.n < 2 || p.comm_bytes_per_iter <= 0) return;
    const int t = p.collective == Collective::HierRing && p.n % cfg.gpus_per_server ? 1 : cfg.gpus_per_server;
    const CommSchedule& s = schedule_for(p, t);
    a.comm_ideal = ideal_comm_time(s, a.gpus, cfg, nic_) * p.comm_bytes_per_iter;

    // representative step: the one with most flows crossing leaves
    size_t rep = 0;
    int most = -1;
    for (size_t k = 0; k < s.steps.size(); ++k) {
      int cross = 0;
      for (const Flow& f : s.steps[k].flows)
        cross += cluster_.leaf_of_gpu(a.gpus[f.src]) != cluster_.leaf_of_gpu(a.gpus[f.dst]);
      if (cross > most) most = cross, rep = k;
      if (s.algo == Collective::Ring) break;  // every ring step has the same pairs
    }
    if (most <= 0 || opt_.strategy == Strategy::Best) return;
    const CommStep& step = s.steps[rep];

    RouteAssignment routes;
    std::mt19937_64 rng(opt_.seed * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(trace_[a.idx].id));
    switch (opt_.strategy) {
      case Strategy::ECMP: routes = ecmp_route(step, a.gpus, cluster_, rng); break;
      case Strategy::Balanced: routes = balanced_ecmp_route(step, a.gpus, cluster_, link_load_, rng); break;
      case Strategy::VClos:
      case Strategy::OcsVClos:
        if (!a.alloc.slots.empty()) {
          routes = source_route(step, build_routing_table(a.alloc, cluster_, p.n), cluster_);
          break;
        }
        [[fallthrough]];
      default: routes = source_route(step, a.gpus, cluster_); break;
    }
    for (const Route& r : routes.routes) {
      if (!r.crosses_fabric()) continue;
      std::vector<int> links{r.up};
      if (r.down >= 0) links.push_back(r.down);
      a.flow_links.push_back(std::move(links));
    }
  }

  void start_running(JobId id) {
    Active& a = active_.at(id);
    JobRecord& r = report_.jobs[a.idx];
    r.start = now_;
    r.jwt = now_ - r.arrival;
    build_flows(a);
    const bool fabric = !a.flow_links.empty();
    for (const auto& f : a.flow_links)
      for (int l : f) report_.max_link_flows = std::max(report_.max_link_flows, ++link_load_[l]);
    if (opt_.check_invariants && !contention_possible(opt_.strategy))
      for (const auto& f : a.flow_links)
        for (int l : f)
          if (link_load_[l] > 1 || cluster_.slot_owner(link_slot(l)) != id) ++report_.isolation_violations;
    a.running = true;
    a.last = now_;
    a.remaining = static_cast<double>(trace_[a.idx].profile.iterations);
    a.iter_time = iteration_time(trace_[a.idx].profile, a.comm_ideal, a.comm_ideal);
    if (fabric && contention_possible(opt_.strategy)) update_rates();
    else schedule_finish(a, id);
  }

  void schedule_finish(Active& a, JobId id) {
    ++a.version;
    push({now_ + a.remaining * a.iter_time, kFinish, id, a.version});
  }

  void update_rates() {
    ++report_.rate_updates;
    // compact link ids so the solver only sees links in use
    std::vector<std::vector<int>> paths;
    std::vector<std::pair<JobId, size_t>> owner;
    std::map<int, int> compact;
    for (auto& [id, a] : active_) {
      if (!a.running) continue;
      for (const auto& f : a.flow_links) {
        std::vector<int> p;
        for (int l : f) p.push_back(compact.emplace(l, static_cast<int>(compact.size())).first->second);
        paths.push_back(std::move(p));
        owner.emplace_back(id, paths.size() - 1);
      }
    }
    const std::vector<double> cap(compact.size(), nic_);
    const std::vector<double> demand(paths.size(), nic_);
    const std::vector<double> rate = max_min_share(paths, cap, demand);
    if (opt_.check_invariants) {
      std::vector<double> used(cap.size(), 0.0);
      for (size_t f = 0; f < paths.size(); ++f)
        for (int l : paths[f]) used[l] += rate[f];
      for (size_t l = 0; l < used.size(); ++l)
        if (used[l] > cap[l] * (1 + 1e-9)) ++report_.capacity_violations;
    }
    std::map<JobId, double> slowest;
    for (const auto& [id, f] : owner) {
      auto it = slowest.emplace(id, rate[f]).first;
      it->second = std::min(it->second, rate[f]);
    }
    for (auto& [id, a] : active_) {
      if (!a.running) continue;
      auto it = slowest.find(id);
      const double sd = it == slowest.end() ? 1.0 : nic_ / it->second;
      const JobProfile& p = trace_[a.idx].profile;
      const double it_time = iteration_time(p, a.comm_ideal * sd, a.comm_ideal);
      if (a.version != 0 && it_time == a.iter_time) continue;
      a.remaining = std::max(0.0, a.remaining - (now_ - a.last) / a.iter_time);
      a.last = now_;
      a.iter_time = it_time;
      a.slowdown = sd;
      schedule_finish(a, id);
    }
  }

  void on_finish(JobId id, std::uint64_t version) {
    auto it = active_.find(id);
    if (it == active_.end() || it->second.version != version) return;
    Active& a = it->second;
    JobRecord& r = report_.jobs[a.idx];
    r.finish = now_;
    r.jrt = r.finish - r.start;
    r.jct = r.jwt + r.jrt;
    const bool fabric = !a.flow_links.empty();
    for (const auto& f : a.flow_links)
      for (int l : f) --link_load_[l];
    cluster_.release(id);
    active_.erase(it);
    if (fabric && contention_possible(opt_.strategy)) update_rates();
    request_attempt();
  }

  void finish_report() {
    double jrt = 0, jwt = 0, jct = 0;
    long n = 0;
    for (const JobRecord& r : report_.jobs) {
      if (r.rejected) continue;
      jrt += r.jrt, jwt += r.jwt, jct += r.jct;
      ++n;
      report_.makespan = std::max(report_.makespan, r.finish);
    }
    if (n) {
      report_.avg_jrt = jrt / n;
      report_.avg_jwt = jwt / n;
      report_.avg_jct = jct / n;
    }
    report_.stability = stability(report_.jobs, &report_.stability_groups);
  }

  const std::vector<Job>& trace_;
  SimOptions opt_;
  PhysicalCluster cluster_;
  double nic_;
  SimReport report_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::map<JobId, size_t> index_;
  std::vector<size_t> waiting_;
  std::map<JobId, Active> active_;
  std::map<int, std::uint64_t> failed_;
  std::map<std::tuple<int, int, int>, CommSchedule> schedules_;
  std::vector<int> link_load_;
  double now_ = 0;
  size_t arrived_ = 0;
  bool attempt_pending_ = false;
};

}  // namespace

SimReport simulate(const std::vector<Job>& trace, const SimOptions& options) {
  return Sim(trace, options).run();
}

nlohmann::ordered_json SimReport::summary_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["strategy"] = to_string(options.strategy);
  j["scheduler"] = to_string(options.scheduler);
  j["seed"] = options.seed;
  const auto& c = options.cluster;
  j["cluster"] = {{"leaves", c.leaves},
                  {"spines", c.spines},
                  {"gpus_per_server", c.gpus_per_server},
                  {"links_per_pair", c.links_per_pair},
                  {"ocs_count", c.ocs_count},
                  {"ocs_rewire_delay", c.ocs_rewire_delay}};
  j["nic_gbps"] = options.nic_gbps;
  j["jobs"] = jobs.size();
  j["rejected"] = rejected;
  j["avg_jrt"] = avg_jrt;
  j["avg_jwt"] = avg_jwt;
  j["avg_jct"] = avg_jct;
  j["stability"] = stability;
  j["makespan"] = makespan;
  j["fragmentation"] = {{"gpu_caused", fragmentation.gpu_caused},
                        {"network_caused", fragmentation.network_caused},
                        {"idle_sufficient", fragmentation.idle_sufficient}};
  j["ilp"] = {{"solves", placement.ilp_solves},
              {"timeouts", placement.ilp_timeouts},
              {"nodes", placement.ilp_nodes}};
  j["max_link_flows"] = max_link_flows;
  j["capacity_violations"] = capacity_violations;
  j["isolation_violations"] = isolation_violations;
  j["events"] = events;
  auto& groups = j["stability_groups"] = nlohmann::ordered_json::array();
  for (const auto& [key, sd] : stability_groups)
    groups.push_back({{"model_tag", std::get<0>(key)},
                      {"n", std::get<1>(key)},
                      {"batch_size", std::get<2>(key)},
                      {"stddev_jct", sd}});
  auto& q = j["queue_depth"] = nlohmann::ordered_json::array();
  for (const auto& [t, d] : queue_depth) q.push_back({t, d});
  return j;
}

std::string SimReport::jobs_csv() const {
  std::string out = "job_id,model_tag,n,batch_size,arrival,start,finish,jwt,jrt,jct,ideal_jrt,rewire_delay,"
                    "gpus_reserved,stage,rejected,error\n";
  for (const JobRecord& r : jobs)
    out += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.3f},{},{},{},\"{}\"\n", r.id,
                       r.model_tag, r.n, r.batch_size, r.arrival, r.start, r.finish, r.jwt, r.jrt, r.jct,
                       r.ideal_jrt, r.rewire_delay, r.gpus_reserved, r.stage, r.rejected ? 1 : 0, r.error);
  return out;
}

}  // namespace vclos
