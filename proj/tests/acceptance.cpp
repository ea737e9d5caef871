// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
// below; nothing here is tuned per run.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "vclos/experiment.hpp"
#include "vclos/placement.hpp"
#include "vclos/routing.hpp"

using namespace vclos;

namespace {

constexpr int kLemmaBound = 1;
constexpr int kDbtBound = 3;
constexpr int kIlpStates = 500;
constexpr long kCollisionTrials = 10000;
constexpr std::uint64_t kCollisionSeeds[] = {1, 2, 3};
constexpr double kWilsonZ = 1.96;  // 95% one-sided-ish lower bound
constexpr long kBirthdayTrials = 100000;
constexpr double kBirthdayTol = 0.01;
constexpr double kOcsWithinBest = 0.10;
constexpr std::uint64_t kSimSeeds[] = {1, 2, 3};
constexpr double kSimLambda = 120.0;
constexpr double kFragLambdas[] = {100, 110, 120, 130};
constexpr int kMicroTraces = 50;

int failures = 0;

void report(int id, bool pass, const std::string& what, double seconds) {
  fmt::print("[{}] criterion {:>2}: {} ({:.1f} s)\n", pass ? "PASS" : "FAIL", id, what, seconds);
  std::fflush(stdout);
  failures += !pass;
}

template <class F>
void timed(int id, F f) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string what;
  bool pass = false;
  try {
    pass = f(what);
  } catch (const std::exception& e) {
    what += fmt::format(" threw: {}", e.what());
  }
  report(id, pass, what, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::vector<GpuId> iota_gpus(int n) {
  std::vector<GpuId> g(n);
  std::iota(g.begin(), g.end(), 0);
  return g;
}

// ---- 1: every generated collective is contention-free on every vClos shape
bool lemma_sweep(std::string& what) {
  long shapes = 0, bad = 0;
  std::map<std::string, int> bad_by;
  std::string first;
  for (int l : {2, 4, 8})
    for (int s = 1; s <= 64 && l * s <= 256; ++s) {
      const int n = l * s;
      const int t = s % 8 == 0 ? 8 : 1;
      const PhysicalCluster c(ClusterConfig{l, s, t, 1, 0, 0.05});
      const auto g = iota_gpus(n);
      for (Collective coll :
           {Collective::Ring, Collective::HierRing, Collective::HD, Collective::AlltoAll, Collective::Pipeline}) {
        ++shapes;
        const ScheduleCheck r = check_schedule(make_schedule(coll, n, 1.0, t), g, c);
        if (r.max_load > kLemmaBound) {
          ++bad;
          ++bad_by[fmt::format("{} l={}", to_string(coll), l)];
          if (first.empty()) first = fmt::format("{} {}x{} step {}: {}", to_string(coll), l, s, r.worst_step, r.witness);
        }
      }
    }
  what = fmt::format("{} of {} collective/shape pairs reach max per-link load {}", shapes - bad, shapes, kLemmaBound);
  if (bad) {
    what += "; violations:";
    for (const auto& [k, v] : bad_by) what += fmt::format(" [{} x{}]", k, v);
    what += "; first: " + first;
  }
  return bad == 0;
}

// ---- 2
bool dbt_bound(std::string& what) {
  const PhysicalCluster c(ClusterConfig{32, 64, 8, 1, 0, 0.05});
  const ScheduleCheck r = check_schedule(make_schedule(Collective::DoubleBinaryTree, 2048, 1.0, 8), iota_gpus(2048), c);
  what = fmt::format("double binary tree N=2048 on 32x64: max per-link load {} (bound {})", r.max_load, kDbtBound);
  return r.max_load <= kDbtBound;
}

// ---- 3
bool ilp_vs_enumeration(std::string& what) {
  std::mt19937_64 rng(2024);
  long checked = 0, mismatch = 0, invalid = 0;
  std::string first;
  for (int state = 0; state < kIlpStates; ++state) {
    for (int ocs : {0, 2}) {
      PhysicalCluster c(ClusterConfig{4, 8, 4, 1, ocs, 0.05});
      oracle::scramble(c, rng, 0.35, 0.15);
      for (int n = 4; n <= 16; ++n) {
        const JobRequest req{1, n, 0};
        const auto got = ocs ? ocs_find_clos(req, c) : find_vclos(req, c);
        const oracle::Best want = ocs ? oracle::ocs(c, n) : oracle::vclos(c, n);
        ++checked;
        const bool same = got.has_value() == want.found && (!got || got->objective == want.cost);
        if (!same) {
          ++mismatch;
          if (first.empty())
            first = fmt::format("state {} K={} N={}: solver {} vs oracle {}", state, ocs, n,
                                got ? std::to_string(got->objective) : "none",
                                want.found ? std::to_string(want.cost) : "none");
          continue;
        }
        if (got) {
          PhysicalCluster after = c;
          commit(after, *got);
          if (const std::string err = check_invariants(*got, after); !err.empty()) {
            ++invalid;
            if (first.empty()) first = fmt::format("state {} K={} N={}: {}", state, ocs, n, err);
          }
        }
      }
    }
  }
  what = fmt::format("{} requests over {} occupancy states x {{vClos, OCS}}: {} objective mismatches, {} invariant "
                     "violations",
                     checked, kIlpStates, mismatch, invalid);
  if (!first.empty()) what += "; first: " + first;
  return mismatch == 0 && invalid == 0;
}

// ---- 4: two legal choices for job 3, each punished by one completion
bool no_sample_path_optimum(std::string& what) {
  // 4 leaves x 3 spines, one GPU per server; slot = leaf * 3 + spine
  const ClusterConfig cfg{4, 3, 1, 1, 0, 0.05};
  PhysicalCluster c(cfg);
  c.reserve(Reservation{1, {0, 3}, {0, 3}});              // leaves 0,1 via spine 0
  c.reserve(Reservation{2, {6, 9}, {6, 9}});              // leaves 2,3 via spine 0
  c.reserve(Reservation{9, {1, 4, 8, 10}, {1, 4, 8, 11}});  // long-running background job

  // enumerate every legal two-leaf, one-spine vClos for job 3
  std::vector<std::vector<SlotId>> legal;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      for (int m = 0; m < 3; ++m) {
        auto idle = [&](int leaf) {
          for (int p = 0; p < 3; ++p)
            if (c.gpu_owner(leaf * 3 + p) == kNoJob) return true;
          return false;
        };
        if (idle(a) && idle(b) && c.slot_owner(a * 3 + m) == kNoJob && c.slot_owner(b * 3 + m) == kNoJob)
          legal.push_back({a * 3 + m, b * 3 + m});
      }
  const auto chosen = place_vclos(JobRequest{3, 2, 0}, c);
  bool chosen_is_legal = false;
  for (const auto& l : legal) chosen_is_legal |= chosen && chosen->slots == l;

  // job 3 reserved on a given legal option
  auto place_on = [&](const std::vector<SlotId>& slots) {
    PhysicalCluster d = c;
    Reservation r{3, {}, slots};
    for (SlotId s : slots) {
      const int leaf = s / 3;
      for (int p = 0; p < 3; ++p)
        if (d.gpu_owner(leaf * 3 + p) == kNoJob && r.gpus.size() < 2 &&
            (r.gpus.empty() || r.gpus.back() / 3 != leaf)) {
          r.gpus.push_back(leaf * 3 + p);
          break;
        }
    }
    d.reserve(r);
    return d;
  };
  int punished = 0;
  std::string detail;
  for (const auto& option : legal) {
    bool some_order_blocks = false;
    for (JobId done : {1, 2}) {
      PhysicalCluster d = place_on(option);
      d.release(done);
      const bool solver_fails = !place_vclos(JobRequest{4, 4, 0}, d).has_value();
      const bool oracle_fails = !oracle::vclos(d, 4).found;
      if (solver_fails && oracle_fails) {
        some_order_blocks = true;
        detail += fmt::format(" [job 3 on leaves {},{} via spine {}: job 4 blocked after job {} ends]",
                              option[0] / 3, option[1] / 3, option[0] % 3, done);
      }
    }
    punished += some_order_blocks;
  }
  what = fmt::format("{} legal vClos for job 3, solver picks a legal one: {}, {} of them can be blocked:{}",
                     legal.size(), chosen_is_legal ? "yes" : "no", punished, detail);
  return legal.size() == 2 && chosen_is_legal && punished == 2;
}

// ---- 5
double wilson_lower(long k, long n) {
  if (n == 0) return 0;
  const double p = static_cast<double>(k) / n, z2 = kWilsonZ * kWilsonZ;
  return (p + z2 / (2.0 * n) - kWilsonZ * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n))) / (1 + z2 / n);
}

bool collision_trend(std::string& what) {
  bool mono = true;
  long ge6 = 0, flows = 0;
  std::string rows;
  for (std::uint64_t seed : kCollisionSeeds) {
    double prev_any = -1, prev_flow = -1;
    rows += fmt::format(" seed {}:", seed);
    for (int g : {64, 256, 1024, 2048}) {
      const ContentionSample s = collision_monte_carlo(monte_carlo_shape(g), kCollisionTrials, seed);
      const double any = static_cast<double>(s.trials_with_contention) / s.trials;
      const double flow = static_cast<double>(s.contended_flows) / s.flows;
      mono &= any >= prev_any && flow >= prev_flow;
      prev_any = any;
      prev_flow = flow;
      rows += fmt::format(" {}={:.3f}/{:.3f}", g, any, flow);
      if (g == 2048) {
        ge6 += s.flows_at_least6;
        flows += s.flows;
      }
    }
  }
  const double lo = wilson_lower(ge6, flows);
  what = fmt::format("P(any)/P(flow contended) nondecreasing: {}; P(flow on >=6-flow link) at 2048 = {:.4f}, 95% "
                     "lower bound {:.5f};{}",
                     mono ? "yes" : "no", static_cast<double>(ge6) / flows, lo, rows);
  return mono && lo > 0;
}

// ---- 6
bool birthday(std::string& what) {
  bool ok = true;
  for (int k : {4, 8}) {
    double kfact = 1;
    for (int i = 2; i <= k; ++i) kfact *= i;
    const double want = 1 - kfact / std::pow(k, k);
    const double got = ecmp_birthday_trial(k, kBirthdayTrials, 7 + k);
    ok &= std::abs(got - want) <= kBirthdayTol;
    what += fmt::format("k={}: {:.4f} vs {:.4f}; ", k, got, want);
  }
  what += fmt::format("tolerance {}", kBirthdayTol);
  return ok;
}

// ---- 7, 8, 9 share one sweep
struct SweepResults {
  std::map<std::tuple<Strategy, Scheduler, double, std::uint64_t>, SimReport> runs;
  const SimReport& at(Strategy s, Scheduler q, double lam, std::uint64_t seed) const {
    return runs.at({s, q, lam, seed});
  }
};

void run_cells(SweepResults& out, std::vector<Strategy> strategies, std::vector<Scheduler> schedulers,
               std::vector<double> lambdas) {
  ExperimentConfig cfg;
  cfg.strategies = std::move(strategies);
  cfg.schedulers = std::move(schedulers);
  cfg.lambda_values = std::move(lambdas);
  cfg.seeds.assign(std::begin(kSimSeeds), std::end(kSimSeeds));
  for (const auto& r : run_experiment(cfg, [](const CellResult& r) {
         std::fprintf(stderr, "  %s done\n", r.cell.name().c_str());
       })) {
    if (!r.report) throw std::runtime_error(r.cell.name() + ": " + r.error);
    out.runs.emplace(std::make_tuple(r.cell.strategy, r.cell.scheduler, *r.cell.lambda, r.cell.seed), *r.report);
  }
}

bool strategy_ordering(const SweepResults& sw, std::string& what) {
  const Strategy order[] = {Strategy::Best, Strategy::OcsVClos, Strategy::VClos,
                            Strategy::SR,   Strategy::Balanced, Strategy::ECMP};
  bool ok = true;
  for (std::uint64_t seed : kSimSeeds) {
    what += fmt::format("seed {}:", seed);
    double prev = 0;
    bool ordered = true;
    for (Strategy s : order) {
      const double jct = sw.at(s, Scheduler::FIFO, kSimLambda, seed).avg_jct;
      ordered &= jct >= prev;
      prev = jct;
      what += fmt::format(" {}={:.0f}", to_string(s), jct);
    }
    const double best = sw.at(Strategy::Best, Scheduler::FIFO, kSimLambda, seed).avg_jct;
    const double ocs = sw.at(Strategy::OcsVClos, Scheduler::FIFO, kSimLambda, seed).avg_jct;
    const bool close = ocs <= best * (1 + kOcsWithinBest);
    what += fmt::format(" (ordered {}, OCS-vClos +{:.1f}% over Best); ", ordered ? "yes" : "NO",
                        100 * (ocs / best - 1));
    ok &= ordered && close;
  }
  return ok;
}

bool fragmentation(const SweepResults& sw, std::string& what) {
  bool ok = true;
  for (double lam : kFragLambdas) {
    int wins = 0;
    what += fmt::format("lambda {:g}:", lam);
    for (std::uint64_t seed : kSimSeeds) {
      const long o = sw.at(Strategy::OcsVClos, Scheduler::FIFO, lam, seed).fragmentation.network_caused;
      const long v = sw.at(Strategy::VClos, Scheduler::FIFO, lam, seed).fragmentation.network_caused;
      wins += o < v;
      what += fmt::format(" {}<{}", o, v);
    }
    what += "; ";
    ok &= 2 * wins > static_cast<int>(std::size(kSimSeeds));
  }
  what += "(OCS-vClos < vClos network-caused counts per seed)";
  return ok;
}

bool scheduler_sensitivity(const SweepResults& sw, std::string& what) {
  auto ratio = [&](Scheduler q) {
    double e = 0, v = 0;
    for (std::uint64_t seed : kSimSeeds) {
      e += sw.at(Strategy::ECMP, q, kSimLambda, seed).avg_jct;
      v += sw.at(Strategy::VClos, q, kSimLambda, seed).avg_jct;
    }
    return e / v;
  };
  const double fifo = ratio(Scheduler::FIFO), edf = ratio(Scheduler::EDF), ff = ratio(Scheduler::FF);
  what = fmt::format("seed-averaged Avg. JCT(ECMP)/Avg. JCT(vClos): FIFO {:.2f}, EDF {:.2f}, FF {:.2f}", fifo, edf, ff);
  return edf < fifo && ff < fifo;
}

// ---- 10
bool collective_oracle(std::string& what) {
  long schedules = 0, wrong = 0;
  std::string first;
  auto check = [&](const CommSchedule& s, const std::string& name) {
    ++schedules;
    const int n = s.n_ranks;
    const auto buf = oracle::replay_allreduce(s, [](int r) { return r + 1.0; });
    const double want = n * (n + 1) / 2.0;
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < s.chunks; ++k)
        if (buf[r][k] != want) {
          ++wrong;
          if (first.empty()) first = fmt::format("{} N={} rank {} chunk {}: {} != {}", name, n, r, k, buf[r][k], want);
          return;
        }
  };
  for (int n = 2; n <= 32; ++n) {
    check(ring_steps(n, 1.0), "ring");
    check(hd_steps(n, 1.0), "hd");
    for (int t : {2, 4, 8})
      if (n % t == 0 && n > t) check(hierarchical_ring_steps(n, t, 1.0), fmt::format("hier_ring/{}", t));
    ++schedules;
    std::map<std::pair<int, int>, int> seen;
    for (const CommStep& st : alltoall_steps(n, 1.0).steps)
      for (const Flow& f : st.flows) ++seen[{f.src, f.dst}];
    bool once = static_cast<int>(seen.size()) == n * (n - 1);
    for (const auto& [pair, count] : seen) once &= count == 1 && pair.first != pair.second;
    if (!once) {
      ++wrong;
      if (first.empty()) first = fmt::format("alltoall N={} does not cover each ordered pair once", n);
    }
  }
  what = fmt::format("{} of {} schedules correct for N<=32", schedules - wrong, schedules);
  if (!first.empty()) what += "; first: " + first;
  return wrong == 0;
}

// ---- 11
bool simulator_properties(std::string& what) {
  JobMix mix = default_job_mix();
  mix.sizes = {{1, 1}, {2, 1}, {4, 1}, {8, 1}, {16, 1}, {32, 1}};
  mix.runtime_median = 300;
  long jobs = 0, nondet = 0, sum_bad = 0, cap = 0, iso = 0, slower = 0;
  for (int t = 0; t < kMicroTraces; ++t) {
    const std::uint64_t seed = 100 + t;
    const auto trace = synthesize_trace(mix, 15.0 + t % 5 * 10, 40, seed);
    SimOptions base;
    base.cluster = ClusterConfig{4, 8, 4, 1, 4, 0.05};
    base.strategy = Strategy::Best;
    base.scheduler = std::array{Scheduler::FIFO, Scheduler::EDF, Scheduler::FF}[t % 3];
    base.seed = seed;
    base.check_invariants = true;
    const SimReport best = simulate(trace, base);
    for (Strategy s : {Strategy::Best, Strategy::ECMP, Strategy::Balanced, Strategy::SR, Strategy::VClos,
                       Strategy::OcsVClos, Strategy::OcsRelax}) {
      SimOptions o = base;
      o.strategy = s;
      const SimReport a = simulate(trace, o);
      const SimReport b = simulate(trace, o);
      nondet += a.summary_json().dump() != b.summary_json().dump() || a.jobs_csv() != b.jobs_csv();
      cap += a.capacity_violations;
      iso += a.isolation_violations;
      for (size_t i = 0; i < a.jobs.size(); ++i) {
        const JobRecord& j = a.jobs[i];
        ++jobs;
        sum_bad += std::abs(j.jct - (j.jwt + j.jrt)) > 1e-9 * std::max(1.0, j.jct);
        slower += j.jrt < best.jobs[i].jrt * (1 - 1e-9);
      }
    }
  }
  what = fmt::format("{} traces, {} job records: {} nondeterministic runs, {} JCT!=JWT+JRT, {} capacity and {} "
                     "isolation violations, {} jobs faster than Best",
                     kMicroTraces, jobs, nondet, sum_bad, cap, iso, slower);
  return nondet == 0 && sum_bad == 0 && cap == 0 && iso == 0 && slower == 0;
}

}  // namespace

int main() {
  timed(1, lemma_sweep);
  timed(2, dbt_bound);
  timed(3, ilp_vs_enumeration);
  timed(4, no_sample_path_optimum);
  timed(5, collision_trend);
  timed(6, birthday);

  SweepResults sw;
  bool sweep_ok = true;
  const auto t0 = std::chrono::steady_clock::now();
  std::string sweep_error;
  try {
    run_cells(sw,
              {Strategy::Best, Strategy::OcsVClos, Strategy::VClos, Strategy::SR, Strategy::Balanced, Strategy::ECMP},
              {Scheduler::FIFO}, {kSimLambda});
    std::vector<double> frag(std::begin(kFragLambdas), std::end(kFragLambdas));
    std::erase(frag, kSimLambda);
    run_cells(sw, {Strategy::VClos, Strategy::OcsVClos}, {Scheduler::FIFO}, frag);
    run_cells(sw, {Strategy::ECMP, Strategy::VClos}, {Scheduler::EDF, Scheduler::FF}, {kSimLambda});
  } catch (const std::exception& e) {
    sweep_ok = false;
    sweep_error = e.what();
  }
  const double sweep_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (sweep_ok) {
    timed(7, [&](std::string& w) { return strategy_ordering(sw, w); });
    timed(8, [&](std::string& w) { return fragmentation(sw, w); });
    timed(9, [&](std::string& w) { return scheduler_sensitivity(sw, w); });
    fmt::print("         (simulation sweep for 7-9: {:.0f} s)\n", sweep_s);
  } else {
    for (int id : {7, 8, 9}) report(id, false, "sweep failed: " + sweep_error, sweep_s);
  }
  timed(10, collective_oracle);
  timed(11, simulator_properties);
  fmt::print("{} of 11 criteria passed\n", 11 - failures);
  return failures ? 1 : 0;
}
