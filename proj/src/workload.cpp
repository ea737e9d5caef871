#include "vclos/workload.hpp"

#include <cmath>
#include <random>
#include <string>

#include <fmt/format.h>

#include "json.hpp"

namespace vclos {

void validate_job(const Job& j) {
  const JobProfile& p = j.profile;
  auto bad = [&](const char* field, const std::string& why) {
    throw TraceError(fmt::format("job {}: {} {}", j.id, field, why));
  };
  if (!(j.arrival_time >= 0) || !std::isfinite(j.arrival_time)) bad("arrival_time", "must be >= 0");
  if (p.n < 1) bad("N", "must be >= 1");
  if (p.iterations < 1) bad("iterations", "must be >= 1");
  if (!(p.compute_time_per_iter >= 0) || !std::isfinite(p.compute_time_per_iter))
    bad("compute_time_per_iter", "must be >= 0");
  if (!(p.comm_bytes_per_iter >= 0) || !std::isfinite(p.comm_bytes_per_iter))
    bad("comm_bytes_per_iter", "must be >= 0");
  if (!(p.alpha >= 0 && p.alpha <= 1)) bad("alpha", "must lie in [0, 1]");
}

std::vector<Job> read_trace(std::istream& in) {
  std::vector<Job> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw TraceError(fmt::format("trace line {}: {}", lineno, e.what()));
    }
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key)) throw TraceError(fmt::format("trace line {}: missing field '{}'", lineno, key));
      return j.at(key);
    };
    Job job;
    try {
      job.id = need("job_id").get<JobId>();
      job.arrival_time = need("arrival_time").get<double>();
      JobProfile& p = job.profile;
      p.n = need("N").get<int>();
      p.model_tag = j.value("model_tag", std::string("unknown"));
      const std::string coll = j.value("collective", std::string("ring"));
      auto c = parse_collective(coll);
      if (!c) throw TraceError(fmt::format("trace line {}: unknown collective '{}'", lineno, coll));
      p.collective = *c;
      p.iterations = need("iterations").get<long>();
      p.compute_time_per_iter = need("compute_time_per_iter").get<double>();
      p.comm_bytes_per_iter = need("comm_bytes_per_iter").get<double>();
      p.alpha = need("alpha").get<double>();
      const auto& bs = j.value("batch_size", nlohmann::json(""));
      p.batch_size = bs.is_string() ? bs.get<std::string>() : bs.dump();
    } catch (const nlohmann::json::type_error& e) {
      throw TraceError(fmt::format("trace line {}: {}", lineno, e.what()));
    }
    try {
      validate_job(job);
    } catch (const TraceError& e) {
      throw TraceError(fmt::format("trace line {}: {}", lineno, e.what()));
    }
    out.push_back(std::move(job));
  }
  return out;
}

void write_trace(std::ostream& out, const std::vector<Job>& jobs) {
  for (const Job& job : jobs) {
    const JobProfile& p = job.profile;
    nlohmann::ordered_json j;
    j["job_id"] = job.id;
    j["arrival_time"] = job.arrival_time;
    j["N"] = p.n;
    j["model_tag"] = p.model_tag;
    j["collective"] = to_string(p.collective);
    j["iterations"] = p.iterations;
    j["compute_time_per_iter"] = p.compute_time_per_iter;
    j["comm_bytes_per_iter"] = p.comm_bytes_per_iter;
    j["alpha"] = p.alpha;
    j["batch_size"] = p.batch_size;
    out << j.dump() << '\n';
  }
}

JobMix default_job_mix() {
  JobMix m;
  m.models = {
      {"resnet50", Collective::Ring, 0.15, 0.10, 1e9, "64", 0.25},
      {"vgg16", Collective::Ring, 0.15, 0.20, 4e9, "32", 0.20},
      {"bert", Collective::HD, 0.15, 0.35, 10e9, "16", 0.15},
      {"gpt", Collective::HierRing, 0.15, 0.60, 20e9, "8", 0.10},
      {"moe", Collective::AlltoAll, 1.0, 0.25, 3e9, "32", 0.15},
      {"dlrm", Collective::AlltoAll, 1.0, 0.12, 1.5e9, "1024", 0.15},
  };
  m.sizes = {{1, 0.45}, {2, 0.12}, {4, 0.12}, {8, 0.15}, {16, 0.07}, {32, 0.05}, {64, 0.025}, {128, 0.015}};
  return m;
}

std::vector<Job> synthesize_trace(const JobMix& mix, double lambda_s, int count, std::uint64_t seed) {
  if (!(lambda_s > 0)) throw TraceError("lambda must be > 0");
  if (count < 0) throw TraceError("count must be >= 0");
  if (mix.models.empty() || mix.sizes.empty()) throw TraceError("job mix needs models and sizes");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(1.0 / lambda_s);
  std::vector<double> mw, sw;
  for (const auto& c : mix.models) mw.push_back(c.weight);
  for (const auto& [n, w] : mix.sizes) sw.push_back(w);
  std::discrete_distribution<int> pick_model(mw.begin(), mw.end());
  std::discrete_distribution<int> pick_size(sw.begin(), sw.end());
  std::lognormal_distribution<double> runtime(std::log(mix.runtime_median), mix.runtime_sigma);

  std::vector<Job> out;
  out.reserve(count);
  double t = 0.0;
  for (int i = 0; i < count; ++i) {
    t += gap(rng);
    const ModelClass& c = mix.models[pick_model(rng)];
    Job j;
    j.id = i;
    j.arrival_time = t;
    JobProfile& p = j.profile;
    p.model_tag = c.tag;
    p.n = mix.sizes[pick_size(rng)].first;
    p.collective = c.collective;
    p.alpha = c.alpha;
    p.compute_time_per_iter = c.compute_time_per_iter;
    p.comm_bytes_per_iter = c.comm_bytes_per_iter;
    p.batch_size = c.batch_size;
    const double d = std::clamp(runtime(rng), mix.runtime_min, mix.runtime_max);
    p.iterations = std::max(1L, std::lround(d / std::max(c.compute_time_per_iter, 1e-3)));
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace vclos
