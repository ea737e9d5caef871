#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vclos/patterns.hpp"
#include "vclos/topology.hpp"

namespace vclos {

struct JobProfile {
  std::string model_tag;
  int n = 1;
  long iterations = 1;
  double compute_time_per_iter = 0.0;  // seconds
  double comm_bytes_per_iter = 0.0;    // collective payload per iteration
  Collective collective = Collective::Ring;
  double alpha = 0.0;                  // share of comm that never overlaps compute
  std::string batch_size;
};

struct Job {
  JobId id = 0;
  double arrival_time = 0.0;
  JobProfile profile;
};

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Validates one job; throws TraceError naming the field.
void validate_job(const Job& j);

/// One JSON object per line; blank lines and lines starting with '#' are
/// skipped. Errors name the line number and field.
std::vector<Job> read_trace(std::istream& in);
void write_trace(std::ostream& out, const std::vector<Job>& jobs);

/// One model family in the synthetic mix.
struct ModelClass {
  std::string tag;
  Collective collective = Collective::Ring;
  double alpha = 0.15;
  double compute_time_per_iter = 0.2;
  double comm_bytes_per_iter = 1e8;
  std::string batch_size;
  double weight = 1.0;
};

struct JobMix {
  std::vector<ModelClass> models;
  std::vector<std::pair<int, double>> sizes;  // (N, weight)
  // compute-only runtime in seconds ~ lognormal(median, sigma), clamped;
  // iterations = runtime / compute_time_per_iter
  double runtime_median = 1400.0;
  double runtime_sigma = 1.2;
  double runtime_min = 60.0;
  double runtime_max = 86400.0;
};

/// Default mix for a 512-GPU, 8-GPU-server cluster: mostly small jobs with a
/// tail of 32 to 128 GPU jobs.
JobMix default_job_mix();

/// Poisson arrivals with mean inter-arrival lambda_s; deterministic per seed.
std::vector<Job> synthesize_trace(const JobMix& mix, double lambda_s, int count, std::uint64_t seed);

}  // namespace vclos
