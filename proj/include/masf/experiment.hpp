#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "masf/config.hpp"
#include "masf/report.hpp"

namespace masf {

enum class RunStatus { ok, skipped, failed };

struct RunRecord {
  std::vector<std::pair<std::string, Json>> point;
  Method method = Method::masf;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  RunStatus status = RunStatus::ok;
  double window_rmse = 0.0;
  std::string error;
};

struct RunSettings {
  bool force = false;
  bool trace = false;
  bool checkpoints = false;
  // Truth trajectories are cached here, keyed by the config hash.
  std::filesystem::path cache_dir;
};

// Identifies a run for idempotency: resolved config, seed and code version.
std::string run_hash(const FilterConfig& cfg, std::uint64_t seed);
std::vector<std::string> declared_deviations(const FilterConfig& cfg);

// Truth trajectory through the binary cache when settings.cache_dir is set.
Eigen::MatrixXd cached_truth(const FilterConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& cache_dir);

// One FilterRun with its artifacts (manifest.json, metrics.csv,
// estimates.csv, measurements.csv and optionally trace.csv). A finished run
// with a matching manifest is skipped unless settings.force.
RunRecord execute_run(const FilterConfig& cfg, std::uint64_t seed,
                      const std::filesystem::path& dir, const RunSettings& settings);

struct ExperimentOptions {
  int jobs = 1;
  RunSettings settings;
  std::ostream* log = nullptr;
};

struct ExperimentResult {
  Summary summary;
  std::vector<RunRecord> runs;
  int failures = 0;
};

// Every sweep point x seed x method, then summary.csv and summary.json in
// spec.output_dir. Failed runs are recorded and the sweep carries on.
ExperimentResult run_experiment(const ExperimentSpec& spec, const ExperimentOptions& options);

Summary summarize(const ExperimentSpec& spec, const std::vector<RunRecord>& runs);

}  // namespace masf
