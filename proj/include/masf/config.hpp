#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "masf/filter.hpp"

namespace masf {

using Json = nlohmann::ordered_json;

struct SweepAxis {
  std::string path;  // e.g. "filter.gap", "dynamics.forcing"
  std::vector<Json> values;
};

struct ExperimentSpec {
  Json document;  // the parsed file, before defaults
  FilterConfig base;
  std::uint64_t seed = 0;  // used by single-run commands
  std::vector<SweepAxis> sweep;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<Method> methods = {Method::masf, Method::enkf};
  std::filesystem::path output_dir = "runs";
  // Ceiling on sum over runs of members * nfe * measurement steps * dim.
  double budget = 1e10;
  // State dimensions above kLargeDim need this flag.
  bool unlock_large = false;
  std::vector<std::string> warnings;

  static constexpr long kLargeDim = 256;

  std::size_t run_count() const;
  // Every cartesian combination of sweep values, as (path, value) lists.
  std::vector<std::vector<std::pair<std::string, Json>>> sweep_points() const;
  // base document with one sweep point applied, fully resolved.
  FilterConfig config_at(const std::vector<std::pair<std::string, Json>>& point) const;
  double estimated_cost() const;
};

// Strict parse of the sections dynamics, observation, schedule, network,
// train, sampler and filter. Unknown keys raise ConfigError naming the key.
FilterConfig parse_filter_config(const Json& doc, std::vector<std::string>* warnings = nullptr);
Json to_json(const FilterConfig& cfg);

ExperimentSpec parse_experiment(const Json& doc);
// Parse errors report line and column.
ExperimentSpec load_config(const std::filesystem::path& path);
Json parse_json_text(const std::string& text, const std::string& origin);

std::string canonical_sweep_path(const std::string& path);

}  // namespace masf
