#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masf/filter.hpp"

namespace masf {

// 64-bit FNV-1a of `s`, as 16 hex digits.
std::string hash_hex(const std::string& s);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// Columns t, x_1..x_d with t = row * dt.
void write_trajectory_csv(const std::filesystem::path& path, const Eigen::MatrixXd& traj, double dt);
Eigen::MatrixXd read_trajectory_csv(const std::filesystem::path& path);

// Compact binary matrix ("MASFMAT1", rows, cols, row-major float64).
void save_matrix_binary(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix_binary(const std::filesystem::path& path);

// Columns step, z_1..z_d.
void write_measurements_csv(const std::filesystem::path& path,
                            const std::map<long, Eigen::VectorXd>& z);
std::map<long, Eigen::VectorXd> read_measurements_csv(const std::filesystem::path& path);

// step, rmse, ensemble_spread, is_measurement_step
std::string metrics_csv(const FilterRun& run);
// step, x_1..x_d of the ensemble mean.
std::string estimates_csv(const FilterRun& run);
// measurement_step, step, t, mean_score_norm, mean_guidance_norm
std::string trace_csv(const std::map<long, std::vector<SamplerTraceRow>>& trace);

// Ensemble in a binary file; the net, if any, goes to <path>.net.
void save_filter_state(const std::filesystem::path& path, const FilterState& state,
                       const std::string& schedule_hash);
FilterState load_filter_state(const std::filesystem::path& path);

}  // namespace masf
