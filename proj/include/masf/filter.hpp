#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masf/dynamics.hpp"
#include "masf/measurement.hpp"
#include "masf/sampler.hpp"
#include "masf/schedule.hpp"
#include "masf/score_net.hpp"

namespace masf {

enum class Method { masf, enkf };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

enum class EnsembleKind { prior, posterior };

// Members are stored as the columns of a d x N matrix.
struct Ensemble {
  Eigen::MatrixXd members;
  long step_index = 0;
  EnsembleKind kind = EnsembleKind::prior;

  Eigen::Index size() const { return members.cols(); }
  Eigen::Index dim() const { return members.rows(); }
  Eigen::VectorXd mean() const { return members.rowwise().mean(); }
  // sqrt of the per-coordinate sample variance averaged over coordinates.
  double spread() const;
};

struct ObservationConfig {
  OperatorKind kind = OperatorKind::identity;
  double sigma = 1.0;
  // grid_mask: either an explicit mask or every `stride`-th coordinate.
  std::vector<bool> mask;
  long stride = 1;
  Eigen::MatrixXd matrix;  // dense only

  MeasurementOperator build(Eigen::Index dim) const;
};

struct FilterConfig {
  Method method = Method::masf;
  DynamicsModel dynamics = DynamicsModel::lorenz63();
  ObservationConfig observation;
  Schedule schedule = Schedule::cosine();
  ScoreNetSpec network;
  TrainConfig train;
  SamplerConfig sampler;

  int n_members = 100;
  long n_steps = 2500;
  // Measurements at every multiple of `gap` unless measurement_steps is set.
  long gap = 100;
  std::vector<long> measurement_steps;
  long eval_start = 2000;
  long eval_end = 2500;
  // Std of the Gaussian perturbation added to the initial truth for each member.
  double init_perturbation = 0.1;
  double enkf_inflation = 1.0;
  // Reinitialize and fully train the net at every measurement step.
  bool retrain_each_step = false;

  // Steps r in [1, n_steps] that carry a measurement.
  std::set<long> resolved_measurement_steps() const;
  ForwardProcess forward_process() const;
  void validate() const;
};

// Lorenz-63 and Lorenz-96 presets for the fields that differ between them.
FilterConfig default_filter_config(DynamicsKind kind, Eigen::Index dim = 0);

struct PhaseTiming {
  double time_update = 0.0;
  double training = 0.0;
  double sampling = 0.0;
  double enkf = 0.0;
  double total = 0.0;
};

// Everything needed to continue a run after step `ensemble.step_index`.
struct FilterState {
  Ensemble ensemble;
  std::optional<ScoreNet> net;
};

struct FilterRun {
  std::uint64_t seed = 0;
  Method method = Method::masf;
  std::vector<long> steps;
  Eigen::MatrixXd estimates;  // one row per entry of `steps`
  std::vector<double> rmse;
  std::vector<double> spread;
  std::vector<bool> is_measurement_step;
  // RMSE over the evaluation window restricted to the steps of this run.
  double window_rmse = 0.0;
  PhaseTiming timing;
  // Final training loss at each measurement step (MASF only).
  std::vector<double> final_train_loss;
  FilterState state;
};

struct RunOptions {
  // Continue from this state instead of initializing at step 0.
  const FilterState* resume = nullptr;
  // Last step to run; -1 runs to cfg.n_steps.
  long stop_step = -1;
  // Writes the net after every MASF measurement update when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Receives the sampler trace of every measurement step.
  std::map<long, std::vector<SamplerTraceRow>>* trace = nullptr;
};

// Truth trajectory, (n_steps + 1) x d, from x0 ~ N(0, I).
Eigen::MatrixXd simulate_truth(const FilterConfig& cfg, std::uint64_t seed);
// z_r = A x_r + sigma eps_r for every measurement step.
std::map<long, Eigen::VectorXd> simulate_measurements(const FilterConfig& cfg,
                                                      const Eigen::MatrixXd& truth,
                                                      std::uint64_t seed);
Ensemble initial_ensemble(const FilterConfig& cfg, const Eigen::VectorXd& x0, std::uint64_t seed);

// Propagates every member n_steps integrator steps starting after
// ens.step_index. Noise for (step, member) comes from its own stream.
void time_update(Ensemble& ens, const DynamicsModel& m, long n_steps, std::uint64_t seed);

// Trains the net on the first call (net empty) or when cfg.retrain_each_step,
// fine-tunes otherwise, then samples one posterior member per prior member.
Ensemble masf_measurement_update(const Ensemble& prior, const Eigen::VectorXd& z,
                                 const ForwardProcess& fp, const SamplerPlan& plan,
                                 std::optional<ScoreNet>& net, const FilterConfig& cfg,
                                 std::uint64_t seed, PhaseTiming* timing = nullptr,
                                 double* final_loss = nullptr,
                                 std::vector<SamplerTraceRow>* trace = nullptr);

Ensemble enkf_measurement_update(const Ensemble& prior, const Eigen::VectorXd& z,
                                 const MeasurementOperator& op, double inflation,
                                 std::uint64_t seed);

FilterRun run_filter(const FilterConfig& cfg, const Eigen::MatrixXd& truth,
                     const std::map<long, Eigen::VectorXd>& measurements, std::uint64_t seed,
                     const RunOptions& options = {});

}  // namespace masf
