#include "masf/filter.hpp"

#include <chrono>
#include <cmath>

#include "masf/enkf.hpp"
#include "masf/errors.hpp"

namespace masf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Step-independent sub-stream tags for the training stream.
constexpr std::uint64_t kInitTag = 0;
constexpr std::uint64_t kTrainTag = 1;

}  // namespace

std::string to_string(Method m) { return m == Method::masf ? "masf" : "enkf"; }

Method method_from_string(const std::string& s) {
  if (s == "masf") return Method::masf;
  if (s == "enkf") return Method::enkf;
  throw ConfigError("filter.method", "unknown method '" + s + "'");
}

double Ensemble::spread() const {
  if (members.cols() < 2) return 0.0;
  const Eigen::MatrixXd anomalies = members.colwise() - mean();
  const double var = anomalies.squaredNorm() / static_cast<double>(members.cols() - 1);
  return std::sqrt(var / static_cast<double>(members.rows()));
}

MeasurementOperator ObservationConfig::build(Eigen::Index dim) const {
  switch (kind) {
    case OperatorKind::identity:
      return MeasurementOperator::identity(dim, sigma);
    case OperatorKind::grid_mask:
      if (!mask.empty()) {
        require_dim(static_cast<long>(mask.size()), dim, "observation.mask");
        return MeasurementOperator::grid_mask(mask, sigma);
      }
      return MeasurementOperator::strided_mask(dim, stride, sigma);
    case OperatorKind::dense:
      require_dim(matrix.rows(), dim, "observation.matrix rows");
      return MeasurementOperator::dense(matrix, sigma);
  }
  throw ConfigError("observation.kind", "unhandled operator kind");
}

std::set<long> FilterConfig::resolved_measurement_steps() const {
  std::set<long> k;
  if (!measurement_steps.empty()) {
    for (long r : measurement_steps) {
      if (r >= 1 && r <= n_steps) k.insert(r);
    }
    return k;
  }
  for (long r = gap; r <= n_steps; r += gap) k.insert(r);
  return k;
}

ForwardProcess FilterConfig::forward_process() const {
  return ForwardProcess(observation.build(dynamics.dim), schedule);
}

void FilterConfig::validate() const {
  dynamics.validate();
  train.validate();
  sampler.validate();
  if (n_members < 2) throw ConfigError("filter.n_members", "must be >= 2");
  if (n_steps < 0) throw ConfigError("filter.n_steps", "must be >= 0");
  if (gap < 1) throw ConfigError("filter.gap", "must be >= 1");
  for (long r : measurement_steps) {
    if (r < 0 || r > n_steps) {
      throw ConfigError("filter.measurement_steps",
                        "step " + std::to_string(r) + " is outside [0, n_steps]");
    }
  }
  if (eval_start < 0 || eval_end < eval_start || eval_end > n_steps) {
    throw ConfigError("filter.eval_end", "window must satisfy 0 <= eval_start <= eval_end <= n_steps");
  }
  if (!(init_perturbation >= 0.0)) throw ConfigError("filter.init_perturbation", "must be >= 0");
  if (!(enkf_inflation >= 1.0)) throw ConfigError("filter.enkf_inflation", "must be >= 1");
  if (!(observation.sigma > 0.0)) throw ConfigError("observation.sigma", "must be positive");
  if (network.state_dim != dynamics.dim) {
    throw ConfigError("network.state_dim", "must equal dynamics.dim");
  }
  try {
    (void)forward_process();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("observation", e.what());
  }
}

FilterConfig default_filter_config(DynamicsKind kind, Eigen::Index dim) {
  FilterConfig cfg;
  if (kind == DynamicsKind::lorenz63) {
    cfg.dynamics = DynamicsModel::lorenz63();
    cfg.network.hidden = {64, 64, 64};
    cfg.train.validation_split = 0.2;
    cfg.n_steps = 2500;
    cfg.gap = 100;
    cfg.eval_start = 2000;
    cfg.eval_end = 2500;
    cfg.init_perturbation = 0.1;
  } else {
    cfg.dynamics = DynamicsModel::lorenz96(dim > 0 ? dim : 64);
    cfg.network.hidden = {256, 256, 256, 256};
    cfg.train.validation_split = 0.1;
    cfg.n_steps = 100;
    cfg.gap = 5;
    cfg.eval_start = 25;
    cfg.eval_end = 100;
    cfg.init_perturbation = 1.0;
  }
  cfg.network.state_dim = cfg.dynamics.dim;
  return cfg;
}

Eigen::MatrixXd simulate_truth(const FilterConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::truth);
  const Eigen::VectorXd x0 = standard_normal(rng, cfg.dynamics.dim);
  return simulate(cfg.dynamics, x0, cfg.n_steps, rng);
}

std::map<long, Eigen::VectorXd> simulate_measurements(const FilterConfig& cfg,
                                                      const Eigen::MatrixXd& truth,
                                                      std::uint64_t seed) {
  const MeasurementOperator op = cfg.observation.build(cfg.dynamics.dim);
  std::map<long, Eigen::VectorXd> out;
  for (long r : cfg.resolved_measurement_steps()) {
    if (r >= truth.rows()) throw DimensionError("truth trajectory is shorter than the measurement steps");
    Rng rng = make_rng(seed, Stream::measurement, static_cast<std::uint64_t>(r));
    out[r] = op.apply(Eigen::VectorXd(truth.row(r).transpose())) +
             op.sigma() * standard_normal(rng, op.dim());
  }
  return out;
}

Ensemble initial_ensemble(const FilterConfig& cfg, const Eigen::VectorXd& x0, std::uint64_t seed) {
  require_dim(x0.size(), cfg.dynamics.dim, "initial state");
  Ensemble ens;
  ens.members.resize(x0.size(), cfg.n_members);
  for (int j = 0; j < cfg.n_members; ++j) {
    Rng rng = make_rng(seed, Stream::ensemble_init, 0, static_cast<std::uint64_t>(j));
    ens.members.col(j) = x0 + cfg.init_perturbation * standard_normal(rng, x0.size());
  }
  ens.step_index = 0;
  ens.kind = EnsembleKind::prior;
  return ens;
}

void time_update(Ensemble& ens, const DynamicsModel& m, long n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw DomainError("time_update: n_steps must be >= 1");
  require_dim(ens.dim(), m.dim, "time_update ensemble");
  const double sq_dt = std::sqrt(m.dt);
  for (long k = 0; k < n_steps; ++k) {
    const long r = ens.step_index + 1;
    ens.members += m.dt * drift(m, ens.members);
    if (m.process_noise > 0.0) {
      for (Eigen::Index j = 0; j < ens.size(); ++j) {
        Rng rng = make_rng(seed, Stream::dynamics, static_cast<std::uint64_t>(r),
                           static_cast<std::uint64_t>(j));
        ens.members.col(j) += m.process_noise * sq_dt * standard_normal(rng, m.dim);
      }
    }
    if (!ens.members.allFinite()) {
      for (Eigen::Index j = 0; j < ens.size(); ++j) {
        if (!ens.members.col(j).allFinite()) {
          throw DivergenceError("time update diverged for member " + std::to_string(j), r);
        }
      }
    }
    ens.step_index = r;
  }
  ens.kind = EnsembleKind::prior;
}

Ensemble masf_measurement_update(const Ensemble& prior, const Eigen::VectorXd& z,
                                 const ForwardProcess& fp, const SamplerPlan& plan,
                                 std::optional<ScoreNet>& net, const FilterConfig& cfg,
                                 std::uint64_t seed, PhaseTiming* timing, double* final_loss,
                                 std::vector<SamplerTraceRow>* trace) {
  if (prior.kind != EnsembleKind::prior) throw DomainError("measurement update needs a prior ensemble");
  const auto r = static_cast<std::uint64_t>(prior.step_index);

  auto start = Clock::now();
  TrainHistory history;
  Rng train_rng = make_rng(seed, Stream::training, r, kTrainTag);
  if (!net || cfg.retrain_each_step) {
    Rng init_rng = make_rng(seed, Stream::training, r, kInitTag);
    ScoreNetSpec spec = cfg.network;
    spec.state_dim = prior.dim();
    net.emplace(spec, init_rng);
    history = train(*net, prior.members, fp, cfg.train, train_rng);
  } else {
    history = finetune(*net, prior.members, fp, cfg.train, train_rng);
  }
  if (timing) timing->training += seconds_since(start);
  if (final_loss) *final_loss = history.train_loss.empty() ? NAN : history.train_loss.back();

  start = Clock::now();
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(prior.size()));
  for (Eigen::Index j = 0; j < prior.size(); ++j) {
    rngs.push_back(make_rng(seed, Stream::sampling, r, static_cast<std::uint64_t>(j)));
  }
  Ensemble post;
  post.members = sample_posterior(*net, plan, fp, prior.members, z, rngs, trace);
  post.step_index = prior.step_index;
  post.kind = EnsembleKind::posterior;
  if (timing) timing->sampling += seconds_since(start);
  return post;
}

Ensemble enkf_measurement_update(const Ensemble& prior, const Eigen::VectorXd& z,
                                 const MeasurementOperator& op, double inflation,
                                 std::uint64_t seed) {
  if (prior.kind != EnsembleKind::prior) throw DomainError("measurement update needs a prior ensemble");
  Rng rng = make_rng(seed, Stream::enkf, static_cast<std::uint64_t>(prior.step_index));
  Ensemble post;
  post.members = enkf_update(prior.members, z, op, rng, inflation);
  post.step_index = prior.step_index;
  post.kind = EnsembleKind::posterior;
  return post;
}

FilterRun run_filter(const FilterConfig& cfg, const Eigen::MatrixXd& truth,
                     const std::map<long, Eigen::VectorXd>& measurements, std::uint64_t seed,
                     const RunOptions& options) {
  cfg.validate();
  const auto run_start = Clock::now();
  const long last = options.stop_step < 0 ? cfg.n_steps : options.stop_step;
  if (last > cfg.n_steps) throw DomainError("run_filter: stop_step exceeds n_steps");
  if (truth.rows() <= last) throw DimensionError("run_filter: truth trajectory is too short");
  require_dim(truth.cols(), cfg.dynamics.dim, "run_filter truth");

  const std::set<long> k = cfg.resolved_measurement_steps();
  for (long r : k) {
    if (r <= last && !measurements.count(r)) {
      throw DomainError("run_filter: missing measurement for step " + std::to_string(r));
    }
  }

  FilterRun run;
  run.seed = seed;
  run.method = cfg.method;
  FilterState state;
  if (options.resume) {
    state = *options.resume;
    require_dim(state.ensemble.dim(), cfg.dynamics.dim, "resume ensemble");
    require_dim(state.ensemble.size(), cfg.n_members, "resume ensemble size");
  } else {
    state.ensemble = initial_ensemble(cfg, truth.row(0).transpose(), seed);
  }

  const ForwardProcess fp = cfg.forward_process();
  const MeasurementOperator& op = fp.op();
  std::optional<SamplerPlan> plan;
  if (cfg.method == Method::masf && !k.empty()) plan = make_plan(fp, cfg.sampler);

  std::vector<Eigen::VectorXd> means;
  const auto record = [&](bool measured) {
    const long r = state.ensemble.step_index;
    const Eigen::VectorXd m = state.ensemble.mean();
    const Eigen::VectorXd err = m - truth.row(r).transpose();
    run.steps.push_back(r);
    means.push_back(m);
    run.rmse.push_back(std::sqrt(err.squaredNorm() / static_cast<double>(err.size())));
    run.spread.push_back(state.ensemble.spread());
    run.is_measurement_step.push_back(measured);
  };

  if (!options.resume) record(false);
  while (state.ensemble.step_index < last) {
    auto start = Clock::now();
    time_update(state.ensemble, cfg.dynamics, 1, seed);
    run.timing.time_update += seconds_since(start);
    const long r = state.ensemble.step_index;
    const bool measured = k.count(r) > 0;
    if (measured) {
      const Eigen::VectorXd& z = measurements.at(r);
      if (cfg.method == Method::masf) {
        double loss = 0.0;
        std::vector<SamplerTraceRow>* trace = options.trace ? &(*options.trace)[r] : nullptr;
        state.ensemble = masf_measurement_update(state.ensemble, z, fp, *plan, state.net, cfg, seed,
                                                 &run.timing, &loss, trace);
        run.final_train_loss.push_back(loss);
        if (options.checkpoint_dir) {
          save_checkpoint(*state.net, *options.checkpoint_dir / ("net_step_" + std::to_string(r) + ".bin"),
                          cfg.schedule.hash());
        }
      } else {
        start = Clock::now();
        state.ensemble = enkf_measurement_update(state.ensemble, z, op, cfg.enkf_inflation, seed);
        run.timing.enkf += seconds_since(start);
      }
    }
    record(measured);
  }

  run.estimates.resize(static_cast<Eigen::Index>(means.size()), cfg.dynamics.dim);
  double sq = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    run.estimates.row(static_cast<Eigen::Index>(i)) = means[i].transpose();
    const long r = run.steps[i];
    if (r >= cfg.eval_start && r <= cfg.eval_end) {
      sq += (means[i] - truth.row(r).transpose()).squaredNorm();
      count += cfg.dynamics.dim;
    }
  }
  run.window_rmse = count > 0 ? std::sqrt(sq / static_cast<double>(count)) : NAN;
  run.state = std::move(state);
  run.timing.total = seconds_since(run_start);
  return run;
}

}  // namespace masf
