#include "masf/experiment.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "masf/errors.hpp"
#include "masf/io.hpp"

namespace masf {

namespace {

std::string point_label(const std::vector<std::pair<std::string, Json>>& point) {
  if (point.empty()) return "base";
  std::string label;
  for (const auto& [path, value] : point) {
    if (!label.empty()) label += "__";
    label += path.substr(path.find('.') + 1) + "=" + value.dump();
  }
  for (char& c : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                      c == '=' || c == '_';
    if (!keep) c = '_';
  }
  return label;
}

std::string render_value(const Json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

Json timing_json(const PhaseTiming& t) {
  Json j;
  j["time_update_s"] = t.time_update;
  j["training_s"] = t.training;
  j["sampling_s"] = t.sampling;
  j["enkf_s"] = t.enkf;
  j["total_s"] = t.total;
  return j;
}

}  // namespace

std::string run_hash(const FilterConfig& cfg, std::uint64_t seed) {
  return hash_hex(to_json(cfg).dump() + "|seed=" + std::to_string(seed) + "|version=" + MASF_VERSION);
}

std::vector<std::string> declared_deviations(const FilterConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.method == Method::masf) {
    if (cfg.dynamics.kind == DynamicsKind::lorenz96) {
      out.push_back("prior score network is a time-conditioned MLP instead of a 1D U-Net");
    }
    out.push_back("training pseudo-times are drawn from U(t_min, 1) rather than U(0, 1)");
    if (cfg.train.loss_weighting == LossWeighting::noise) {
      out.push_back("score-matching residual is weighted by sigma^2 gamma^2(t)");
    }
  }
  return out;
}

Eigen::MatrixXd cached_truth(const FilterConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& cache_dir) {
  if (cache_dir.empty()) return simulate_truth(cfg, seed);
  const Json key = {{"dynamics", to_json(cfg)["dynamics"]}, {"n_steps", cfg.n_steps}, {"seed", seed}};
  const auto path = cache_dir / ("truth_" + hash_hex(key.dump()) + ".bin");
  if (std::filesystem::exists(path)) {
    Eigen::MatrixXd truth = load_matrix_binary(path);
    if (truth.rows() == cfg.n_steps + 1 && truth.cols() == cfg.dynamics.dim) return truth;
  }
  Eigen::MatrixXd truth = simulate_truth(cfg, seed);
  save_matrix_binary(path, truth);
  return truth;
}

RunRecord execute_run(const FilterConfig& cfg, std::uint64_t seed,
                      const std::filesystem::path& dir, const RunSettings& settings) {
  RunRecord rec;
  rec.method = cfg.method;
  rec.seed = seed;
  rec.dir = dir;
  const std::string hash = run_hash(cfg, seed);
  const auto manifest_path = dir / "manifest.json";

  if (!settings.force && std::filesystem::exists(manifest_path)) {
    try {
      const Json old = Json::parse(read_file(manifest_path));
      if (old.value("config_hash", "") == hash && old.value("status", "") == "ok" &&
          std::filesystem::exists(dir / "metrics.csv")) {
        rec.status = RunStatus::skipped;
        rec.window_rmse = old.at("window_rmse").get<double>();
        return rec;
      }
    } catch (const std::exception&) {
      // Unreadable manifest: run again.
    }
  }

  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["config"] = to_json(cfg);
  manifest["seed"] = seed;
  manifest["method"] = to_string(cfg.method);
  manifest["version"] = MASF_VERSION;
  manifest["config_hash"] = hash;
  manifest["deviations"] = declared_deviations(cfg);
  {
    Rng unused(0);
    ScoreNetSpec spec = cfg.network;
    manifest["parameter_count"] = cfg.method == Method::masf ? ScoreNet(spec, unused).parameter_count() : 0;
  }

  try {
    const Eigen::MatrixXd truth = cached_truth(cfg, seed, settings.cache_dir);
    const auto z = simulate_measurements(cfg, truth, seed);
    write_measurements_csv(dir / "measurements.csv", z);
    std::map<long, std::vector<SamplerTraceRow>> trace;
    RunOptions options;
    if (settings.trace) options.trace = &trace;
    if (settings.checkpoints) options.checkpoint_dir = dir / "checkpoints";
    if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);
    const FilterRun run = run_filter(cfg, truth, z, seed, options);

    write_file_atomic(dir / "metrics.csv", metrics_csv(run));
    write_file_atomic(dir / "estimates.csv", estimates_csv(run));
    if (settings.trace) write_file_atomic(dir / "trace.csv", trace_csv(trace));
    rec.window_rmse = run.window_rmse;
    manifest["status"] = "ok";
    manifest["window_rmse"] = run.window_rmse;
    manifest["measurement_steps"] = run.final_train_loss.size() > 0
                                        ? run.final_train_loss.size()
                                        : cfg.resolved_measurement_steps().size();
    manifest["timing"] = timing_json(run.timing);
    if (!run.final_train_loss.empty()) {
      Json losses = Json::array();
      for (double l : run.final_train_loss) losses.push_back(std::isfinite(l) ? Json(l) : Json(nullptr));
      manifest["final_train_loss"] = losses;
    }
  } catch (const std::exception& e) {
    rec.status = RunStatus::failed;
    rec.error = e.what();
    manifest["status"] = "failed";
    manifest["error"] = e.what();
  }
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return rec;
}

Summary summarize(const ExperimentSpec& spec, const std::vector<RunRecord>& runs) {
  Summary s;
  for (const auto& axis : spec.sweep) s.param_names.push_back(axis.path);
  std::map<std::pair<std::vector<std::string>, std::string>, std::vector<double>> groups;
  std::vector<std::pair<std::vector<std::string>, std::string>> order;
  for (const auto& r : runs) {
    std::vector<std::string> params;
    for (const auto& [path, value] : r.point) params.push_back(render_value(value));
    const auto key = std::make_pair(params, to_string(r.method));
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    if (r.status != RunStatus::failed && std::isfinite(r.window_rmse)) g.push_back(r.window_rmse);
  }
  for (const auto& key : order) {
    const auto& v = groups[key];
    SummaryRow row;
    row.params = key.first;
    row.method = key.second;
    row.n_seeds = static_cast<int>(v.size());
    if (v.empty()) {
      row.rmse_mean = row.rmse_std = std::nan("");
    } else {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      row.rmse_mean = mean;
      row.rmse_std = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    }
    s.rows.push_back(std::move(row));
  }
  s.flag_winners();
  return s;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const ExperimentOptions& options) {
  struct Task {
    std::vector<std::pair<std::string, Json>> point;
    FilterConfig cfg;
    std::uint64_t seed;
    std::filesystem::path dir;
  };
  std::vector<Task> tasks;
  for (const auto& point : spec.sweep_points()) {
    const FilterConfig base = spec.config_at(point);
    for (Method m : spec.methods) {
      FilterConfig cfg = base;
      cfg.method = m;
      for (std::uint64_t seed : spec.seeds) {
        tasks.push_back({point, cfg, seed,
                         spec.output_dir / point_label(point) / to_string(m) /
                             ("seed_" + std::to_string(seed))});
      }
    }
  }

  RunSettings settings = options.settings;
  if (settings.cache_dir.empty()) settings.cache_dir = spec.output_dir / "cache";
  std::filesystem::create_directories(settings.cache_dir);

  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      RunRecord rec = execute_run(t.cfg, t.seed, t.dir, settings);
      rec.point = t.point;
      if (options.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *options.log << "[" << (i + 1) << "/" << tasks.size() << "] " << t.dir.string() << " "
                     << (rec.status == RunStatus::ok        ? "ok"
                         : rec.status == RunStatus::skipped ? "skipped"
                                                            : "FAILED: " + rec.error);
        if (rec.status != RunStatus::failed) *options.log << " rmse=" << format_sig4(rec.window_rmse);
        *options.log << "\n";
      }
      records[i] = std::move(rec);
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentResult result;
  result.summary = summarize(spec, records);
  for (const auto& r : records) result.failures += r.status == RunStatus::failed ? 1 : 0;
  result.runs = std::move(records);
  write_file_atomic(spec.output_dir / "summary.csv", summary_csv(result.summary));
  write_file_atomic(spec.output_dir / "summary.json", summary_to_json(result.summary).dump(2) + "\n");
  if (result.failures > 0) {
    std::string out = "dir,error\n";
    for (const auto& r : result.runs) {
      if (r.status != RunStatus::failed) continue;
      std::string err = r.error;
      for (char& c : err) {
        if (c == ',' || c == '\n') c = ';';
      }
      out += r.dir.string() + "," + err + "\n";
    }
    write_file_atomic(spec.output_dir / "failures.csv", out);
  }
  return result;
}

}  // namespace masf
