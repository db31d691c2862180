#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "masf/config.hpp"
#include "masf/errors.hpp"
#include "masf/experiment.hpp"
#include "masf/io.hpp"
#include "masf/report.hpp"
#include "masf/verify/checks.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitConfigError = 2;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  int jobs = 1;
  bool trace = false;
  bool checkpoints = false;
  std::string input;
  std::string format = "markdown";
  std::vector<int> checks;
};

int cmd_simulate(const Args& a) {
  const masf::ExperimentSpec spec = masf::load_config(a.config);
  const std::uint64_t seed = a.seed.value_or(spec.seed);
  const fs::path out = a.out.empty() ? fs::path("simulate") : fs::path(a.out);
  const masf::FilterConfig& cfg = spec.base;
  const Eigen::MatrixXd truth = masf::cached_truth(cfg, seed, out / "cache");
  masf::write_trajectory_csv(out / "truth.csv", truth, cfg.dynamics.dt);
  masf::write_measurements_csv(out / "measurements.csv", masf::simulate_measurements(cfg, truth, seed));
  std::cout << "wrote " << truth.rows() << " steps and " << cfg.resolved_measurement_steps().size()
            << " measurements to " << out.string() << "\n";
  return kExitOk;
}

int cmd_assimilate(const Args& a) {
  const masf::ExperimentSpec spec = masf::load_config(a.config);
  for (const auto& w : spec.warnings) std::cerr << "warning: " << w << "\n";
  const std::uint64_t seed = a.seed.value_or(spec.seed);
  const fs::path out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  masf::RunSettings settings;
  settings.force = a.force;
  settings.trace = a.trace;
  settings.checkpoints = a.checkpoints;
  settings.cache_dir = out / "cache";
  const masf::RunRecord rec = masf::execute_run(spec.base, seed, out, settings);
  switch (rec.status) {
    case masf::RunStatus::failed:
      std::cerr << "run failed: " << rec.error << "\n";
      return kExitRunFailure;
    case masf::RunStatus::skipped:
      std::cout << "up to date (use --force to rerun); ";
      break;
    case masf::RunStatus::ok:
      break;
  }
  std::cout << masf::to_string(spec.base.method) << " seed " << seed
            << " window rmse " << masf::format_sig4(rec.window_rmse) << " -> " << out.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const Args& a) {
  masf::ExperimentSpec spec = masf::load_config(a.config);
  for (const auto& w : spec.warnings) std::cerr << "warning: " << w << "\n";
  if (!a.out.empty()) spec.output_dir = a.out;
  if (a.seed) spec.seeds = {*a.seed};
  masf::ExperimentOptions opt;
  opt.jobs = a.jobs;
  opt.settings.force = a.force;
  opt.settings.trace = a.trace;
  opt.settings.checkpoints = a.checkpoints;
  opt.log = &std::cerr;
  std::cerr << spec.run_count() << " runs -> " << spec.output_dir.string() << "\n";
  const masf::ExperimentResult res = masf::run_experiment(spec, opt);
  std::cout << masf::render(res.summary, masf::ReportFormat::markdown);
  if (res.failures > 0) {
    std::cerr << res.failures << " run(s) failed; see " << (spec.output_dir / "failures.csv").string() << "\n";
    return kExitRunFailure;
  }
  return kExitOk;
}

int cmd_report(const Args& a) {
  fs::path in = a.input;
  if (fs::is_directory(in)) in /= "summary.json";
  const masf::Json j = masf::parse_json_text(masf::read_file(in), in.string());
  masf::Summary s = masf::summary_from_json(j);
  s.flag_winners();
  std::cout << masf::render(s, masf::report_format_from_string(a.format));
  return kExitOk;
}

int cmd_verify(const Args& a) {
  masf::verify::CheckOptions opt;
  if (a.seed) opt.seed = *a.seed;
  opt.jobs = a.jobs;
  if (!a.out.empty()) opt.workdir = a.out;
  const std::vector<int> ids = a.checks.empty() ? masf::verify::analytic_check_ids() : a.checks;
  int failed = 0;
  for (int id : ids) {
    const auto r = masf::verify::run_check(id, opt);
    std::cout << masf::verify::format_result(r) << std::endl;
    failed += r.passed ? 0 : 1;
  }
  std::cout << (ids.size() - static_cast<std::size_t>(failed)) << "/" << ids.size() << " checks passed\n";
  return failed ? kExitRunFailure : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement-aware score-based filtering for Lorenz-63/96 twin experiments"};
  app.set_version_flag("--version", std::string(MASF_VERSION));
  app.require_subcommand(1);
  Args a;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", a.config, "JSON configuration file")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--seed", a.seed, "master seed (overrides the config)");
    sub->add_option("--out", a.out, "output directory");
  };

  auto* simulate = app.add_subcommand("simulate", "write the truth trajectory and measurements");
  add_common(simulate, true);

  auto* assimilate = app.add_subcommand("assimilate", "run one filter and write its artifacts");
  add_common(assimilate, true);
  assimilate->add_flag("--force", a.force, "rerun even if an identical run is on disk");
  assimilate->add_flag("--trace", a.trace, "dump per-step sampler statistics to trace.csv");
  assimilate->add_flag("--checkpoints", a.checkpoints, "save the score net at every measurement step");

  auto* sweep = app.add_subcommand("sweep", "run every sweep point, seed and method of a config");
  add_common(sweep, true);
  sweep->add_flag("--force", a.force, "rerun runs that are already complete");
  sweep->add_option("--jobs", a.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_flag("--trace", a.trace, "dump sampler traces for every run");
  sweep->add_flag("--checkpoints", a.checkpoints, "save score nets for every run");

  auto* report = app.add_subcommand("report", "render a sweep summary");
  report->add_option("--in", a.input, "sweep output directory or summary.json")->required()->check(CLI::ExistingPath);
  report->add_option("--format", a.format, "csv, json or markdown")
      ->check(CLI::IsMember({"csv", "json", "markdown", "md", "markdown-table"}));

  auto* verify = app.add_subcommand("verify", "run the analytic oracle checks");
  verify->add_option("--seed", a.seed, "seed for the checks");
  verify->add_option("--check", a.checks, "check ids to run (default: the analytic ones)");
  verify->add_option("--jobs", a.jobs, "concurrent runs for the end-to-end checks");
  verify->add_option("--out", a.out, "scratch directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*simulate) return cmd_simulate(a);
    if (*assimilate) return cmd_assimilate(a);
    if (*sweep) return cmd_sweep(a);
    if (*report) return cmd_report(a);
    if (*verify) return cmd_verify(a);
  } catch (const masf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailure;
  }
  return kExitOk;
}
