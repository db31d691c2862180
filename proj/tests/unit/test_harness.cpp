#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "masf/config.hpp"
#include "masf/errors.hpp"
#include "masf/experiment.hpp"
#include "masf/io.hpp"
#include "masf/report.hpp"

namespace fs = std::filesystem;
using masf::Json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("masf_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Json tiny_enkf(const fs::path& out) {
  Json doc = Json::parse(R"({
    "dynamics": {"kind": "lorenz63"},
    "filter": {"method": "enkf", "n_members": 10, "n_steps": 60, "gap": 20,
               "eval_start": 0, "eval_end": 60},
    "experiment": {"seeds": [0], "methods": ["enkf"]}
  })");
  doc["experiment"]["output_dir"] = out.string();
  return doc;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MASF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error_field(const Json& doc) {
  try {
    masf::parse_experiment(doc);
  } catch (const masf::ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalLorenz63Defaults) {
  const auto spec = masf::parse_experiment(Json::parse(R"({"dynamics": {"kind": "lorenz63"}})"));
  EXPECT_EQ(spec.base.n_members, 100);
  EXPECT_EQ(spec.base.sampler.nfe, 500);
  EXPECT_EQ(spec.base.train.epochs, 500);
  EXPECT_EQ(spec.base.gap, 100);
  EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Config, UnknownKeyIsNamed) {
  const Json doc = Json::parse(R"({"sampler": {"nfe_steps": 10}})");
  EXPECT_EQ(config_error_field(doc), "sampler.nfe_steps");
  EXPECT_EQ(config_error_field(Json::parse(R"({"samplr": {}})")), "samplr");
}

TEST(Config, GapAndStepsAreExclusive) {
  const Json doc = Json::parse(R"({"filter": {"gap": 10, "measurement_steps": [10, 20]}})");
  EXPECT_THROW(masf::parse_experiment(doc), masf::ConfigError);
}

TEST(Config, ExplicitMeasurementSteps) {
  const auto spec = masf::parse_experiment(
      Json::parse(R"({"filter": {"n_steps": 50, "measurement_steps": [10, 30]}})"));
  EXPECT_EQ(spec.base.resolved_measurement_steps(), (std::set<long>{10, 30}));
}

TEST(Config, StepZeroWarns) {
  const auto spec = masf::parse_experiment(
      Json::parse(R"({"filter": {"n_steps": 50, "measurement_steps": [0, 30]}})"));
  EXPECT_FALSE(spec.warnings.empty());
}

TEST(Config, WrongTypeNamesField) {
  EXPECT_EQ(config_error_field(Json::parse(R"({"train": {"epochs": "many"}})")), "train.epochs");
}

TEST(Config, ParseErrorReportsLine) {
  try {
    masf::parse_json_text("{\n  \"dynamics\": {\n    \"kind\": \"lorenz63\",\n  }\n}", "cfg.json");
    FAIL() << "expected ConfigError";
  } catch (const masf::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:4"), std::string::npos) << e.what();
  }
}

TEST(Config, RoundTripThroughJson) {
  const auto spec = masf::parse_experiment(Json::parse(
      R"({"dynamics": {"kind": "lorenz96", "dim": 8, "forcing": 12},
          "observation": {"kind": "grid_mask", "stride": 2, "sigma": 0.5},
          "sampler": {"nfe": 40}})"));
  const masf::FilterConfig back = masf::parse_filter_config(masf::to_json(spec.base));
  EXPECT_EQ(masf::to_json(back).dump(), masf::to_json(spec.base).dump());
  EXPECT_EQ(back.dynamics.dim, 8);
  EXPECT_DOUBLE_EQ(back.dynamics.forcing, 12.0);
  EXPECT_EQ(back.network.state_dim, 8);
}

TEST(Config, SweepPointsAndAliases) {
  const auto spec = masf::parse_experiment(Json::parse(
      R"({"dynamics": {"kind": "lorenz96", "dim": 8},
          "filter": {"n_steps": 100, "eval_start": 25, "eval_end": 100},
          "experiment": {"seeds": [0, 1], "methods": ["masf", "enkf"],
                         "sweep": [{"path": "gap", "values": [5, 25]},
                                   {"path": "F", "values": [8, 16]}]}})"));
  EXPECT_EQ(spec.sweep_points().size(), 4u);
  EXPECT_EQ(spec.run_count(), 16u);
  const auto cfg = spec.config_at(spec.sweep_points().back());
  EXPECT_EQ(cfg.gap, 25);
  EXPECT_DOUBLE_EQ(cfg.dynamics.forcing, 16.0);
  EXPECT_EQ(masf::canonical_sweep_path("gap"), "filter.gap");
  EXPECT_EQ(masf::canonical_sweep_path("dynamics.F"), "dynamics.forcing");
  EXPECT_EQ(masf::canonical_sweep_path("d"), "dynamics.dim");
}

TEST(Config, UnresolvableSweepPathRejected) {
  const Json doc = Json::parse(
      R"({"experiment": {"sweep": [{"path": "filter.gapp", "values": [1]}]}})");
  EXPECT_THROW(masf::parse_experiment(doc), masf::ConfigError);
}

TEST(Config, BudgetGuard) {
  const Json doc = Json::parse(
      R"({"experiment": {"budget": 1000}})");
  EXPECT_THROW(masf::parse_experiment(doc), masf::ConfigError);
}

TEST(Config, LargeDimensionNeedsUnlock) {
  const Json locked = Json::parse(
      R"({"dynamics": {"kind": "lorenz96", "dim": 512},
          "filter": {"n_steps": 100, "eval_start": 25, "eval_end": 100},
          "experiment": {"budget": 1e20}})");
  EXPECT_THROW(masf::parse_experiment(locked), masf::ConfigError);
  Json unlocked = locked;
  unlocked["experiment"]["unlock_large"] = true;
  EXPECT_NO_THROW(masf::parse_experiment(unlocked));
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& entry : fs::directory_iterator(MASF_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(masf::load_config(entry.path())) << entry.path();
  }
}

TEST(Report, EmptySummaryIsHeaderOnly) {
  masf::Summary s;
  EXPECT_EQ(masf::summary_csv(s), "method,rmse_mean,rmse_std,n_seeds\n");
  s.param_names = {"filter.gap"};
  EXPECT_EQ(masf::summary_csv(s), "method,filter.gap,rmse_mean,rmse_std,n_seeds\n");
}

TEST(Report, FourSignificantDigits) {
  EXPECT_EQ(masf::format_sig4(1.234567), "1.235");
  EXPECT_EQ(masf::format_sig4(0.000123456), "0.0001235");
  EXPECT_EQ(masf::format_sig4(12345.0), "1.234e+04");
}

TEST(Report, WinnerPerSweepPoint) {
  masf::Summary s;
  s.param_names = {"filter.gap"};
  s.rows = {{"masf", {"5"}, 1.0, 0.1, 3, false},
            {"enkf", {"5"}, 2.0, 0.1, 3, false},
            {"masf", {"25"}, 3.0, 0.1, 3, false},
            {"enkf", {"25"}, 2.5, 0.1, 3, false}};
  s.flag_winners();
  EXPECT_TRUE(s.rows[0].winner);
  EXPECT_FALSE(s.rows[1].winner);
  EXPECT_FALSE(s.rows[2].winner);
  EXPECT_TRUE(s.rows[3].winner);
  const std::string csv = masf::render(s, masf::ReportFormat::csv);
  EXPECT_NE(csv.find("masf,5,1,0.1,3,1"), std::string::npos) << csv;
  const std::string md = masf::render(s, masf::ReportFormat::markdown);
  EXPECT_NE(md.find("**"), std::string::npos);
}

TEST(Report, JsonRoundTrip) {
  masf::Summary s;
  s.param_names = {"dynamics.forcing"};
  s.rows = {{"masf", {"8"}, 0.5, 0.25, 5, true},
            {"enkf", {"8"}, std::numeric_limits<double>::quiet_NaN(), 0.0, 0, false}};
  const std::string text = masf::render(s, masf::ReportFormat::json);
  const masf::Summary back = masf::summary_from_json(Json::parse(text));
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.param_names, s.param_names);
  EXPECT_EQ(back.rows[0].rmse_mean, 0.5);
  EXPECT_TRUE(back.rows[0].winner);
  EXPECT_TRUE(std::isnan(back.rows[1].rmse_mean));
  EXPECT_EQ(masf::render(back, masf::ReportFormat::json), text);
}

TEST(Experiment, SingleRunArtifacts) {
  const fs::path out = scratch("single");
  const auto spec = masf::parse_experiment(tiny_enkf(out));
  EXPECT_EQ(spec.run_count(), 1u);
  const auto result = masf::run_experiment(spec, {});
  ASSERT_EQ(result.runs.size(), 1u);
  EXPECT_EQ(result.failures, 0);
  const fs::path dir = result.runs[0].dir;
  for (const char* f : {"manifest.json", "metrics.csv", "estimates.csv", "measurements.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  int manifests = 0;
  for (const auto& e : fs::recursive_directory_iterator(out)) manifests += e.path().filename() == "manifest.json";
  EXPECT_EQ(manifests, 1);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));

  const Json manifest = Json::parse(masf::read_file(dir / "manifest.json"));
  for (const char* key : {"config", "seed", "version", "config_hash", "deviations", "status"}) {
    EXPECT_TRUE(manifest.contains(key)) << key;
  }
  // The manifest alone is enough to rerun.
  const auto cfg = masf::parse_filter_config(manifest["config"]);
  EXPECT_EQ(masf::run_hash(cfg, manifest["seed"].get<std::uint64_t>()), manifest["config_hash"]);

  const std::string metrics = masf::read_file(dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "step,rmse,ensemble_spread,is_measurement_step");
}

TEST(Experiment, CompletedRunsAreSkipped) {
  const fs::path out = scratch("skip");
  const auto spec = masf::parse_experiment(tiny_enkf(out));
  const auto first = masf::run_experiment(spec, {});
  const auto before = masf::read_file(first.runs[0].dir / "metrics.csv");
  const auto second = masf::run_experiment(spec, {});
  EXPECT_EQ(second.runs[0].status, masf::RunStatus::skipped);
  EXPECT_EQ(second.runs[0].window_rmse, first.runs[0].window_rmse);
  masf::ExperimentOptions force;
  force.settings.force = true;
  const auto third = masf::run_experiment(spec, force);
  EXPECT_EQ(third.runs[0].status, masf::RunStatus::ok);
  EXPECT_EQ(masf::read_file(third.runs[0].dir / "metrics.csv"), before);
}

TEST(Experiment, FailedRunDoesNotStopSweep) {
  // A huge step size makes the truth diverge for every forcing.
  const fs::path out = scratch("fail");
  Json doc = Json::parse(R"({
    "dynamics": {"kind": "lorenz96", "dim": 6, "dt": 0.5},
    "filter": {"method": "enkf", "n_members": 10, "n_steps": 200, "gap": 20,
               "eval_start": 0, "eval_end": 200},
    "experiment": {"seeds": [0], "methods": ["enkf"],
                   "sweep": [{"path": "dynamics.dt", "values": [0.5, 0.01]}]}})");
  doc["experiment"]["output_dir"] = out.string();
  const auto result = masf::run_experiment(masf::parse_experiment(doc), {});
  ASSERT_EQ(result.runs.size(), 2u);
  EXPECT_EQ(result.failures, 1);
  EXPECT_TRUE(fs::exists(out / "failures.csv"));
  int ok = 0;
  for (const auto& r : result.runs) ok += r.status == masf::RunStatus::ok;
  EXPECT_EQ(ok, 1);
}

TEST(Experiment, SampleStdOverSeeds) {
  masf::ExperimentSpec spec;
  spec.methods = {masf::Method::enkf};
  std::vector<masf::RunRecord> runs(3);
  const double v[] = {1.0, 2.0, 4.0};
  for (int i = 0; i < 3; ++i) {
    runs[i].method = masf::Method::enkf;
    runs[i].seed = i;
    runs[i].window_rmse = v[i];
  }
  const auto s = masf::summarize(spec, runs);
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_NEAR(s.rows[0].rmse_mean, 7.0 / 3.0, 1e-14);
  EXPECT_NEAR(s.rows[0].rmse_std, std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                             (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0), 1e-14);
  EXPECT_EQ(s.rows[0].n_seeds, 3);
}

TEST(Io, TrajectoryAndMatrixRoundTrip) {
  const fs::path dir = scratch("io");
  masf::Rng rng(1);
  const Eigen::MatrixXd m = masf::standard_normal(rng, 7, 3);
  masf::write_trajectory_csv(dir / "t.csv", m, 0.01);
  EXPECT_EQ(masf::read_trajectory_csv(dir / "t.csv"), m);
  masf::save_matrix_binary(dir / "m.bin", m);
  EXPECT_EQ(masf::load_matrix_binary(dir / "m.bin"), m);
  std::map<long, Eigen::VectorXd> z = {{5, m.row(0).transpose()}, {10, m.row(1).transpose()}};
  masf::write_measurements_csv(dir / "z.csv", z);
  EXPECT_EQ(masf::read_measurements_csv(dir / "z.csv"), z);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("nonsense"), 2);
  EXPECT_EQ(run_cli("assimilate --config " + (dir / "missing.json").string()), 2);

  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << R"({"sampler": {"nfe_steps": 10}})";
  EXPECT_EQ(run_cli("assimilate --config " + bad.string() + " --out " + (dir / "bad").string()), 2);

  const fs::path good = dir / "good.json";
  std::ofstream(good) << tiny_enkf(dir / "sweep").dump();
  const fs::path a = dir / "a", b = dir / "b";
  EXPECT_EQ(run_cli("assimilate --config " + good.string() + " --seed 3 --out " + a.string()), 0);
  EXPECT_EQ(run_cli("assimilate --config " + good.string() + " --seed 3 --out " + b.string()), 0);
  EXPECT_EQ(masf::read_file(a / "metrics.csv"), masf::read_file(b / "metrics.csv"));

  EXPECT_EQ(run_cli("simulate --config " + good.string() + " --out " + (dir / "sim").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "sim" / "truth.csv"));
  EXPECT_TRUE(fs::exists(dir / "sim" / "measurements.csv"));

  EXPECT_EQ(run_cli("sweep --config " + good.string()), 0);
  EXPECT_EQ(run_cli("report --in " + (dir / "sweep").string() + " --format markdown"), 0);

  // A run that diverges exits with 1.
  const fs::path boom = dir / "boom.json";
  std::ofstream(boom) << R"({"dynamics": {"kind": "lorenz96", "dim": 6, "dt": 0.5},
    "filter": {"method": "enkf", "n_members": 10, "n_steps": 200, "gap": 20, "eval_start": 0, "eval_end": 200}})";
  EXPECT_EQ(run_cli("assimilate --config " + boom.string() + " --out " + (dir / "boom").string()), 1);
}
