#include "masf/verify/checks.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "masf/config.hpp"
#include "masf/errors.hpp"
#include "masf/experiment.hpp"
#include "masf/io.hpp"
#include "masf/sampler.hpp"
#include "masf/score_net.hpp"
#include "masf/verify/oracles.hpp"

namespace masf::verify {

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

struct OperatorCase {
  std::string label;
  MeasurementOperator op;
};

MeasurementOperator alternating_mask(Eigen::Index d, double sigma) {
  std::vector<bool> mask(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) mask[static_cast<std::size_t>(i)] = i % 2 == 0;
  return MeasurementOperator::grid_mask(mask, sigma);
}

// Random operators keep their spectrum in [0, 1]; larger eigenvalues make the
// moment-matching diffusion indefinite close to t = 1.
OperatorCase operator_case(int which, Eigen::Index d, double sigma, Rng& rng) {
  switch (which % 3) {
    case 0: return {"I", MeasurementOperator::identity(d, sigma)};
    case 1: return {"mask", alternating_mask(d, sigma)};
    default: return {"psd", MeasurementOperator::dense(random_spectrum_matrix(rng, d, 0.0, 1.0), sigma)};
  }
}

Json l63_document() {
  return Json{{"dynamics", {{"kind", "lorenz63"}}}};
}

}  // namespace

CheckResult check_posterior_exactness(const CheckOptions& opt) {
  CheckResult r{1, "linear-Gaussian posterior exactness", true, "", 0.0};
  Rng rng = make_rng(opt.seed, Stream::test, 1);
  const long n = 10000;
  int total = 0;
  int passed = 0;
  double worst_z = 0.0;
  double worst_cov = 0.0;
  std::string worst_case;
  std::ostringstream failures;
  for (Eigen::Index d = 1; d <= 3; ++d) {
    for (int which = 0; which < 3; ++which) {
      if (d == 1 && which == 1) continue;  // a one-coordinate mask is the identity
      for (double sigma : {0.5, 1.0}) {
        const OperatorCase oc = operator_case(which, d, sigma, rng);
        const ForwardProcess fp(oc.op, Schedule::cosine());
        Gaussian prior{standard_normal(rng, d), random_spd(rng, d)};
        const Eigen::MatrixXd a = oc.op.matrix();
        const Eigen::LLT<Eigen::MatrixXd> chol(prior.cov);
        const Eigen::VectorXd x_true = prior.mean + chol.matrixL() * standard_normal(rng, d);
        const Eigen::VectorXd z = a * x_true + sigma * standard_normal(rng, d);
        const Gaussian kal = kalman_posterior(prior, a, sigma, z);

        Eigen::MatrixXd members = (chol.matrixL() * standard_normal(rng, d, n)).eval();
        members.colwise() += prior.mean;
        std::vector<Rng> rngs;
        for (long j = 0; j < n; ++j) rngs.push_back(make_rng(opt.seed, Stream::sampling, static_cast<std::uint64_t>(total), static_cast<std::uint64_t>(j)));
        const AnalyticGaussianScore score(fp, prior.mean, prior.cov);
        const SamplerPlan plan = make_plan(fp, SamplerConfig{});
        const Gaussian got = sample_moments(sample_posterior(score, plan, fp, members, z, rngs));

        double z_max = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
          const double se = std::sqrt(kal.cov(i, i) / static_cast<double>(n));
          z_max = std::max(z_max, std::abs(got.mean[i] - kal.mean[i]) / se);
        }
        const double cov_err = (got.cov - kal.cov).norm() / kal.cov.norm();
        const bool ok = z_max <= 3.0 && cov_err <= 0.05;
        ++total;
        passed += ok ? 1 : 0;
        const std::string label = "d=" + std::to_string(d) + " A=" + oc.label + " sigma=" + fmt(sigma);
        if (!ok) failures << " [" << label << ": mean " << fmt(z_max, 3) << " SE, cov " << fmt(100 * cov_err, 3) << "%]";
        if (z_max > worst_z) {
          worst_z = z_max;
          worst_case = label;
        }
        worst_cov = std::max(worst_cov, cov_err);
        if (opt.log) {
          *opt.log << "  " << label << ": mean error " << fmt(z_max, 3) << " SE, covariance error "
                   << fmt(100 * cov_err, 3) << "%" << (ok ? "" : "  FAIL") << "\n";
        }
      }
    }
  }
  r.passed = passed == total;
  r.detail = std::to_string(passed) + "/" + std::to_string(total) + " cases within 3 SE and 5%; worst mean " +
             fmt(worst_z, 3) + " SE (" + worst_case + "), worst covariance " + fmt(100 * worst_cov, 3) + "%";
  return r;
}

CheckResult check_moment_matching_sde(const CheckOptions& opt) {
  CheckResult r{2, "moment-matching SDE", true, "", 0.0};
  Rng rng = make_rng(opt.seed, Stream::test, 2);
  const std::vector<double> times = {0.25, 0.5, 0.75};
  const long n_paths = 20000;
  double worst = 0.0;
  int tests = 0;
  int bad = 0;
  const std::vector<std::pair<Eigen::Index, double>> cases = {{2, 1.0}, {3, 0.5}, {4, 0.8}};
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto [d, sigma] = cases[c];
    const OperatorCase oc = operator_case(static_cast<int>(c), d, sigma, rng);
    const ForwardProcess fp(oc.op, Schedule::cosine());
    const Eigen::VectorXd x0 = 2.0 * standard_normal(rng, d);
    const auto moments = euler_maruyama_moments(fp, x0, times, n_paths, 4096, rng);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Eigen::VectorXd mean = fp.interp_operator(times[k]) * x0;
      const Eigen::MatrixXd cov = fp.marginal_cov(times[k]);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double se = std::sqrt(cov(i, i) / n_paths);
        const double zs = std::abs(moments[k].mean[i] - mean[i]) / se;
        worst = std::max(worst, zs);
        ++tests;
        bad += zs > 3.0 ? 1 : 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double se_c = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n_paths);
          const double zc = std::abs(moments[k].cov(i, j) - cov(i, j)) / se_c;
          worst = std::max(worst, zc);
          ++tests;
          bad += zc > 3.0 ? 1 : 0;
        }
      }
    }
  }
  r.passed = bad == 0;
  r.detail = std::to_string(tests - bad) + "/" + std::to_string(tests) +
             " moments within 3 SE (20000 paths); largest deviation " + fmt(worst, 3) + " SE";
  return r;
}

CheckResult check_likelihood_score(const CheckOptions& opt) {
  CheckResult r{3, "likelihood score vs finite differences", true, "", 0.0};
  Rng rng = make_rng(opt.seed, Stream::test, 3);
  std::uniform_real_distribution<double> ut(0.02, 0.95);
  std::uniform_real_distribution<double> us(0.3, 1.5);
  std::uniform_int_distribution<int> ud(2, 4);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index d = ud(rng);
    const OperatorCase oc = operator_case(i, d, us(rng), rng);
    const ForwardProcess fp(oc.op, Schedule::cosine());
    const double t = ut(rng);
    const Eigen::VectorXd x = 2.0 * standard_normal(rng, d);
    const Eigen::VectorXd z = 2.0 * standard_normal(rng, d);
    const Eigen::VectorXd g = fp.likelihood_score(z, x, t);
    const auto logp = [&](const Eigen::VectorXd& xx) {
      const Gaussian law = endpoint_law(fp, t, xx);
      return gaussian_log_density(z, law.mean, law.cov);
    };
    const Eigen::VectorXd fd = central_difference_gradient(logp, x, 1e-3);
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  r.passed = worst <= 1e-5;
  r.detail = "100 triples; worst relative error " + fmt(worst, 3) + " (limit 1e-5)";
  return r;
}

CheckResult check_dsm_gradient(const CheckOptions& opt) {
  CheckResult r{4, "score-matching gradients vs finite differences", true, "", 0.0};
  Rng rng = make_rng(opt.seed, Stream::test, 4);
  double worst = 0.0;
  int nets = 0;
  for (Eigen::Index d : {3, 4}) {
    for (auto act : {Activation::silu, Activation::tanh}) {
      for (auto weighting : {LossWeighting::score, LossWeighting::noise}) {
        for (const std::vector<Eigen::Index>& hidden : {std::vector<Eigen::Index>{8}, std::vector<Eigen::Index>{8, 6}}) {
          ScoreNetSpec spec{d, 4, hidden, act};
          ScoreNet net(spec, rng, false);
          const ForwardProcess fp(alternating_mask(d, 0.7), Schedule::cosine());
          const long b = 5;
          const Eigen::MatrixXd x = standard_normal(rng, d, b);
          const Eigen::MatrixXd noise = standard_normal(rng, d, b);
          Eigen::VectorXd t(b);
          std::uniform_real_distribution<double> ut(0.1, 0.9);
          for (long k = 0; k < b; ++k) t[k] = ut(rng);
          const DsmResult res = dsm_loss(net, x, fp, t, noise, weighting);
          const double h = 1e-5;
          for (std::size_t l = 0; l < net.num_layers(); ++l) {
            auto& layer = net.layers()[l];
            Eigen::MatrixXd fd_w(layer.weight.rows(), layer.weight.cols());
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
              const double keep = layer.weight.data()[i];
              layer.weight.data()[i] = keep + h;
              const double lp = dsm_loss(net, x, fp, t, noise, weighting).loss;
              layer.weight.data()[i] = keep - h;
              const double lm = dsm_loss(net, x, fp, t, noise, weighting).loss;
              layer.weight.data()[i] = keep;
              fd_w.data()[i] = (lp - lm) / (2 * h);
            }
            Eigen::VectorXd fd_b(layer.bias.size());
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
              const double keep = layer.bias[i];
              layer.bias[i] = keep + h;
              const double lp = dsm_loss(net, x, fp, t, noise, weighting).loss;
              layer.bias[i] = keep - h;
              const double lm = dsm_loss(net, x, fp, t, noise, weighting).loss;
              layer.bias[i] = keep;
              fd_b[i] = (lp - lm) / (2 * h);
            }
            const auto rel = [](const auto& a, const auto& b) {
              return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
            };
            worst = std::max({worst, rel(res.grads[l].weight, fd_w), rel(res.grads[l].bias, fd_b)});
          }
          ++nets;
        }
      }
    }
  }
  r.passed = worst <= 1e-4;
  r.detail = std::to_string(nets) + " nets, every layer; worst relative error " + fmt(worst, 3) + " (limit 1e-4)";
  return r;
}

CheckResult check_gaussian_score_recovery(const CheckOptions& opt) {
  CheckResult r{5, "Gaussian score recovery", true, "", 0.0};
  const Eigen::Index d = 3;
  Rng rng = make_rng(opt.seed, Stream::test, 5);
  const ForwardProcess fp(MeasurementOperator::identity(d, 1.0), Schedule::cosine());
  const Eigen::MatrixXd data = standard_normal(rng, d, 1000);
  ScoreNetSpec spec;
  spec.state_dim = d;
  ScoreNet net(spec, rng);
  TrainConfig cfg;
  train(net, data, fp, cfg, rng);
  const AnalyticGaussianScore truth(fp, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
  std::string detail = "cosine similarity";
  for (double t : {0.3, 0.6, 0.9}) {
    const Eigen::MatrixXd x0 = standard_normal(rng, d, 2000);
    const Eigen::MatrixXd xt = fp.forward_perturb(x0, t, standard_normal(rng, d, 2000));
    const Eigen::MatrixXd want = truth.score(xt, t);
    const Eigen::MatrixXd got = net.score(xt, t);
    const double cos = (want.array() * got.array()).sum() / (want.norm() * got.norm());
    r.passed = r.passed && cos >= 0.95;
    detail += " t=" + fmt(t, 2) + ": " + fmt(cos, 4);
  }
  r.detail = detail + " (limit 0.95)";
  return r;
}

namespace {

struct MethodMeans {
  std::map<std::string, double> by_point_method;
  std::string table;
  int failures = 0;
};

MethodMeans run_comparison(const Json& doc, const CheckOptions& opt, const std::filesystem::path& out) {
  Json full = doc;
  full["experiment"]["output_dir"] = out.string();
  const ExperimentSpec spec = parse_experiment(full);
  ExperimentOptions eo;
  eo.jobs = opt.jobs;
  eo.settings.force = true;
  eo.log = opt.log;
  const ExperimentResult res = run_experiment(spec, eo);
  MethodMeans mm;
  mm.failures = res.failures;
  for (const auto& row : res.summary.rows) {
    std::string key = row.method;
    for (const auto& p : row.params) key += "@" + p;
    mm.by_point_method[key] = row.rmse_mean;
    mm.table += " " + key + "=" + fmt(row.rmse_mean) + "+-" + fmt(row.rmse_std, 3);
  }
  return mm;
}

}  // namespace

CheckResult check_lorenz63_end_to_end(const CheckOptions& opt) {
  CheckResult r{6, "Lorenz-63 MASF vs EnKF", true, "", 0.0};
  Json doc = l63_document();
  doc["experiment"] = {{"seeds", {0, 1, 2, 3, 4}}, {"methods", {"masf", "enkf"}}};
  const MethodMeans mm = run_comparison(doc, opt, opt.workdir / "lorenz63");

  // Climatological spread of the truth over the evaluation window.
  const FilterConfig cfg = parse_filter_config(l63_document());
  double clim = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd truth = simulate_truth(cfg, seed);
    const Eigen::MatrixXd w = truth.middleRows(cfg.eval_start, cfg.eval_end - cfg.eval_start + 1);
    const Eigen::MatrixXd c = w.rowwise() - w.colwise().mean();
    clim += std::sqrt(c.squaredNorm() / static_cast<double>(w.rows() - 1) / static_cast<double>(w.cols())) / 5.0;
  }
  const double ceiling = 5.0;
  const double masf = mm.by_point_method.at("masf");
  const double enkf = mm.by_point_method.at("enkf");
  r.passed = mm.failures == 0 && masf < enkf && masf < ceiling && enkf < ceiling;
  r.detail = "rmse" + mm.table + "; ceiling " + fmt(ceiling) + " (climatological spread " + fmt(clim) + ")";
  if (mm.failures) r.detail += "; " + std::to_string(mm.failures) + " failed runs";
  return r;
}

CheckResult check_lorenz96_trend(const CheckOptions& opt) {
  CheckResult r{7, "Lorenz-96 d=64 MASF vs EnKF", true, "", 0.0};
  Json doc = {{"dynamics", {{"kind", "lorenz96"}, {"dim", 64}, {"forcing", 8.0}}}};
  doc["experiment"] = {{"seeds", {0, 1, 2}},
                       {"methods", {"masf", "enkf"}},
                       {"sweep", {{{"path", "filter.gap"}, {"values", {5, 25}}}}}};
  const MethodMeans mm = run_comparison(doc, opt, opt.workdir / "lorenz96");
  bool ok = mm.failures == 0;
  for (const char* gap : {"5", "25"}) {
    ok = ok && mm.by_point_method.at(std::string("masf@") + gap) <= mm.by_point_method.at(std::string("enkf@") + gap);
  }
  r.passed = ok;
  r.detail = "rmse" + mm.table;
  if (mm.failures) r.detail += "; " + std::to_string(mm.failures) + " failed runs";
  return r;
}

CheckResult check_determinism(const CheckOptions& opt) {
  CheckResult r{8, "determinism of metrics.csv", true, "", 0.0};
  Json doc = l63_document();
  doc["filter"] = {{"n_steps", 300}, {"gap", 100}, {"n_members", 20}};
  doc["train"] = {{"epochs", 20}, {"finetune_epochs", 20}};
  doc["sampler"] = {{"nfe", 50}};
  const FilterConfig cfg = parse_filter_config(doc);
  RunSettings settings;
  settings.force = true;
  const auto a = execute_run(cfg, 7, opt.workdir / "determinism" / "a", settings);
  const auto b = execute_run(cfg, 7, opt.workdir / "determinism" / "b", settings);
  if (a.status == RunStatus::failed || b.status == RunStatus::failed) {
    r.passed = false;
    r.detail = "run failed: " + a.error + b.error;
    return r;
  }
  const std::string ma = read_file(a.dir / "metrics.csv");
  const std::string mb = read_file(b.dir / "metrics.csv");
  r.passed = ma == mb && !ma.empty();
  r.detail = std::string(ma == mb ? "identical" : "different") + " metrics.csv (" +
             std::to_string(ma.size()) + " bytes)";
  return r;
}

CheckResult check_kernel_algebra(const CheckOptions& opt) {
  CheckResult r{9, "transition kernel composition", true, "", 0.0};
  Rng rng = make_rng(opt.seed, Stream::test, 9);
  std::uniform_real_distribution<double> ut(0.0, 0.992);
  std::uniform_int_distribution<int> ud(2, 4);
  std::uniform_real_distribution<double> us(0.3, 1.5);
  double worst_m = 0.0;
  double worst_s = 0.0;
  int triples = 0;
  for (int i = 0; triples < 200; ++i) {
    const OperatorCase oc = operator_case(i, ud(rng), us(rng), rng);
    const ForwardProcess fp(oc.op, Schedule::cosine());
    std::array<double, 3> ts{ut(rng), ut(rng), ut(rng)};
    std::sort(ts.begin(), ts.end());
    const auto [s, u, t] = ts;
    if (!(s < u && u < t)) continue;
    ++triples;
    const TransitionKernel st = fp.transition(s, t);
    const TransitionKernel su = fp.transition(s, u);
    const TransitionKernel ut_k = fp.transition(u, t);
    const Eigen::MatrixXd m_ut = ut_k.M();
    worst_m = std::max(worst_m, (st.M() - m_ut * su.M()).cwiseAbs().maxCoeff());
    worst_s = std::max(worst_s, (st.S() - (m_ut * su.S() * m_ut.transpose() + ut_k.S())).cwiseAbs().maxCoeff());
  }
  r.passed = worst_m <= 1e-10 && worst_s <= 1e-8;
  r.detail = "200 triples; max |M error| " + fmt(worst_m, 3) + " (limit 1e-10), max |S error| " +
             fmt(worst_s, 3) + " (limit 1e-8)";
  return r;
}

std::vector<int> all_check_ids() { return {1, 2, 3, 4, 5, 6, 7, 8, 9}; }

std::vector<int> analytic_check_ids() { return {1, 2, 3, 4, 5, 9}; }

CheckResult run_check(int id, const CheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    switch (id) {
      case 1: r = check_posterior_exactness(opt); break;
      case 2: r = check_moment_matching_sde(opt); break;
      case 3: r = check_likelihood_score(opt); break;
      case 4: r = check_dsm_gradient(opt); break;
      case 5: r = check_gaussian_score_recovery(opt); break;
      case 6: r = check_lorenz63_end_to_end(opt); break;
      case 7: r = check_lorenz96_trend(opt); break;
      case 8: r = check_determinism(opt); break;
      case 9: r = check_kernel_algebra(opt); break;
      default: throw DomainError("unknown check id " + std::to_string(id));
    }
  } catch (const std::exception& e) {
    r.id = id;
    r.name = "check " + std::to_string(id);
    r.passed = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string format_result(const CheckResult& r) {
  char head[128];
  std::snprintf(head, sizeof(head), "[%s] %d %s", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str());
  return std::string(head) + ": " + r.detail + " (" + fmt(r.seconds, 3) + " s)";
}

}  // namespace masf::verify
