#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "masf/errors.hpp"
#include "masf/filter.hpp"
#include "masf/sampler.hpp"
#include "masf/score_net.hpp"
#include "masf/verify/oracles.hpp"

using masf::ForwardProcess;
using masf::LossWeighting;
using masf::MeasurementOperator;
using masf::Schedule;
using masf::ScoreNet;
using masf::ScoreNetSpec;
using masf::TrainConfig;

namespace {

ScoreNetSpec small_spec(Eigen::Index d, std::vector<Eigen::Index> hidden = {8, 8}) {
  return ScoreNetSpec{d, 4, std::move(hidden), masf::Activation::silu};
}

bool same_params(const masf::Parameters& a, const masf::Parameters& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].weight != b[l].weight || a[l].bias != b[l].bias) return false;
  }
  return true;
}

ForwardProcess identity_fp(Eigen::Index d, double sigma = 1.0) {
  return ForwardProcess(MeasurementOperator::identity(d, sigma), Schedule::cosine());
}

double relative(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST(ScoreNet, ZeroHeadGivesZeroScore) {
  masf::Rng rng(1);
  const ScoreNet net(small_spec(3), rng);
  const Eigen::MatrixXd x = masf::standard_normal(rng, 3, 7);
  for (double t : {0.0, 0.4, 1.0}) EXPECT_EQ(net.score(x, t).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ScoreNet, ShapesAndParameterCount) {
  masf::Rng rng(2);
  const ScoreNet net(ScoreNetSpec{3, 16, {64, 64, 64}, masf::Activation::silu}, rng);
  EXPECT_EQ(net.num_layers(), 4u);
  EXPECT_EQ(net.layers().front().weight.cols(), 19);
  EXPECT_EQ(net.layers().back().weight.rows(), 3);
  const Eigen::Index expected = (19 * 64 + 64) + 2 * (64 * 64 + 64) + (64 * 3 + 3);
  EXPECT_EQ(net.parameter_count(), expected);
}

TEST(ScoreNet, ForwardIsDeterministic) {
  masf::Rng rng(3);
  const ScoreNet net(small_spec(3), rng, false);
  const Eigen::VectorXd x = masf::standard_normal(rng, 3);
  EXPECT_EQ(net.forward(x, 0.37), net.forward(x, 0.37));
}

TEST(ScoreNet, BatchMatchesSingle) {
  masf::Rng rng(4);
  const ScoreNet net(small_spec(4), rng, false);
  const Eigen::MatrixXd x = masf::standard_normal(rng, 4, 3);
  const Eigen::Vector3d t(0.1, 0.5, 0.9);
  const Eigen::MatrixXd out = net.forward(x, Eigen::VectorXd(t));
  for (int j = 0; j < 3; ++j) {
    EXPECT_LT((out.col(j) - net.forward(Eigen::VectorXd(x.col(j)), t[j])).norm(), 1e-13);
  }
}

TEST(ScoreNet, RejectsTimeOutsideUnitInterval) {
  masf::Rng rng(5);
  const ScoreNet net(small_spec(2), rng);
  EXPECT_THROW(net.forward(Eigen::VectorXd::Zero(2), 1.5), masf::DomainError);
  EXPECT_THROW(net.forward(Eigen::VectorXd::Zero(2), -0.1), masf::DomainError);
}

TEST(ScoreNet, EmbeddingIsBoundedSinCos) {
  masf::Rng rng(6);
  const ScoreNet net(ScoreNetSpec{2, 16, {8}, masf::Activation::silu}, rng);
  const Eigen::MatrixXd e = net.embed(Eigen::Vector3d(0.0, 0.5, 1.0));
  ASSERT_EQ(e.rows(), 16);
  EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
  // Each sin/cos pair lies on the unit circle.
  for (Eigen::Index j = 0; j < 3; ++j) {
    for (Eigen::Index k = 0; k < 8; ++k) {
      EXPECT_NEAR(e(k, j) * e(k, j) + e(k + 8, j) * e(k + 8, j), 1.0, 1e-12);
    }
  }
}

TEST(Dsm, GradientsMatchFiniteDifferences) {
  masf::Rng rng(7);
  for (auto weighting : {LossWeighting::score, LossWeighting::noise}) {
    for (auto act : {masf::Activation::silu, masf::Activation::tanh}) {
      ScoreNet net(ScoreNetSpec{3, 4, {6}, act}, rng, false);
      const ForwardProcess fp(MeasurementOperator::grid_mask({true, false, true}, 0.8),
                              Schedule::cosine());
      const Eigen::MatrixXd x = masf::standard_normal(rng, 3, 4);
      const Eigen::MatrixXd noise = masf::standard_normal(rng, 3, 4);
      const Eigen::Vector4d t(0.2, 0.4, 0.6, 0.8);
      const auto res = masf::dsm_loss(net, x, fp, t, noise, weighting);
      const double h = 1e-5;
      const auto loss = [&] { return masf::dsm_loss(net, x, fp, t, noise, weighting).loss; };
      for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto& layer = net.layers()[l];
        Eigen::MatrixXd fd_w(layer.weight.rows(), layer.weight.cols());
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
          const double keep = layer.weight.data()[i];
          layer.weight.data()[i] = keep + h;
          const double lp = loss();
          layer.weight.data()[i] = keep - h;
          const double lm = loss();
          layer.weight.data()[i] = keep;
          fd_w.data()[i] = (lp - lm) / (2 * h);
        }
        Eigen::VectorXd fd_b(layer.bias.size());
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
          const double keep = layer.bias[i];
          layer.bias[i] = keep + h;
          const double lp = loss();
          layer.bias[i] = keep - h;
          const double lm = loss();
          layer.bias[i] = keep;
          fd_b[i] = (lp - lm) / (2 * h);
        }
        EXPECT_LT(relative(res.grads[l].weight, fd_w), 1e-4) << "layer " << l;
        EXPECT_LT(relative(res.grads[l].bias, fd_b), 1e-4) << "layer " << l;
      }
    }
  }
}

TEST(Dsm, FrozenLayersGetZeroGradient) {
  masf::Rng rng(8);
  const ScoreNet net(small_spec(3, {5, 5, 5}), rng, false);
  const auto fp = identity_fp(3);
  const Eigen::MatrixXd x = masf::standard_normal(rng, 3, 4);
  const Eigen::MatrixXd noise = masf::standard_normal(rng, 3, 4);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(4, 0.5);
  const auto full = masf::dsm_loss(net, x, fp, t, noise, LossWeighting::score, 0);
  const auto part = masf::dsm_loss(net, x, fp, t, noise, LossWeighting::score, 2);
  EXPECT_EQ(part.loss, full.loss);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(part.grads[l].weight.norm(), 0.0);
  for (std::size_t l = 2; l < 4; ++l) {
    EXPECT_LT(relative(part.grads[l].weight, full.grads[l].weight), 1e-14);
  }
}

TEST(Dsm, ZeroNetLossExpectation) {
  masf::Rng rng(9);
  const ScoreNet net(small_spec(3), rng);
  const double sigma = 0.7;
  const auto fp = identity_fp(3, sigma);
  const double t = 0.4;
  const Eigen::MatrixXd batch = masf::standard_normal(rng, 3, 20000);
  const auto res = masf::dsm_loss(net, batch, fp, t, rng, LossWeighting::score);
  const double expected = 3.0 / (sigma * sigma * fp.schedule().gamma_sq(t));
  // chi-square with 3 dof has variance 6 per example.
  const double se = std::sqrt(6.0 / 20000) * expected / 3.0;
  EXPECT_NEAR(res.loss, expected, 4 * se);
}

TEST(Dsm, NoiseWeightingScalesByVariance) {
  masf::Rng rng(10);
  const ScoreNet net(small_spec(2), rng, false);
  const auto fp = identity_fp(2, 0.5);
  const Eigen::MatrixXd x = masf::standard_normal(rng, 2, 6);
  const Eigen::MatrixXd noise = masf::standard_normal(rng, 2, 6);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(6, 0.3);
  const double a = masf::dsm_loss(net, x, fp, t, noise, LossWeighting::score).loss;
  const double b = masf::dsm_loss(net, x, fp, t, noise, LossWeighting::noise).loss;
  EXPECT_NEAR(b, a * fp.noise_var(0.3), 1e-12 * a);
}

TEST(Dsm, RejectsTimeBelowMinimum) {
  masf::Rng rng(11);
  const ScoreNet net(small_spec(2), rng);
  const auto fp = identity_fp(2);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_THROW(masf::dsm_loss(net, x, fp, 1e-4, rng, LossWeighting::score, 1e-3), masf::DomainError);
  EXPECT_NO_THROW(masf::dsm_loss(net, x, fp, 1e-3, rng, LossWeighting::score, 1e-3));
}

TEST(Train, ZeroEpochsLeavesParameters) {
  masf::Rng rng(12);
  ScoreNet net(small_spec(3), rng, false);
  const auto before = net.layers();
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto hist = masf::train(net, masf::standard_normal(rng, 3, 50), identity_fp(3), cfg, rng);
  EXPECT_TRUE(same_params(before, net.layers()));
  EXPECT_TRUE(hist.train_loss.empty());
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.t_min = 0.0;
  EXPECT_THROW(cfg.validate(), masf::ConfigError);
  cfg = TrainConfig{};
  cfg.validation_split = 1.0;
  EXPECT_THROW(cfg.validate(), masf::ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), masf::ConfigError);
}

TEST(Train, EmptyPriorRejected) {
  masf::Rng rng(13);
  ScoreNet net(small_spec(2), rng);
  EXPECT_THROW(masf::train(net, Eigen::MatrixXd(2, 0), identity_fp(2), TrainConfig{}, rng),
               masf::DomainError);
}

TEST(Train, HistoryLengths) {
  masf::Rng rng(14);
  ScoreNet net(small_spec(2), rng);
  TrainConfig cfg;
  cfg.epochs = 7;
  const auto hist = masf::train(net, masf::standard_normal(rng, 2, 40), identity_fp(2), cfg, rng);
  EXPECT_EQ(hist.train_loss.size(), 7u);
  EXPECT_EQ(hist.val_loss.size(), 7u);
}

TEST(Train, SameSeedSameParameters) {
  const auto run = [] {
    masf::Rng rng(15);
    ScoreNet net(small_spec(3), rng);
    TrainConfig cfg;
    cfg.epochs = 20;
    masf::train(net, masf::standard_normal(rng, 3, 64), identity_fp(3), cfg, rng);
    return net.layers();
  };
  EXPECT_TRUE(same_params(run(), run()));
}

TEST(Train, SmallEnsembleSamplesWithReplacement) {
  masf::Rng rng(16);
  ScoreNet net(small_spec(2), rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.validation_split = 0.0;
  const auto hist = masf::train(net, masf::standard_normal(rng, 2, 5), identity_fp(2), cfg, rng);
  EXPECT_EQ(hist.train_loss.size(), 5u);
  EXPECT_TRUE(net.all_finite());
}

TEST(Train, MovingAverageLossDecreases) {
  // Expected training loss of each epoch's parameters, estimated on one fixed
  // set of (example, t, eps) draws so that epochs are compared on equal noise.
  masf::Rng rng(17);
  const auto fp = identity_fp(3);
  ScoreNet net(ScoreNetSpec{3, 16, {64, 64, 64}, masf::Activation::silu}, rng);
  TrainConfig cfg;
  cfg.epochs = 200;
  const Eigen::MatrixXd data = masf::standard_normal(rng, 3, 1000);
  masf::Rng eval_rng(99);
  const long m = 2000;
  Eigen::MatrixXd ex(3, m);
  Eigen::VectorXd et(m);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.cols() - 1);
  std::uniform_real_distribution<double> ut(cfg.t_min, 1.0);
  for (long j = 0; j < m; ++j) {
    ex.col(j) = data.col(pick(eval_rng));
    et[j] = ut(eval_rng);
  }
  const Eigen::MatrixXd en = masf::standard_normal(eval_rng, 3, m);
  std::vector<double> expected;
  masf::train(net, data, fp, cfg, rng, [&](int, const ScoreNet& n) {
    expected.push_back(masf::dsm_loss(n, ex, fp, et, en, cfg.loss_weighting).loss);
  });
  ASSERT_EQ(expected.size(), 200u);
  std::vector<double> avg;
  for (std::size_t i = 0; i + 20 <= expected.size(); ++i) {
    avg.push_back(std::accumulate(expected.begin() + i, expected.begin() + i + 20, 0.0) / 20.0);
  }
  // Constant-rate Adam jitters around the optimum at the 1e-4 level once converged.
  for (std::size_t i = 1; i < avg.size(); ++i) {
    EXPECT_LE(avg[i], avg[i - 1] * (1.0 + 1e-3)) << "epoch " << i;
  }
  EXPECT_LT(avg.back(), 0.97 * avg.front());
}

TEST(Train, RecoversGaussianScore) {
  // N(mu, P) with 100 members; error measured against the exact perturbed score.
  masf::Rng rng(18);
  const Eigen::Index d = 3;
  const auto fp = identity_fp(d);
  const Eigen::Vector3d mu(0.5, -1.0, 0.25);
  const Eigen::MatrixXd p = masf::verify::random_spd(rng, d);
  const Eigen::MatrixXd chol = p.llt().matrixL();
  const Eigen::MatrixXd prior =
      (chol * masf::standard_normal(rng, d, 100)).colwise() + Eigen::VectorXd(mu);
  ScoreNet net(ScoreNetSpec{d, 16, {64, 64, 64}, masf::Activation::silu}, rng);
  masf::train(net, prior, fp, TrainConfig{}, rng);
  const masf::AnalyticGaussianScore truth(fp, mu, p);
  for (double t : {0.3, 0.6, 0.9}) {
    const Eigen::MatrixXd x0 = (chol * masf::standard_normal(rng, d, 2000)).colwise() + Eigen::VectorXd(mu);
    const Eigen::MatrixXd xt = fp.forward_perturb(x0, t, masf::standard_normal(rng, d, 2000));
    const Eigen::MatrixXd want = truth.score(xt, t);
    const double rmse = (net.score(xt, t) - want).norm();
    EXPECT_LT(rmse, 0.15 * want.norm()) << "t=" << t;
  }
}

TEST(Train, GaussianScoreEstimationFloor) {
  // The exact Gaussian score refit from the sample moments of 100 draws: no
  // estimator trained on 100 members is expected to do better on average.
  masf::Rng rng(18);
  const Eigen::Index d = 3;
  const auto fp = identity_fp(d);
  const Eigen::Vector3d mu(0.5, -1.0, 0.25);
  const Eigen::MatrixXd p = masf::verify::random_spd(rng, d);
  const Eigen::MatrixXd chol = p.llt().matrixL();
  const masf::AnalyticGaussianScore truth(fp, mu, p);
  double floor_03 = 0.0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    const auto m = masf::verify::sample_moments(
        (chol * masf::standard_normal(rng, d, 100)).colwise() + Eigen::VectorXd(mu));
    const masf::AnalyticGaussianScore fitted(fp, m.mean, m.cov);
    const Eigen::MatrixXd x0 = (chol * masf::standard_normal(rng, d, 500)).colwise() + Eigen::VectorXd(mu);
    const Eigen::MatrixXd xt = fp.forward_perturb(x0, 0.3, masf::standard_normal(rng, d, 500));
    const Eigen::MatrixXd want = truth.score(xt, 0.3);
    floor_03 += (fitted.score(xt, 0.3) - want).norm() / want.norm() / reps;
  }
  EXPECT_GT(floor_03, 0.15);
}

TEST(Finetune, ZeroLayersLeavesParameters) {
  masf::Rng rng(19);
  ScoreNet net(small_spec(3), rng, false);
  const auto before = net.layers();
  TrainConfig cfg;
  cfg.finetune_layers = 0;
  cfg.finetune_epochs = 5;
  masf::finetune(net, masf::standard_normal(rng, 3, 40), identity_fp(3), cfg, rng);
  EXPECT_TRUE(same_params(before, net.layers()));
}

TEST(Finetune, OnlyTrailingLayersChange) {
  masf::Rng rng(20);
  ScoreNet net(small_spec(3, {8, 8, 8}), rng, false);
  const auto before = net.layers();
  TrainConfig cfg;
  cfg.finetune_layers = 1;
  cfg.finetune_epochs = 50;
  masf::finetune(net, masf::standard_normal(rng, 3, 40), identity_fp(3), cfg, rng);
  const std::size_t n = net.num_layers();
  for (std::size_t l = 0; l + 1 < n; ++l) {
    EXPECT_EQ(net.layers()[l].weight, before[l].weight) << l;
    EXPECT_EQ(net.layers()[l].bias, before[l].bias) << l;
  }
  EXPECT_NE(net.layers()[n - 1].weight, before[n - 1].weight);
}

TEST(Finetune, AllLayersWhenNegative) {
  masf::Rng rng(21);
  ScoreNet net(small_spec(3), rng, false);
  const auto before = net.layers();
  TrainConfig cfg;
  cfg.finetune_layers = -1;
  cfg.finetune_epochs = 10;
  masf::finetune(net, masf::standard_normal(rng, 3, 40), identity_fp(3), cfg, rng);
  EXPECT_NE(net.layers()[0].weight, before[0].weight);
}

TEST(Finetune, ReachesFullRetrainQualityOnLorenz63) {
  // Prior ensembles at the first two measurement steps of a Lorenz-63 run.
  auto cfg = masf::default_filter_config(masf::DynamicsKind::lorenz63);
  cfg.n_steps = 200;
  cfg.eval_start = 0;
  cfg.eval_end = 200;
  const std::uint64_t seed = 3;
  const auto fp = cfg.forward_process();
  const Eigen::MatrixXd truth = masf::simulate_truth(cfg, seed);
  const auto z = masf::simulate_measurements(cfg, truth, seed);
  masf::Ensemble ens = masf::initial_ensemble(cfg, truth.row(0).transpose(), seed);
  masf::time_update(ens, cfg.dynamics, 100, seed);
  std::optional<ScoreNet> net;
  cfg.sampler.nfe = 100;
  const auto plan = masf::make_plan(fp, cfg.sampler);
  ens = masf::masf_measurement_update(ens, z.at(100), fp, plan, net, cfg, seed);
  masf::time_update(ens, cfg.dynamics, 100, seed);

  ScoreNet tuned = *net;
  TrainConfig ft = cfg.train;
  ft.finetune_epochs = 100;
  masf::Rng rng_a(31), rng_b(31);
  const auto tuned_hist = masf::finetune(tuned, ens.members, fp, ft, rng_a);
  masf::Rng init(32);
  ScoreNet fresh(cfg.network, init);
  const auto fresh_hist = masf::train(fresh, ens.members, fp, cfg.train, rng_b);
  const auto tail = [](const std::vector<double>& v) {
    const std::size_t k = std::min<std::size_t>(20, v.size());
    return std::accumulate(v.end() - k, v.end(), 0.0) / k;
  };
  EXPECT_LE(tail(tuned_hist.val_loss), 1.2 * tail(fresh_hist.val_loss));
}

TEST(Checkpoint, RoundTrip) {
  masf::Rng rng(22);
  const ScoreNet net(ScoreNetSpec{4, 6, {9, 7}, masf::Activation::tanh}, rng, false);
  const auto dir = std::filesystem::temp_directory_path() / "masf_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "net.bin";
  masf::save_checkpoint(net, path, Schedule::cosine().hash());
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".json"));
  const ScoreNet back = masf::load_checkpoint(path);
  EXPECT_TRUE(same_params(net.layers(), back.layers()));
  EXPECT_EQ(back.spec().activation, masf::Activation::tanh);
  EXPECT_EQ(back.spec().embed_dim, 6);
  const Eigen::VectorXd x = masf::standard_normal(rng, 4);
  EXPECT_EQ(net.forward(x, 0.3), back.forward(x, 0.3));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BadMagicRejected) {
  const auto path = std::filesystem::temp_directory_path() / "masf_test_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTANET!garbage";
  }
  EXPECT_THROW(masf::load_checkpoint(path), masf::Error);
  std::filesystem::remove(path);
}
