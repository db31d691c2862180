#pragma once

#include <vector>

#include <Eigen/Dense>

#include "masf/measurement.hpp"
#include "masf/rng.hpp"
#include "masf/score_model.hpp"

namespace masf {

struct SamplerConfig {
  int nfe = 500;
  // Sampling starts at 1 - eps.
  double eps = 0.008;
  double guidance_scale = 1.0;
  // Skip the noise injection on the step that lands on t = 0.
  bool final_denoise = true;

  void validate() const;
};

// Kernels and likelihood terms for every step of the grid
// linspace(1 - eps, 0, nfe + 1). Built once per forward process and shared.
struct SamplerPlan {
  std::vector<double> times;
  std::vector<TransitionKernel> kernels;  // times[i] -> times[i + 1]
  std::vector<LikelihoodTerm> likelihoods;  // at times[i]
  SamplerConfig config;

  int steps() const { return static_cast<int>(kernels.size()); }
};

SamplerPlan make_plan(const ForwardProcess& fp, const SamplerConfig& cfg);

struct SamplerTraceRow {
  int step = 0;
  double t = 0.0;
  double mean_score_norm = 0.0;
  double mean_guidance_norm = 0.0;
};

// S(x_s, s) + guidance_scale * likelihood score at s.
Eigen::VectorXd posterior_score(const ScoreModel& net, const ForwardProcess& fp,
                                const Eigen::VectorXd& x_s, double s, const Eigen::VectorXd& z,
                                double guidance_scale = 1.0);

// x_t = M x_s + D score + D^{1/2} eps with D = M Sigma(s) M^T - Sigma(t), t < s.
Eigen::VectorXd reverse_step(const ForwardProcess& fp, const Eigen::VectorXd& x_s, double s,
                             double t, const Eigen::VectorXd& score, Rng& rng,
                             bool add_noise = true);

// Forward-perturbs the prior member to 1 - eps and runs the reverse chain to 0.
Eigen::VectorXd sample_posterior(const ScoreModel& net, const ForwardProcess& fp,
                                 const Eigen::VectorXd& prior_member, const Eigen::VectorXd& z,
                                 const SamplerConfig& cfg, Rng& rng);

// Batched form: column j of `prior` is driven only by rngs[j], so the result
// for a member does not depend on the rest of the ensemble.
Eigen::MatrixXd sample_posterior(const ScoreModel& net, const SamplerPlan& plan,
                                 const ForwardProcess& fp, const Eigen::MatrixXd& prior,
                                 const Eigen::VectorXd& z, std::vector<Rng>& rngs,
                                 std::vector<SamplerTraceRow>* trace = nullptr);

// Exact score of X_t when X_0 ~ N(mean, cov):
//   grad log N(A(t) mean, A(t) cov A(t)^T + Sigma(t)).
class AnalyticGaussianScore : public ScoreModel {
 public:
  AnalyticGaussianScore(const ForwardProcess& fp, Eigen::VectorXd mean, Eigen::MatrixXd cov);

  Eigen::Index dim() const override { return mean_.size(); }
  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const override;

 private:
  const ForwardProcess* fp_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
};

}  // namespace masf
