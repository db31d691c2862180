#include "masf/sampler.hpp"

#include <cmath>

#include "masf/errors.hpp"

namespace masf {

void SamplerConfig::validate() const {
  if (nfe < 1) throw ConfigError("sampler.nfe", "must be >= 1");
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("sampler.eps", "must lie in (0, 1)");
  if (!std::isfinite(guidance_scale)) throw ConfigError("sampler.guidance_scale", "must be finite");
}

SamplerPlan make_plan(const ForwardProcess& fp, const SamplerConfig& cfg) {
  cfg.validate();
  SamplerPlan plan;
  plan.config = cfg;
  const double start = 1.0 - cfg.eps;
  plan.times.resize(static_cast<std::size_t>(cfg.nfe) + 1);
  for (int i = 0; i <= cfg.nfe; ++i) {
    plan.times[static_cast<std::size_t>(i)] = start * (1.0 - static_cast<double>(i) / cfg.nfe);
  }
  plan.times.back() = 0.0;
  for (int i = 0; i < cfg.nfe; ++i) {
    const double s = plan.times[static_cast<std::size_t>(i)];
    const double t = plan.times[static_cast<std::size_t>(i) + 1];
    plan.kernels.push_back(fp.transition(s, t));
    plan.likelihoods.push_back(fp.likelihood(s));
  }
  return plan;
}

Eigen::VectorXd posterior_score(const ScoreModel& net, const ForwardProcess& fp,
                                const Eigen::VectorXd& x_s, double s, const Eigen::VectorXd& z,
                                double guidance_scale) {
  require_dim(x_s.size(), fp.dim(), "posterior_score x_s");
  require_dim(z.size(), fp.dim(), "posterior_score z");
  Eigen::VectorXd prior = net.score(Eigen::MatrixXd(x_s), s).col(0);
  if (guidance_scale == 0.0) return prior;
  return prior + guidance_scale * fp.likelihood_score(z, x_s, s);
}

Eigen::VectorXd reverse_step(const ForwardProcess& fp, const Eigen::VectorXd& x_s, double s,
                             double t, const Eigen::VectorXd& score, Rng& rng, bool add_noise) {
  if (!(t >= 0.0 && t < s)) throw DomainError("reverse_step: requires 0 <= t < s");
  require_dim(x_s.size(), fp.dim(), "reverse_step x_s");
  require_dim(score.size(), fp.dim(), "reverse_step score");
  const TransitionKernel k = fp.transition(s, t);
  Eigen::VectorXd x = k.mean_map.apply(x_s) + k.noise_cov.apply(score);
  if (add_noise) x += k.noise_sqrt.apply(standard_normal(rng, fp.dim()));
  return x;
}

Eigen::VectorXd sample_posterior(const ScoreModel& net, const ForwardProcess& fp,
                                 const Eigen::VectorXd& prior_member, const Eigen::VectorXd& z,
                                 const SamplerConfig& cfg, Rng& rng) {
  const SamplerPlan plan = make_plan(fp, cfg);
  std::vector<Rng> rngs{rng};
  Eigen::VectorXd out = sample_posterior(net, plan, fp, Eigen::MatrixXd(prior_member), z, rngs).col(0);
  rng = rngs.front();
  return out;
}

Eigen::MatrixXd sample_posterior(const ScoreModel& net, const SamplerPlan& plan,
                                 const ForwardProcess& fp, const Eigen::MatrixXd& prior,
                                 const Eigen::VectorXd& z, std::vector<Rng>& rngs,
                                 std::vector<SamplerTraceRow>* trace) {
  const Eigen::Index d = fp.dim();
  const Eigen::Index n = prior.cols();
  require_dim(prior.rows(), d, "sample_posterior prior");
  require_dim(z.size(), d, "sample_posterior z");
  require_dim(net.dim(), d, "sample_posterior score model");
  require_dim(static_cast<long>(rngs.size()), n, "sample_posterior rng streams");
  if (plan.kernels.empty()) throw DomainError("sample_posterior: empty plan");

  const auto draw = [&](Eigen::MatrixXd& eps) {
    for (Eigen::Index j = 0; j < n; ++j) {
      eps.col(j) = standard_normal(rngs[static_cast<std::size_t>(j)], d);
    }
  };

  Eigen::MatrixXd eps(d, n);
  draw(eps);
  Eigen::MatrixXd x = fp.forward_perturb(prior, plan.times.front(), eps);
  const double g = plan.config.guidance_scale;
  const int steps = plan.steps();
  for (int i = 0; i < steps; ++i) {
    const auto& k = plan.kernels[static_cast<std::size_t>(i)];
    const double s = plan.times[static_cast<std::size_t>(i)];
    Eigen::MatrixXd score = net.score(x, s);
    Eigen::MatrixXd guidance;
    if (g != 0.0) {
      guidance = plan.likelihoods[static_cast<std::size_t>(i)].score(z, x);
    }
    if (trace) {
      SamplerTraceRow row;
      row.step = i;
      row.t = s;
      row.mean_score_norm = score.colwise().norm().mean();
      row.mean_guidance_norm = g != 0.0 ? guidance.colwise().norm().mean() : 0.0;
      trace->push_back(row);
    }
    if (g != 0.0) score += g * guidance;
    Eigen::MatrixXd next = k.mean_map.apply(x) + k.noise_cov.apply(score);
    const bool last = i + 1 == steps;
    if (!(last && plan.config.final_denoise)) {
      draw(eps);
      next += k.noise_sqrt.apply(eps);
    }
    if (!next.allFinite()) throw DivergenceError("sampler state is not finite at step", i);
    x = std::move(next);
  }
  return x;
}

AnalyticGaussianScore::AnalyticGaussianScore(const ForwardProcess& fp, Eigen::VectorXd mean,
                                             Eigen::MatrixXd cov)
    : fp_(&fp), mean_(std::move(mean)), cov_(std::move(cov)) {
  require_dim(mean_.size(), fp.dim(), "AnalyticGaussianScore mean");
  require_dim(cov_.rows(), fp.dim(), "AnalyticGaussianScore cov rows");
  require_dim(cov_.cols(), fp.dim(), "AnalyticGaussianScore cov cols");
}

Eigen::MatrixXd AnalyticGaussianScore::score(const Eigen::MatrixXd& x, double t) const {
  const Eigen::MatrixXd at = fp_->interp_operator(t);
  Eigen::MatrixXd c = symmetrize(at * cov_ * at.transpose());
  c.diagonal().array() += fp_->noise_var(t);
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrixError("AnalyticGaussianScore: marginal covariance is not positive definite");
  }
  Eigen::MatrixXd r = x;
  r.colwise() -= at * mean_;
  return -llt.solve(r);
}

}  // namespace masf
