#include "masf/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "masf/errors.hpp"

namespace masf::verify {

Gaussian kalman_posterior(const Gaussian& prior, const Eigen::MatrixXd& a, double sigma,
                          const Eigen::VectorXd& z) {
  const Eigen::Index d = prior.mean.size();
  Eigen::MatrixXd s = a * prior.cov * a.transpose();
  s.diagonal().array() += sigma * sigma;
  const Eigen::MatrixXd k = prior.cov * a.transpose() * s.inverse();
  Gaussian post;
  post.mean = prior.mean + k * (z - a * prior.mean);
  post.cov = (Eigen::MatrixXd::Identity(d, d) - k * a) * prior.cov;
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  return post;
}

Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("oracle covariance is not PD");
  const Eigen::VectorXd r = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (r.squaredNorm() + logdet +
                 static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

Eigen::MatrixXd interp_operator(const Eigen::MatrixXd& a, double alpha) {
  return (1.0 - alpha) * a + alpha * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

Gaussian endpoint_law(const ForwardProcess& fp, double t, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd a = fp.op().matrix();
  const Eigen::MatrixXd at = interp_operator(a, fp.schedule().alpha(t));
  const Eigen::MatrixXd m = a * at.inverse();
  const double s2 = fp.sigma() * fp.sigma();
  const double var_t = s2 * fp.schedule().gamma_sq(t);
  Gaussian g;
  g.mean = m * x;
  g.cov = s2 * Eigen::MatrixXd::Identity(a.rows(), a.cols()) - var_t * m * m.transpose();
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

std::vector<Gaussian> euler_maruyama_moments(const ForwardProcess& fp, const Eigen::VectorXd& x0,
                                             const std::vector<double>& times, long n_paths,
                                             long n_steps, Rng& rng) {
  const Eigen::Index d = x0.size();
  const double t_end = times.back();
  const double dt = t_end / static_cast<double>(n_steps);
  Eigen::MatrixXd x = x0.replicate(1, n_paths);
  std::vector<Gaussian> out;
  std::size_t next = 0;
  for (long k = 0; k < n_steps; ++k) {
    const double t = k * dt;
    const Eigen::MatrixXd f = fp.drift_matrix(t);
    Eigen::MatrixXd gg = fp.diffusion_sq(t);
    gg = 0.5 * (gg + gg.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gg);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd g = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    x += dt * (f * x) + std::sqrt(dt) * (g * standard_normal(rng, d, n_paths));
    const double t_next = (k + 1) * dt;
    while (next < times.size() && std::abs(t_next - times[next]) < 0.5 * dt) {
      out.push_back(sample_moments(x));
      ++next;
    }
  }
  if (out.size() != times.size()) throw DomainError("euler_maruyama_moments: times not on the grid");
  return out;
}

Gaussian chain_moments(const ForwardProcess& fp, const SamplerPlan& plan, const Gaussian& prior,
                       const Gaussian& start, const Eigen::VectorXd& z) {
  const Eigen::Index d = prior.mean.size();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd a = fp.op().matrix();
  const double s2 = fp.sigma() * fp.sigma();
  const double g = plan.config.guidance_scale;
  Eigen::VectorXd m = start.mean;
  Eigen::MatrixXd v = start.cov;
  for (int i = 0; i < plan.steps(); ++i) {
    const double s = plan.times[static_cast<std::size_t>(i)];
    const double t = plan.times[static_cast<std::size_t>(i) + 1];
    const Eigen::MatrixXd as = interp_operator(a, fp.schedule().alpha(s));
    const Eigen::MatrixXd at = interp_operator(a, fp.schedule().alpha(t));
    const double var_s = s2 * fp.schedule().gamma_sq(s);
    const double var_t = s2 * fp.schedule().gamma_sq(t);
    const Eigen::MatrixXd mst = at * as.inverse();
    const Eigen::MatrixXd dst = var_s * mst * mst.transpose() - var_t * eye;
    // Prior score -C^{-1}(x - A(s) mu).
    const Eigen::MatrixXd c = as * prior.cov * as.transpose() + var_s * eye;
    const Eigen::MatrixXd c_inv = c.inverse();
    // Likelihood score L^T S^{-1}(z - L x).
    const Eigen::MatrixXd l = a * as.inverse();
    const Eigen::MatrixXd s_end = s2 * eye - var_s * l * l.transpose();
    const Eigen::MatrixXd lts = l.transpose() * s_end.inverse();
    const Eigen::MatrixXd b = mst - dst * c_inv - g * dst * lts * l;
    const Eigen::VectorXd shift = dst * (c_inv * as * prior.mean + g * lts * z);
    m = b * m + shift;
    v = b * v * b.transpose();
    const bool last = i + 1 == plan.steps();
    if (!(last && plan.config.final_denoise)) v += dst;
    v = 0.5 * (v + v.transpose());
  }
  return {m, v};
}

Gaussian perturbed_posterior(const ForwardProcess& fp, const Gaussian& prior, double t,
                             const Eigen::VectorXd& z) {
  const Eigen::Index d = prior.mean.size();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd a = fp.op().matrix();
  const double s2 = fp.sigma() * fp.sigma();
  const Eigen::MatrixXd at = interp_operator(a, fp.schedule().alpha(t));
  const double var_t = s2 * fp.schedule().gamma_sq(t);
  // X_t = A(t) X_0 + e_t, Z = M X_t + e with M = A A(t)^{-1}.
  const Eigen::MatrixXd cxx = at * prior.cov * at.transpose() + var_t * eye;
  const Eigen::MatrixXd m = a * at.inverse();
  const Eigen::MatrixXd czz = a * prior.cov * a.transpose() + s2 * eye;
  const Eigen::MatrixXd cxz = cxx * m.transpose();
  const Eigen::MatrixXd k = cxz * czz.inverse();
  Gaussian out;
  out.mean = at * prior.mean + k * (z - a * prior.mean);
  out.cov = cxx - k * cxz.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Gaussian sample_moments(const Eigen::MatrixXd& samples) {
  Gaussian g;
  g.mean = samples.rowwise().mean();
  const Eigen::MatrixXd c = samples.colwise() - g.mean;
  g.cov = c * c.transpose() / static_cast<double>(samples.cols() - 1);
  return g;
}

Eigen::MatrixXd random_spectrum_matrix(Rng& rng, Eigen::Index d, double lo, double hi) {
  const Eigen::MatrixXd r = standard_normal(rng, d, d);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(r);
  const Eigen::MatrixXd q = qr.householderQ();
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd lambda(d);
  for (Eigen::Index i = 0; i < d; ++i) lambda[i] = u(rng);
  Eigen::MatrixXd m = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd random_spd(Rng& rng, Eigen::Index d) {
  const Eigen::MatrixXd b = standard_normal(rng, d, d);
  Eigen::MatrixXd p = b * b.transpose() / static_cast<double>(d);
  p.diagonal().array() += 0.5;
  return p;
}

}  // namespace masf::verify
