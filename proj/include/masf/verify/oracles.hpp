#pragma once

#include <functional>

#include <Eigen/Dense>

#include "masf/measurement.hpp"
#include "masf/rng.hpp"
#include "masf/sampler.hpp"

namespace masf::verify {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Conjugate update of N(mean, cov) by z = A x + sigma eps.
Gaussian kalman_posterior(const Gaussian& prior, const Eigen::MatrixXd& a, double sigma,
                          const Eigen::VectorXd& z);

Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double h);

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov);

// Interpolated operator rebuilt from the schedule alone.
Eigen::MatrixXd interp_operator(const Eigen::MatrixXd& a, double alpha);

// Law of X_1 given X_t = x rebuilt with dense algebra: mean map A A(t)^{-1},
// covariance sigma^2 I - M Sigma(t) M^T.
Gaussian endpoint_law(const ForwardProcess& fp, double t, const Eigen::VectorXd& x);

// Euler-Maruyama paths of dX = F X dt + G dB from x0 at t = 0, returning the
// sample mean and covariance at each requested time (sorted ascending).
std::vector<Gaussian> euler_maruyama_moments(const ForwardProcess& fp, const Eigen::VectorXd& x0,
                                             const std::vector<double>& times, long n_paths,
                                             long n_steps, Rng& rng);

// Moments of the sampler's discrete chain when the score is the exact
// Gaussian-prior score: every step is affine in x, so mean and covariance
// propagate in closed form. `start` is the law of the state at plan.times[0].
Gaussian chain_moments(const ForwardProcess& fp, const SamplerPlan& plan, const Gaussian& prior,
                       const Gaussian& start, const Eigen::VectorXd& z);

// Law of X_{t} given X_1 = z under X_0 ~ prior (exact joint Gaussian).
Gaussian perturbed_posterior(const ForwardProcess& fp, const Gaussian& prior, double t,
                             const Eigen::VectorXd& z);

Gaussian sample_moments(const Eigen::MatrixXd& samples);

// Random symmetric matrix with eigenvalues drawn uniformly from [lo, hi].
Eigen::MatrixXd random_spectrum_matrix(Rng& rng, Eigen::Index d, double lo, double hi);
Eigen::MatrixXd random_spd(Rng& rng, Eigen::Index d);

}  // namespace masf::verify
