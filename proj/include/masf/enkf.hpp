#pragma once

#include <Eigen/Dense>

#include "masf/measurement.hpp"
#include "masf/rng.hpp"

namespace masf {

// Stochastic EnKF with perturbed observations. Members are the columns of
// `prior`; anomalies are scaled by `inflation` before the covariance is formed.
//   K = P A^T (A P A^T + sigma^2 I)^{-1},  x_i <- x_i + K (z + sigma eps_i - A x_i)
Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& prior, const Eigen::VectorXd& z,
                            const MeasurementOperator& op, Rng& rng, double inflation = 1.0);

}  // namespace masf
