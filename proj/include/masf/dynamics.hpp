#pragma once

#include <string>

#include <Eigen/Dense>

#include "masf/rng.hpp"

namespace masf {

enum class DynamicsKind { lorenz63, lorenz96 };

std::string to_string(DynamicsKind kind);
DynamicsKind dynamics_kind_from_string(const std::string& s);

struct DynamicsModel {
  DynamicsKind kind = DynamicsKind::lorenz63;
  Eigen::Index dim = 3;
  // Lorenz-63 parameters.
  double l63_sigma = 10.0;
  double l63_rho = 28.0;
  double l63_beta = 8.0 / 3.0;
  // Lorenz-96 forcing.
  double forcing = 8.0;
  double dt = 0.01;
  // Diffusion magnitude g; zero gives explicit Euler on the ODE.
  double process_noise = 0.0;

  static DynamicsModel lorenz63(double dt = 0.01);
  static DynamicsModel lorenz96(Eigen::Index dim, double forcing = 8.0, double dt = 0.01);

  // Throws DomainError when the model is inconsistent (dt <= 0, wrong dim, ...).
  void validate() const;
};

Eigen::VectorXd drift(const DynamicsModel& m, const Eigen::VectorXd& x);
// Column-wise drift for an ensemble (d x N).
Eigen::MatrixXd drift(const DynamicsModel& m, const Eigen::MatrixXd& x);

// One Euler-Maruyama step: x + f(x) dt + g sqrt(dt) eps. `step_index` only
// labels the DivergenceError.
Eigen::VectorXd step(const DynamicsModel& m, const Eigen::VectorXd& x, Rng& rng,
                     long step_index = 0);

// Row 0 is x0, row r+1 = step(row r). Returns an (n_steps + 1) x d matrix.
Eigen::MatrixXd simulate(const DynamicsModel& m, const Eigen::VectorXd& x0, long n_steps,
                         Rng& rng);

}  // namespace masf
