#include "masf/dynamics.hpp"

#include <cmath>

#include "masf/errors.hpp"

namespace masf {

std::string to_string(DynamicsKind kind) {
  return kind == DynamicsKind::lorenz63 ? "lorenz63" : "lorenz96";
}

DynamicsKind dynamics_kind_from_string(const std::string& s) {
  if (s == "lorenz63") return DynamicsKind::lorenz63;
  if (s == "lorenz96") return DynamicsKind::lorenz96;
  throw ConfigError("dynamics.kind", "unknown dynamics kind '" + s + "'");
}

DynamicsModel DynamicsModel::lorenz63(double dt) {
  DynamicsModel m;
  m.kind = DynamicsKind::lorenz63;
  m.dim = 3;
  m.dt = dt;
  return m;
}

DynamicsModel DynamicsModel::lorenz96(Eigen::Index dim, double forcing, double dt) {
  DynamicsModel m;
  m.kind = DynamicsKind::lorenz96;
  m.dim = dim;
  m.forcing = forcing;
  m.dt = dt;
  m.validate();
  return m;
}

void DynamicsModel::validate() const {
  if (!(dt > 0.0)) throw DomainError("dynamics: dt must be positive");
  if (!(process_noise >= 0.0)) throw DomainError("dynamics: process_noise must be >= 0");
  if (kind == DynamicsKind::lorenz63 && dim != 3) {
    throw DomainError("dynamics: lorenz63 requires dim = 3");
  }
  if (kind == DynamicsKind::lorenz96 && dim < 4) {
    throw DomainError("dynamics: lorenz96 requires dim >= 4");
  }
}

Eigen::VectorXd drift(const DynamicsModel& m, const Eigen::VectorXd& x) {
  return drift(m, Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd drift(const DynamicsModel& m, const Eigen::MatrixXd& x) {
  require_dim(x.rows(), m.dim, "drift");
  Eigen::MatrixXd f(x.rows(), x.cols());
  if (m.kind == DynamicsKind::lorenz63) {
    f.row(0) = m.l63_sigma * (x.row(1) - x.row(0));
    f.row(1) = x.row(0).cwiseProduct((m.l63_rho - x.row(2).array()).matrix()) - x.row(1);
    f.row(2) = x.row(0).cwiseProduct(x.row(1)) - m.l63_beta * x.row(2);
    return f;
  }
  const Eigen::Index d = m.dim;
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index ip1 = (i + 1) % d;
    const Eigen::Index im1 = (i + d - 1) % d;
    const Eigen::Index im2 = (i + d - 2) % d;
    f.row(i) = (x.row(ip1) - x.row(im2)).cwiseProduct(x.row(im1)) - x.row(i);
    f.row(i).array() += m.forcing;
  }
  return f;
}

Eigen::VectorXd step(const DynamicsModel& m, const Eigen::VectorXd& x, Rng& rng,
                     long step_index) {
  Eigen::VectorXd next = x + m.dt * drift(m, x);
  if (m.process_noise > 0.0) {
    next += m.process_noise * std::sqrt(m.dt) * standard_normal(rng, m.dim);
  }
  if (!next.allFinite()) throw DivergenceError("dynamics produced a non-finite state", step_index);
  return next;
}

Eigen::MatrixXd simulate(const DynamicsModel& m, const Eigen::VectorXd& x0, long n_steps,
                         Rng& rng) {
  if (n_steps < 0) throw DomainError("simulate: n_steps must be >= 0");
  m.validate();
  require_dim(x0.size(), m.dim, "simulate x0");
  Eigen::MatrixXd traj(n_steps + 1, m.dim);
  Eigen::VectorXd x = x0;
  traj.row(0) = x.transpose();
  for (long r = 0; r < n_steps; ++r) {
    x = step(m, x, rng, r + 1);
    traj.row(r + 1) = x.transpose();
  }
  return traj;
}

}  // namespace masf
