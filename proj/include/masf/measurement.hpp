#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masf/linear_map.hpp"
#include "masf/schedule.hpp"

namespace masf {

enum class OperatorKind { identity, grid_mask, dense };

std::string to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(const std::string& s);

// Linear measurement z = A x + sigma * eps. Every operator must have a real,
// nonnegative spectrum so that (1 - a) A + a I stays invertible on [0, 1).
class MeasurementOperator {
 public:
  MeasurementOperator() = default;
  static MeasurementOperator identity(Eigen::Index dim, double sigma);
  static MeasurementOperator grid_mask(std::vector<bool> mask, double sigma);
  // Observes coordinates i with i % stride == 0.
  static MeasurementOperator strided_mask(Eigen::Index dim, Eigen::Index stride, double sigma);
  static MeasurementOperator dense(Eigen::MatrixXd matrix, double sigma);

  OperatorKind kind() const { return kind_; }
  Eigen::Index dim() const { return map_.dim(); }
  double sigma() const { return sigma_; }
  const std::vector<bool>& mask() const { return mask_; }
  const LinearMap& map() const { return map_; }
  Eigen::MatrixXd matrix() const { return map_.to_dense(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return map_.apply(x); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return map_.apply(x); }

 private:
  OperatorKind kind_ = OperatorKind::identity;
  double sigma_ = 1.0;
  std::vector<bool> mask_;
  LinearMap map_;
};

// Gaussian law X_t | X_s ~ N(M X_s, S). For s > t (a reverse step) noise_cov
// holds D = M Sigma(s) M^T - Sigma(t), which is PSD, instead of the negative
// semidefinite Sigma(t) - M Sigma(s) M^T.
struct TransitionKernel {
  LinearMap mean_map;
  LinearMap noise_cov;
  LinearMap noise_sqrt;
  double from = 0.0;
  double to = 0.0;

  bool reverse() const { return from > to; }
  Eigen::MatrixXd M() const { return mean_map.to_dense(); }
  Eigen::MatrixXd S() const { return noise_cov.to_dense(); }
};

// Pieces of the likelihood score M^T S^{-1} (z - M x) at one time t, with
// M = M_{t->1} and S = Sigma_{t->1}.
struct LikelihoodTerm {
  LinearMap obs_map;
  LinearMap gain;
  LinearMap cov;
  double t = 0.0;

  Eigen::VectorXd score(const Eigen::VectorXd& z, const Eigen::VectorXd& x) const;
  // Column-wise score for a batch of states sharing one measurement.
  Eigen::MatrixXd score(const Eigen::VectorXd& z, const Eigen::MatrixXd& x) const;
};

// Measurement-aware forward process
//   X_t = A(t) X_0 + Sigma(t)^{1/2} eps,  A(t) = (1 - a(t)) A + a(t) I,  Sigma(t) = sigma^2 gamma^2(t) I
// together with its moment-matching SDE, transition kernels and scores.
class ForwardProcess {
 public:
  static constexpr double kPsdTolerance = 1e-10;
  static constexpr double kMaxCondition = 1e12;
  static constexpr double kPrecisionFloor = 1e-12;

  ForwardProcess(MeasurementOperator op, Schedule schedule);

  const MeasurementOperator& op() const { return op_; }
  const Schedule& schedule() const { return schedule_; }
  Eigen::Index dim() const { return op_.dim(); }
  double sigma() const { return op_.sigma(); }

  LinearMap interp_map(double t) const;
  Eigen::MatrixXd interp_operator(double t) const { return interp_map(t).to_dense(); }
  // sigma^2 gamma^2(t); Sigma(t) is this times the identity.
  double noise_var(double t) const;
  Eigen::MatrixXd marginal_cov(double t) const;

  Eigen::VectorXd forward_perturb(const Eigen::VectorXd& x0, double t,
                                  const Eigen::VectorXd& noise) const;
  Eigen::MatrixXd forward_perturb(const Eigen::MatrixXd& x0, double t,
                                  const Eigen::MatrixXd& noise) const;

  LinearMap drift_map(double t) const;
  Eigen::MatrixXd drift_matrix(double t) const { return drift_map(t).to_dense(); }
  LinearMap diffusion_sq_map(double t) const;
  Eigen::MatrixXd diffusion_sq(double t) const { return diffusion_sq_map(t).to_dense(); }

  TransitionKernel transition(double s, double t) const;

  LikelihoodTerm likelihood(double t) const;
  Eigen::VectorXd likelihood_score(const Eigen::VectorXd& z, const Eigen::VectorXd& x_t,
                                   double t) const;

  Eigen::VectorXd conditional_score(const Eigen::VectorXd& x_t, const Eigen::VectorXd& x0,
                                    double t) const;

 private:
  // A(t)^{-1}, with a conditioning check.
  LinearMap interp_inverse(double t) const;

  MeasurementOperator op_;
  Schedule schedule_;
};

}  // namespace masf
