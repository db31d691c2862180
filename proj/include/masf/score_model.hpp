#pragma once

#include <Eigen/Dense>

namespace masf {

// Anything that can evaluate an approximate prior score column-wise on a
// d x N batch of perturbed states at pseudo-time t.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const = 0;
};

}  // namespace masf
