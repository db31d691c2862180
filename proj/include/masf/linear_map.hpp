#pragma once

#include <Eigen/Dense>

namespace masf {

// A d x d linear map that is either diagonal (stored as a vector) or dense.
// Diagonal maps never touch a matrix factorization.
class LinearMap {
 public:
  LinearMap() = default;
  static LinearMap diagonal(Eigen::VectorXd diag);
  static LinearMap dense(Eigen::MatrixXd m);
  static LinearMap identity(Eigen::Index d);

  bool is_diagonal() const { return diagonal_; }
  Eigen::Index dim() const { return diagonal_ ? diag_.size() : mat_.rows(); }

  const Eigen::VectorXd& diag() const { return diag_; }
  Eigen::MatrixXd to_dense() const;

  // Applies the map to a vector or to each column of a matrix.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;

  LinearMap transpose() const;
  LinearMap operator*(const LinearMap& rhs) const;
  LinearMap operator+(const LinearMap& rhs) const;
  LinearMap operator-(const LinearMap& rhs) const;
  LinearMap scaled(double c) const;

  // Symmetric PSD square root. Eigenvalues in (-tol, 0) are clamped to zero;
  // anything below -tol throws NonPsdError.
  LinearMap psd_sqrt(double tol = 1e-10) const;
  double min_symmetric_eigenvalue() const;

 private:
  bool diagonal_ = true;
  Eigen::VectorXd diag_;
  Eigen::MatrixXd mat_;
};

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

}  // namespace masf
