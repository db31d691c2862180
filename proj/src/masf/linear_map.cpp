#include "masf/linear_map.hpp"

#include <Eigen/Eigenvalues>

#include "masf/errors.hpp"

namespace masf {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

LinearMap LinearMap::diagonal(Eigen::VectorXd diag) {
  LinearMap out;
  out.diagonal_ = true;
  out.diag_ = std::move(diag);
  return out;
}

LinearMap LinearMap::dense(Eigen::MatrixXd m) {
  if (m.rows() != m.cols()) throw DimensionError("LinearMap: matrix must be square");
  LinearMap out;
  out.diagonal_ = false;
  out.mat_ = std::move(m);
  return out;
}

LinearMap LinearMap::identity(Eigen::Index d) {
  return diagonal(Eigen::VectorXd::Ones(d));
}

Eigen::MatrixXd LinearMap::to_dense() const {
  if (diagonal_) return diag_.asDiagonal();
  return mat_;
}

Eigen::MatrixXd LinearMap::apply(const Eigen::MatrixXd& x) const {
  require_dim(x.rows(), dim(), "LinearMap::apply");
  if (diagonal_) return diag_.asDiagonal() * x;
  return mat_ * x;
}

Eigen::VectorXd LinearMap::apply(const Eigen::VectorXd& x) const {
  require_dim(x.size(), dim(), "LinearMap::apply");
  if (diagonal_) return diag_.cwiseProduct(x);
  return mat_ * x;
}

LinearMap LinearMap::transpose() const {
  if (diagonal_) return *this;
  return dense(mat_.transpose());
}

LinearMap LinearMap::operator*(const LinearMap& rhs) const {
  require_dim(rhs.dim(), dim(), "LinearMap::operator*");
  if (diagonal_ && rhs.diagonal_) return diagonal(diag_.cwiseProduct(rhs.diag_));
  if (diagonal_) return dense(diag_.asDiagonal() * rhs.mat_);
  if (rhs.diagonal_) return dense(mat_ * rhs.diag_.asDiagonal());
  return dense(mat_ * rhs.mat_);
}

LinearMap LinearMap::operator+(const LinearMap& rhs) const {
  require_dim(rhs.dim(), dim(), "LinearMap::operator+");
  if (diagonal_ && rhs.diagonal_) return diagonal(diag_ + rhs.diag_);
  return dense(to_dense() + rhs.to_dense());
}

LinearMap LinearMap::operator-(const LinearMap& rhs) const {
  return *this + rhs.scaled(-1.0);
}

LinearMap LinearMap::scaled(double c) const {
  if (diagonal_) return diagonal(c * diag_);
  return dense(c * mat_);
}

double LinearMap::min_symmetric_eigenvalue() const {
  if (diagonal_) return diag_.size() ? diag_.minCoeff() : 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(mat_), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

LinearMap LinearMap::psd_sqrt(double tol) const {
  if (diagonal_) {
    Eigen::VectorXd r(diag_.size());
    for (Eigen::Index i = 0; i < diag_.size(); ++i) {
      if (diag_[i] < -tol) {
        throw NonPsdError("psd_sqrt: negative eigenvalue " + std::to_string(diag_[i]));
      }
      r[i] = std::sqrt(std::max(diag_[i], 0.0));
    }
    return diagonal(std::move(r));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(mat_));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol) throw NonPsdError("psd_sqrt: negative eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return dense(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace masf
