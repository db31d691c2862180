#include "masf/measurement.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "masf/errors.hpp"

namespace masf {

namespace {

constexpr double kSpectrumTolerance = 1e-10;

void check_spectrum(const Eigen::MatrixXd& a) {
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(a), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -kSpectrumTolerance) {
      throw DomainError("dense operator has a negative eigenvalue " +
                        std::to_string(es.eigenvalues().minCoeff()));
    }
    return;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  for (const auto& ev : es.eigenvalues()) {
    if (std::abs(ev.imag()) > kSpectrumTolerance || ev.real() < -kSpectrumTolerance) {
      throw DomainError("dense operator eigenvalue (" + std::to_string(ev.real()) + ", " +
                        std::to_string(ev.imag()) + ") is not real and nonnegative");
    }
  }
}

// Symmetrizes, checks the spectrum against -tol and returns the matrix.
LinearMap checked_psd(const LinearMap& m, double tol, const char* what) {
  if (m.is_diagonal()) {
    if (m.dim() > 0 && m.diag().minCoeff() < -tol) {
      throw NonPsdError(std::string(what) + ": negative eigenvalue " +
                        std::to_string(m.diag().minCoeff()));
    }
    return m;
  }
  LinearMap sym = LinearMap::dense(symmetrize(m.to_dense()));
  const double lo = sym.min_symmetric_eigenvalue();
  if (lo < -tol) {
    throw NonPsdError(std::string(what) + ": negative eigenvalue " + std::to_string(lo));
  }
  return sym;
}

// Clamps eigenvalues in (-tol, 0) to zero.
LinearMap clamp_psd(const LinearMap& m) {
  if (m.is_diagonal()) return LinearMap::diagonal(m.diag().cwiseMax(0.0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.to_dense());
  if (es.eigenvalues().minCoeff() >= 0.0) return m;
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return LinearMap::dense(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::identity: return "identity";
    case OperatorKind::grid_mask: return "grid_mask";
    case OperatorKind::dense: return "dense";
  }
  return "?";
}

OperatorKind operator_kind_from_string(const std::string& s) {
  if (s == "identity") return OperatorKind::identity;
  if (s == "grid_mask") return OperatorKind::grid_mask;
  if (s == "dense") return OperatorKind::dense;
  throw ConfigError("measurement.kind", "unknown operator kind '" + s + "'");
}

MeasurementOperator MeasurementOperator::identity(Eigen::Index dim, double sigma) {
  if (dim <= 0) throw DimensionError("identity operator: dim must be positive");
  if (!(sigma > 0.0)) throw DomainError("measurement sigma must be positive");
  MeasurementOperator op;
  op.kind_ = OperatorKind::identity;
  op.sigma_ = sigma;
  op.map_ = LinearMap::identity(dim);
  return op;
}

MeasurementOperator MeasurementOperator::grid_mask(std::vector<bool> mask, double sigma) {
  if (mask.empty()) throw DimensionError("grid mask must be nonempty");
  if (!(sigma > 0.0)) throw DomainError("measurement sigma must be positive");
  Eigen::VectorXd diag(static_cast<Eigen::Index>(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) diag[static_cast<Eigen::Index>(i)] = mask[i];
  MeasurementOperator op;
  op.kind_ = OperatorKind::grid_mask;
  op.sigma_ = sigma;
  op.mask_ = std::move(mask);
  op.map_ = LinearMap::diagonal(std::move(diag));
  return op;
}

MeasurementOperator MeasurementOperator::strided_mask(Eigen::Index dim, Eigen::Index stride,
                                                      double sigma) {
  if (stride <= 0) throw DomainError("mask stride must be positive");
  std::vector<bool> mask(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) mask[static_cast<std::size_t>(i)] = (i % stride) == 0;
  return grid_mask(std::move(mask), sigma);
}

MeasurementOperator MeasurementOperator::dense(Eigen::MatrixXd matrix, double sigma) {
  if (matrix.rows() == 0 || matrix.rows() != matrix.cols()) {
    throw DimensionError("dense operator must be a nonempty square matrix");
  }
  if (!(sigma > 0.0)) throw DomainError("measurement sigma must be positive");
  if (!matrix.allFinite()) throw DomainError("dense operator has non-finite entries");
  check_spectrum(matrix);
  MeasurementOperator op;
  op.kind_ = OperatorKind::dense;
  op.sigma_ = sigma;
  op.map_ = LinearMap::dense(std::move(matrix));
  return op;
}

Eigen::VectorXd LikelihoodTerm::score(const Eigen::VectorXd& z, const Eigen::VectorXd& x) const {
  return gain.apply(Eigen::VectorXd(z - obs_map.apply(x)));
}

Eigen::MatrixXd LikelihoodTerm::score(const Eigen::VectorXd& z, const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd residual = -obs_map.apply(x);
  residual.colwise() += z;
  return gain.apply(residual);
}

ForwardProcess::ForwardProcess(MeasurementOperator op, Schedule schedule)
    : op_(std::move(op)), schedule_(schedule) {}

LinearMap ForwardProcess::interp_map(double t) const {
  const double a = schedule_.alpha(t);
  const LinearMap& A = op_.map();
  if (A.is_diagonal()) {
    return LinearMap::diagonal(((1.0 - a) * A.diag().array() + a).matrix());
  }
  Eigen::MatrixXd m = (1.0 - a) * A.to_dense();
  m.diagonal().array() += a;
  return LinearMap::dense(std::move(m));
}

LinearMap ForwardProcess::interp_inverse(double t) const {
  const LinearMap at = interp_map(t);
  if (at.is_diagonal()) {
    const Eigen::VectorXd& d = at.diag();
    const double hi = d.cwiseAbs().maxCoeff();
    const double lo = d.cwiseAbs().minCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition) {
      throw SingularMatrixError("A(t) is numerically singular at t = " + std::to_string(t));
    }
    return LinearMap::diagonal(d.cwiseInverse());
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(at.to_dense());
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / kMaxCondition)) {
    throw SingularMatrixError("A(t) is numerically singular at t = " + std::to_string(t));
  }
  return LinearMap::dense(lu.inverse());
}

double ForwardProcess::noise_var(double t) const {
  return sigma() * sigma() * schedule_.gamma_sq(t);
}

Eigen::MatrixXd ForwardProcess::marginal_cov(double t) const {
  return noise_var(t) * Eigen::MatrixXd::Identity(dim(), dim());
}

Eigen::VectorXd ForwardProcess::forward_perturb(const Eigen::VectorXd& x0, double t,
                                                const Eigen::VectorXd& noise) const {
  require_dim(x0.size(), dim(), "forward_perturb x0");
  require_dim(noise.size(), dim(), "forward_perturb noise");
  return interp_map(t).apply(x0) + std::sqrt(noise_var(t)) * noise;
}

Eigen::MatrixXd ForwardProcess::forward_perturb(const Eigen::MatrixXd& x0, double t,
                                                const Eigen::MatrixXd& noise) const {
  require_dim(x0.rows(), dim(), "forward_perturb x0");
  require_dim(noise.rows(), dim(), "forward_perturb noise");
  require_dim(noise.cols(), x0.cols(), "forward_perturb noise columns");
  return interp_map(t).apply(x0) + std::sqrt(noise_var(t)) * noise;
}

LinearMap ForwardProcess::drift_map(double t) const {
  const double adot = schedule_.alpha_dot(t);
  const LinearMap& A = op_.map();
  const LinearMap inv = interp_inverse(t);
  if (A.is_diagonal()) {
    return LinearMap::diagonal((adot * (1.0 - A.diag().array())).matrix().cwiseProduct(inv.diag()));
  }
  Eigen::MatrixXd a_dot = -adot * A.to_dense();
  a_dot.diagonal().array() += adot;
  return LinearMap::dense(a_dot * inv.to_dense());
}

LinearMap ForwardProcess::diffusion_sq_map(double t) const {
  const LinearMap f = drift_map(t);
  const double var = noise_var(t);
  const double var_dot = sigma() * sigma() * schedule_.gamma_sq_dot(t);
  LinearMap gg;
  if (f.is_diagonal()) {
    gg = LinearMap::diagonal((var_dot - 2.0 * var * f.diag().array()).matrix());
  } else {
    Eigen::MatrixXd m = -var * (f.to_dense() + f.to_dense().transpose());
    m.diagonal().array() += var_dot;
    gg = LinearMap::dense(std::move(m));
  }
  return clamp_psd(checked_psd(gg, kPsdTolerance, "diffusion_sq"));
}

TransitionKernel ForwardProcess::transition(double s, double t) const {
  if (!(s >= 0.0 && s < 1.0)) throw DomainError("transition: s must lie in [0, 1)");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("transition: t must lie in [0, 1]");
  if (s == t) throw DomainError("transition: s and t must differ");

  TransitionKernel k;
  k.from = s;
  k.to = t;
  k.mean_map = interp_map(t) * interp_inverse(s);

  const double var_s = noise_var(s);
  const double var_t = noise_var(t);
  // M Sigma(s) M^T = var_s M M^T since Sigma is isotropic.
  const LinearMap mm = k.mean_map * k.mean_map.transpose();
  LinearMap cov;
  if (mm.is_diagonal()) {
    const Eigen::VectorXd pushed = var_s * mm.diag();
    cov = LinearMap::diagonal(s < t ? Eigen::VectorXd((var_t - pushed.array()).matrix())
                                    : Eigen::VectorXd((pushed.array() - var_t).matrix()));
  } else {
    Eigen::MatrixXd pushed = var_s * mm.to_dense();
    Eigen::MatrixXd c = s < t ? Eigen::MatrixXd(-pushed) : pushed;
    c.diagonal().array() += s < t ? var_t : -var_t;
    cov = LinearMap::dense(std::move(c));
  }
  const double tol = kPsdTolerance * std::max(1.0, std::max(var_s, var_t));
  k.noise_cov = checked_psd(cov, tol, s < t ? "transition covariance" : "reverse-step covariance");
  k.noise_sqrt = k.noise_cov.psd_sqrt(tol);
  return k;
}

LikelihoodTerm ForwardProcess::likelihood(double t) const {
  if (!(t >= 0.0 && t < 1.0)) throw DomainError("likelihood: t must lie in [0, 1)");
  LikelihoodTerm term;
  term.t = t;
  term.obs_map = op_.map() * interp_inverse(t);
  const double s2 = sigma() * sigma();
  const double var_t = noise_var(t);
  const LinearMap mm = term.obs_map * term.obs_map.transpose();
  if (mm.is_diagonal()) {
    Eigen::VectorXd cov = (s2 - var_t * mm.diag().array()).matrix();
    if (cov.minCoeff() < -kPsdTolerance) {
      throw SingularMatrixError("Sigma_{t->1} is not positive definite at t = " +
                                std::to_string(t));
    }
    for (Eigen::Index i = 0; i < cov.size(); ++i) {
      if (cov[i] < kPrecisionFloor) cov[i] += kPrecisionFloor;
    }
    term.gain = LinearMap::diagonal(term.obs_map.diag().cwiseQuotient(cov));
    term.cov = LinearMap::diagonal(std::move(cov));
    return term;
  }
  Eigen::MatrixXd cov = -var_t * mm.to_dense();
  cov.diagonal().array() += s2;
  cov = symmetrize(cov);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  if (lo < -kPsdTolerance) {
    throw SingularMatrixError("Sigma_{t->1} is not positive definite at t = " + std::to_string(t));
  }
  if (lo < kPrecisionFloor) cov.diagonal().array() += kPrecisionFloor;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrixError("Sigma_{t->1} factorization failed at t = " + std::to_string(t));
  }
  term.gain = LinearMap::dense(llt.solve(term.obs_map.to_dense()).transpose());
  term.cov = LinearMap::dense(std::move(cov));
  return term;
}

Eigen::VectorXd ForwardProcess::likelihood_score(const Eigen::VectorXd& z,
                                                 const Eigen::VectorXd& x_t, double t) const {
  require_dim(z.size(), dim(), "likelihood_score z");
  require_dim(x_t.size(), dim(), "likelihood_score x_t");
  return likelihood(t).score(z, x_t);
}

Eigen::VectorXd ForwardProcess::conditional_score(const Eigen::VectorXd& x_t,
                                                  const Eigen::VectorXd& x0, double t) const {
  if (!(t > 0.0 && t <= 1.0)) {
    throw DomainError("conditional_score: t must lie in (0, 1]; Sigma(0) = 0");
  }
  require_dim(x_t.size(), dim(), "conditional_score x_t");
  require_dim(x0.size(), dim(), "conditional_score x0");
  const double var = noise_var(t);
  if (!(var > 0.0)) throw DomainError("conditional_score: Sigma(t) is singular");
  return -(x_t - interp_map(t).apply(x0)) / var;
}

}  // namespace masf
