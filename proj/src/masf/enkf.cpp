#include "masf/enkf.hpp"

#include "masf/errors.hpp"

namespace masf {

Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& prior, const Eigen::VectorXd& z,
                            const MeasurementOperator& op, Rng& rng, double inflation) {
  const Eigen::Index d = op.dim();
  const Eigen::Index n = prior.cols();
  require_dim(prior.rows(), d, "enkf prior");
  require_dim(z.size(), d, "enkf measurement");
  if (n < 2) throw DomainError("enkf_update: needs at least two members");
  if (!(inflation >= 1.0)) throw DomainError("enkf_update: inflation must be >= 1");

  const Eigen::VectorXd mean = prior.rowwise().mean();
  Eigen::MatrixXd anomalies = prior.colwise() - mean;
  anomalies *= inflation;
  const Eigen::MatrixXd members = inflation == 1.0 ? prior : Eigen::MatrixXd(anomalies.colwise() + mean);

  const Eigen::MatrixXd a = op.matrix();
  const Eigen::MatrixXd hx = a * anomalies;
  const double scale = 1.0 / static_cast<double>(n - 1);
  const Eigen::MatrixXd pht = scale * anomalies * hx.transpose();
  Eigen::MatrixXd innov = symmetrize(scale * hx * hx.transpose());
  innov.diagonal().array() += op.sigma() * op.sigma();
  Eigen::LLT<Eigen::MatrixXd> llt(innov);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrixError(
        "enkf_update: innovation covariance is singular; increase inflation or add jitter");
  }
  const Eigen::MatrixXd gain = llt.solve(pht.transpose()).transpose();

  Eigen::MatrixXd innovation = (-(a * members)).colwise() + z;
  innovation += op.sigma() * standard_normal(rng, d, n);
  return members + gain * innovation;
}

}  // namespace masf
