#include "latentrem/linalg.hpp"

namespace latentrem::linalg {

std::optional<Eigen::LLT<Eigen::MatrixXd>> robust_llt(const Eigen::MatrixXd& a, double* jitter_used) {
  if (jitter_used) *jitter_used = 0.0;
  if (!a.allFinite()) return std::nullopt;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double n = static_cast<double>(a.rows());
  const double jitter = 1e-10 * a.trace() / n;
  if (!(jitter > 0.0)) return std::nullopt;
  Eigen::MatrixXd b = a;
  b.diagonal().array() += jitter;
  llt.compute(b);
  if (llt.info() != Eigen::Success) return std::nullopt;
  if (jitter_used) *jitter_used = jitter;
  return llt;
}

double min_eigenvalue(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(a));
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  return symmetrized(es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose());
}

bool psd_le(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double slack) {
  return min_eigenvalue(b - a) >= -slack;
}

}  // namespace latentrem::linalg
