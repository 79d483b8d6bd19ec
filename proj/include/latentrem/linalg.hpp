#pragma once

#include <Eigen/Dense>

#include <optional>

namespace latentrem::linalg {

inline void symmetrize(Eigen::MatrixXd& a) { a = 0.5 * (a + a.transpose()).eval(); }

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Cholesky factorization that retries once with diagonal jitter
/// 1e-10 * trace(a) / n. Returns nullopt when both attempts fail.
std::optional<Eigen::LLT<Eigen::MatrixXd>> robust_llt(const Eigen::MatrixXd& a, double* jitter_used = nullptr);

double min_eigenvalue(const Eigen::MatrixXd& a);

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0).
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a);

/// True when b - a is PSD up to `slack` on its smallest eigenvalue.
bool psd_le(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double slack = 1e-8);

}  // namespace latentrem::linalg
