#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace hte {

struct PseudoInverse {
  Eigen::MatrixXd pinv;
  Eigen::Index rank = 0;
};

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix.
/// Eigenvalues at or below rel_tol * max|eigenvalue| are treated as zero.
inline PseudoInverse pseudo_inverse_sym(const Eigen::MatrixXd& V, double rel_tol = 1e-10) {
  const Eigen::Index q = V.rows();
  PseudoInverse out{Eigen::MatrixXd::Zero(q, q), 0};
  if (q == 0) return out;
  if (q == 1) {
    const double v = V(0, 0);
    if (v > 0.0 && std::isfinite(v)) {
      out.pinv(0, 0) = 1.0 / v;
      out.rank = 1;
    }
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double scale = lambda.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return out;
  const double tol = rel_tol * scale;
  const Eigen::MatrixXd& U = eig.eigenvectors();
  for (Eigen::Index k = 0; k < q; ++k) {
    if (lambda[k] > tol) {
      out.pinv.noalias() += (1.0 / lambda[k]) * U.col(k) * U.col(k).transpose();
      ++out.rank;
    }
  }
  return out;
}

}  // namespace hte
