#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gpmax::linalg {

/// Submatrix m[rows, cols].
inline Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<int>& rows,
                              const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// rounding-level eigenvalues are clipped to zero. Works for singular laws.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace gpmax::linalg
