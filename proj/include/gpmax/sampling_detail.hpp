#pragma once

#include <Eigen/Dense>

namespace gpmax::detail {

/// Nonnegligible window of the Hermite functions
///   phi_j(t) = exp(-t^2/2) t^j / sqrt(j!),  0 <= j <= degree,
/// with derivatives: d(r, m) = phi_{lo + r}^{(m)}(t) for m <= order.
struct Band {
  int lo = 0, hi = -1;
  Eigen::MatrixXd d;
};

Band hermite_band(double t, int degree, int order);

}  // namespace gpmax::detail
