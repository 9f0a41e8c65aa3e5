#pragma once

#include <vector>

namespace gpmax::bessel {

/// J_0(x), ..., J_nmax(x) for x >= 0 by Miller's backward recurrence,
/// normalised with 1 = J_0 + 2 * sum_k J_2k. Absolute error below 1e-13
/// for x up to a few hundred.
std::vector<double> j_sequence(int nmax, double x);

/// J_nu(x) for real nu >= 0 (delegates to the standard library).
double j(double nu, double x);

/// x^{-nu} J_nu(x), finite at x = 0 where it equals 1 / (2^nu Gamma(nu+1)).
/// Uses the power series below a crossover so no 0/0 arises near the origin.
double j_scaled(double nu, double x);

}  // namespace gpmax::bessel
