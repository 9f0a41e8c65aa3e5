#include "gpmax/bessel.hpp"

#include <cmath>

#include "gpmax/error.hpp"

namespace gpmax::bessel {

std::vector<double> j_sequence(int nmax, double x) {
  if (nmax < 0) fail(ErrorCode::kInvalidArgument, "j_sequence: nmax must be >= 0");
  if (x < 0.0) fail(ErrorCode::kDomain, "j_sequence: x must be >= 0");
  std::vector<double> out(static_cast<std::size_t>(nmax) + 1, 0.0);
  if (x == 0.0) {
    out[0] = 1.0;
    return out;
  }
  // Start well above both nmax and x so the minimal solution dominates.
  const int start = 2 * ((std::max(nmax, static_cast<int>(x)) + 30 +
                          static_cast<int>(std::sqrt(60.0 * std::max(nmax, static_cast<int>(x))))) / 2);
  double next = 0.0;
  double cur = 1e-300;
  double norm = 0.0;
  for (int n = start; n >= 1; --n) {
    const double prev = (2.0 * n / x) * cur - next;  // J_{n-1}
    next = cur;
    cur = prev;
    if (n - 1 <= nmax) out[n - 1] = cur;
    if ((n - 1) % 2 == 0 && n - 1 > 0) norm += 2.0 * cur;
    if (std::abs(cur) > 1e250) {
      const double s = 1e-250;
      cur *= s;
      next *= s;
      norm *= s;
      for (int k = n - 1; k <= nmax; ++k) out[k] *= s;
    }
  }
  norm += cur;  // J_0 term
  for (double& v : out) v /= norm;
  return out;
}

double j(double nu, double x) { return std::cyl_bessel_j(nu, x); }

double j_scaled(double nu, double x) {
  x = std::abs(x);
  if (x < 4.0) {
    const double q = 0.25 * x * x;
    double term = 1.0 / std::tgamma(nu + 1.0);
    double sum = term;
    for (int m = 1; m < 60; ++m) {
      term *= -q / (m * (m + nu));
      sum += term;
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum * std::pow(0.5, nu);
  }
  return std::cyl_bessel_j(nu, x) * std::pow(x, -nu);
}

}  // namespace gpmax::bessel
