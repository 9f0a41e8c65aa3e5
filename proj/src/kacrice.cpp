#include "gpmax/kacrice.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <numbers>

#include "gpmax/error.hpp"
#include "gpmax/linalg.hpp"
#include "gpmax/rng.hpp"

namespace gpmax {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double hess_det(double h11, double h22, double h12) { return h11 * h22 - h12 * h12; }

McEstimate summarize(double sum, double sum_sq, long n, double scale) {
  McEstimate est;
  est.samples = n;
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  est.value = scale * mean;
  est.std_error = scale * std::sqrt(var / std::max<long>(n - 1, 1));
  return est;
}

}  // namespace

double log_mu_scaling(double u, int d) {
  if (!(u > 0.0)) fail(ErrorCode::kInvalidArgument, "level must be > 0");
  if (d < 2) fail(ErrorCode::kInvalidArgument, "dimension must be >= 2");
  return u * u / (2.0 * d) + (1.0 - d) / d * std::log(u) + (d + 1.0) / (2.0 * d) * std::log(kTwoPi);
}

double mu_scaling(double u, int d) {
  if (!(u > 0.0)) fail(ErrorCode::kInvalidArgument, "level must be > 0");
  if (d < 2) fail(ErrorCode::kInvalidArgument, "dimension must be >= 2");
  return std::pow(kTwoPi, (d + 1.0) / (2.0 * d)) * std::pow(u, (1.0 - d) / d) *
         std::exp(u * u / (2.0 * d));
}

IntensityReport expected_maxima_density(const KernelModel& kernel, double u) {
  if (!(u > 0.0)) fail(ErrorCode::kInvalidArgument, "level must be > 0");
  const double det = kernel.lambda().determinant();
  if (!(det > 0.0)) fail(ErrorCode::kNumerical, "gradient covariance is singular");
  const int d = kernel.dim();
  IntensityReport rep;
  rep.u = u;
  rep.d = d;
  rep.density = std::sqrt(det) * std::pow(u, d - 1) * std::exp(-0.5 * u * u) /
                std::pow(kTwoPi, 0.5 * (d + 1));
  return rep;
}

double expected_count(const KernelModel& kernel, double u, double volume) {
  return volume * expected_maxima_density(kernel, u).density;
}

McEstimate cluster_integrand_mc(const KernelModel& kernel, double u, std::span<const double> x,
                                long n_samples, std::uint64_t seed) {
  if (kernel.dim() != 2) fail(ErrorCode::kUnsupported, "two-point integrand is implemented for d = 2");
  if (x.size() != 2) fail(ErrorCode::kInvalidArgument, "x must have two coordinates");
  if (n_samples < 2) fail(ErrorCode::kInvalidArgument, "need at least two samples");
  const Eigen::MatrixXd& s = kernel.sigma_joint();
  const Eigen::MatrixXd c = cross_moment_matrix(kernel, x);
  Eigen::MatrixXd joint(12, 12);
  joint << s, c, c.transpose(), s;
  // Pinned gradients: entries 1, 2 (at 0) and 7, 8 (at x).
  const std::vector<int> pin{1, 2, 7, 8};
  const std::vector<int> rest{0, 3, 4, 5, 6, 9, 10, 11};
  const Eigen::MatrixXd spp = linalg::select(joint, pin, pin);
  const Eigen::MatrixXd srp = linalg::select(joint, rest, pin);
  const Eigen::MatrixXd srr = linalg::select(joint, rest, rest);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spp);
  const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e8) {
    fail(ErrorCode::kNumerical,
         "gradient pins at 0 and x are nearly collinear (condition number above 1e8); the "
         "small-separation regime needs the divided-difference reparametrisation");
  }
  const Eigen::MatrixXd cond = srr - srp * spp.inverse() * srp.transpose();
  const Eigen::MatrixXd root = linalg::psd_sqrt(cond);
  const double density0 = 1.0 / (kTwoPi * kTwoPi * std::sqrt(es.eigenvalues().prod()));

  Philox4x32 rng(seed, derive_stream({0xC105Eull}));
  Eigen::Matrix<double, 8, 1> z;
  double sum = 0.0, sum_sq = 0.0;
  for (long k = 0; k < n_samples; ++k) {
    for (int i = 0; i < 8; ++i) z(i) = rng.normal();
    const Eigen::Matrix<double, 8, 1> y = root * z;
    double w = 0.0;
    if (y(0) >= u && y(4) >= u) {
      w = std::abs(hess_det(y(1), y(2), y(3))) * std::abs(hess_det(y(5), y(6), y(7)));
    }
    sum += w;
    sum_sq += w * w;
  }
  return summarize(sum, sum_sq, n_samples, density0);
}

McEstimate point_integrand_mc(const KernelModel& kernel, double u, long n_samples,
                              std::uint64_t seed) {
  if (kernel.dim() != 2) fail(ErrorCode::kUnsupported, "one-point integrand is implemented for d = 2");
  if (n_samples < 2) fail(ErrorCode::kInvalidArgument, "need at least two samples");
  const Eigen::MatrixXd& s = kernel.sigma_joint();
  const std::vector<int> pin{1, 2};
  const std::vector<int> rest{0, 3, 4, 5};
  const Eigen::MatrixXd spp = linalg::select(s, pin, pin);
  const Eigen::MatrixXd srp = linalg::select(s, rest, pin);
  const Eigen::MatrixXd cond = linalg::select(s, rest, rest) - srp * spp.inverse() * srp.transpose();
  const Eigen::MatrixXd root = linalg::psd_sqrt(cond);
  const double density0 = 1.0 / (kTwoPi * std::sqrt(spp.determinant()));
  Philox4x32 rng(seed, derive_stream({0x0E1ull}));
  Eigen::Vector4d z;
  double sum = 0.0, sum_sq = 0.0;
  for (long k = 0; k < n_samples; ++k) {
    for (int i = 0; i < 4; ++i) z(i) = rng.normal();
    const Eigen::Vector4d y = root * z;
    const double w = (y(0) >= u) ? std::abs(hess_det(y(1), y(2), y(3))) : 0.0;
    sum += w;
    sum_sq += w * w;
  }
  return summarize(sum, sum_sq, n_samples, density0);
}

double cluster_radius(double u) {
  if (!(u > 0.0)) fail(ErrorCode::kInvalidArgument, "level must be > 0");
  return std::pow(u, 1.5) * std::exp(-0.25 * u * u);
}

double berman_bound(const Eigen::MatrixXd& cov0, const Eigen::MatrixXd& cov1,
                    const std::vector<std::vector<double>>& levels) {
  const Eigen::Index n = cov0.rows();
  if (cov0.cols() != n || cov1.rows() != n || cov1.cols() != n) {
    fail(ErrorCode::kInvalidArgument, "covariance matrices must be square and of equal size");
  }
  if (static_cast<Eigen::Index>(levels.size()) != n) {
    fail(ErrorCode::kInvalidArgument, "need one list of levels per coordinate");
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    if (std::abs(cov0(k, k) - cov1(k, k)) > 1e-12 * std::max(1.0, std::abs(cov0(k, k)))) {
      fail(ErrorCode::kDomain, "comparison bound needs equal variances: entry (" +
                                   std::to_string(k) + ", " + std::to_string(k) + ") differs");
    }
    if (!(cov0(k, k) > 0.0)) fail(ErrorCode::kDomain, "variances must be positive");
  }
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index l = 0; l < k; ++l) {
      const double diff = std::abs(cov0(k, l) - cov1(k, l));
      if (diff == 0.0) continue;
      const double sk = std::sqrt(cov0(k, k)), sl = std::sqrt(cov0(l, l));
      const double r0 = cov0(k, l) / (sk * sl), r1 = cov1(k, l) / (sk * sl);
      if (std::abs(r0) >= 1.0 || std::abs(r1) >= 1.0) {
        fail(ErrorCode::kDomain, "off-diagonal correlations must lie strictly inside (-1, 1)");
      }
      double inner = 0.0;
      for (double ui : levels[k]) {
        for (double uj : levels[l]) {
          const double a = ui / sk, b = uj / sl;
          auto phi = [&](double h) {
            const double r = (1.0 - h) * r0 + h * r1;
            const double q = 1.0 - r * r;
            return std::exp(-(a * a - 2.0 * r * a * b + b * b) / (2.0 * q)) /
                   (kTwoPi * std::sqrt(q));
          };
          double err = 0.0;
          inner += gauss_kronrod<double, 31>::integrate(phi, 0.0, 1.0, 15, 1e-10, &err);
        }
      }
      // Densities on the standardised scale; undo the correlation scaling.
      total += diff / (sk * sl) * inner;
    }
  }
  return 2.0 * total;
}

double expected_max_level(const KernelModel& kernel, double window_side) {
  const int d = kernel.dim();
  const double det = kernel.lambda().determinant();
  if (!(det > 0.0)) fail(ErrorCode::kNumerical, "gradient covariance is singular");
  if (!(window_side > 1.0)) fail(ErrorCode::kDomain, "window side must exceed 1");
  const double log_const = d * std::log(window_side) + 0.5 * std::log(det) - (d - 1) * std::log(kTwoPi);
  auto g = [&](double l) { return log_const + (d - 1) * std::log(l) - 0.5 * l * l; };
  const double base = std::sqrt(d * std::log(window_side));
  const double lo = base, hi = 4.0 * base;
  if (!(g(lo) > 0.0) || !(g(hi) < 0.0)) {
    fail(ErrorCode::kDomain, "no root of the expected-maximum equation in [sqrt(d log R), "
                             "4 sqrt(d log R)]; R = " + std::to_string(window_side) + " too small");
  }
  std::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-12 * std::max(1.0, std::abs(a)); };
  const auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, tol, iters);
  return 0.5 * (a + b);
}

}  // namespace gpmax
