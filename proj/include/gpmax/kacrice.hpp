#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gpmax/kernel.hpp"

namespace gpmax {

/// mu(u) = (2 pi)^((d+1)/(2d)) u^((1-d)/d) exp(u^2 / (2d)).
double mu_scaling(double u, int d);
double log_mu_scaling(double u, int d);

struct IntensityReport {
  double u = 0.0;
  int d = 0;
  /// Leading-order expected number of maxima above u per unit volume.
  double density = 0.0;
  /// Relative size of the neglected correction; no constant is available.
  std::string relative_correction = "O(u^-1), constant unknown";
};

/// det(Lambda)^(1/2) u^(d-1) exp(-u^2/2) / (2 pi)^((d+1)/2).
IntensityReport expected_maxima_density(const KernelModel& kernel, double u);
double expected_count(const KernelModel& kernel, double u, double volume);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

/// E[|det H(0)| |det H(x)| 1{f(0) >= u, f(x) >= u} | grad f(0) = grad f(x) = 0]
/// times the density of (grad f(0), grad f(x)) at the origin. d = 2.
McEstimate cluster_integrand_mc(const KernelModel& kernel, double u, std::span<const double> x,
                                long n_samples, std::uint64_t seed);

/// One-point analogue E[|det H| 1{f >= u} | grad f = 0] p_grad(0).
McEstimate point_integrand_mc(const KernelModel& kernel, double u, long n_samples,
                              std::uint64_t seed);

/// tau(u) = u^(3/2) exp(-u^2/4).
double cluster_radius(double u);

/// Normal comparison bound
///   2 sum_{k>l} |r0(k,l) - r1(k,l)| sum_{i,j} int_0^1 phi(u_i(k), u_j(l); r_h(k,l)) dh
/// with r_h = (1-h) r0 + h r1 and phi the standard bivariate normal density.
/// levels[k] lists the thresholds used for coordinate k.
double berman_bound(const Eigen::MatrixXd& cov0, const Eigen::MatrixXd& cov1,
                    const std::vector<std::vector<double>>& levels);

/// Largest root l of R^d det(Lambda)^(1/2) / (2 pi)^(d-1) l^(d-1) exp(-l^2/2) = 1.
double expected_max_level(const KernelModel& kernel, double window_side);

}  // namespace gpmax
