#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gpmax {

enum class KernelFamily { kBargmannFock, kRandomPlaneWave, kMonochromaticSphere, kCustomSpectral };

/// Maps (x, alpha) to d^alpha r(x); alpha holds one derivative count per axis.
using DerivativeTable =
    std::function<double(std::span<const double> x, std::span<const int> alpha)>;

inline constexpr int kMaxDerivativeOrder = 4;

/// Stationary, unit-variance covariance kernel r(x) = E[f(0) f(x)] with
/// derivatives up to order four and the moment matrices of the jet
/// (f, grad f, vech Hess f) at a point. Immutable; copies share state.
///
/// The jet ordering is the one used throughout the library:
///   f, d_1 f, ..., d_d f, d_11 f, ..., d_dd f, d_12 f, d_13 f, ..., d_(d-1)d f.
class KernelModel {
 public:
  static KernelModel bargmann_fock(int dim = 2);
  static KernelModel random_plane_wave();
  static KernelModel monochromatic_sphere(int dim);
  /// `decay_radius` is a radius beyond which every registered derivative is
  /// negligible (below 1e-17); pass infinity when unknown.
  static KernelModel custom_spectral(int dim, std::string id, DerivativeTable table,
                                     double decay_radius);
  /// exp(-|x|^2 / (2 l^2)) registered as a custom kernel; small l gives an
  /// almost white grid field.
  static KernelModel scaled_gaussian(int dim, double length);
  /// String ids: "bargmann-fock", "random-plane-wave", "monochromatic-sphere",
  /// "gaussian" (params: {length}).
  static KernelModel from_id(std::string_view id, int dim, std::span<const double> params = {});

  KernelFamily family() const;
  int dim() const;
  const std::string& id() const;
  const std::vector<double>& params() const;

  /// d^alpha r(x); throws for |alpha| > 4.
  double eval(std::span<const double> x, std::span<const int> alpha) const;
  /// Two-dimensional shorthand: d^(a1, a2) r(x, y).
  double eval2(double x, double y, int a1, int a2) const;
  double value(std::span<const double> x) const;

  /// Lambda_f = Cov(grad f(0)).
  const Eigen::MatrixXd& lambda() const;
  /// Covariance of the full jet (f, grad f, vech Hess f) at a point.
  const Eigen::MatrixXd& sigma_joint() const;
  int jet_size() const;
  /// True when f = -trace(Hess f) (spectral measure on the unit sphere).
  bool is_monochromatic() const;
  double decay_radius() const;

  struct Impl;

 private:
  explicit KernelModel(std::shared_ptr<const Impl> impl);
  std::shared_ptr<const Impl> impl_;
};

/// Multi-indices of the jet entries in library order.
std::vector<std::vector<int>> jet_multi_indices(int dim);

/// Derivative of a radial kernel r(x) = G(|x|^2 / 2). `g_derivs[k]` must hold
/// G^(k)(|x|^2/2) for k = 0..|alpha|.
double radial_derivative(std::span<const double> x, std::span<const int> alpha,
                         std::span<const double> g_derivs);

/// Covariance of the jet at 0 (rows) with the jet at x (columns):
/// Cov(d^a f(0), d^b f(x)) = (-1)^|a| d^(a+b) r(x). Needs |a|,|b| <= 2.
Eigen::MatrixXd cross_moment_matrix(const KernelModel& kernel, std::span<const double> x);

/// Same as sigma_joint(); kept as a free function to mirror the operation name.
Eigen::MatrixXd joint_moment_matrix(const KernelModel& kernel);

}  // namespace gpmax
