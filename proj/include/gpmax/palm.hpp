#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gpmax/critpoints.hpp"
#include "gpmax/field.hpp"

namespace gpmax {

/// Regression of f(x) on the conditioned data at the origin:
///   E[f(x) | f(0) = t, grad f(0) = 0, Hess f(0) = Z] = t A(x) + vech(Z) . b(x)
/// with vech(Z) = (Z11, Z22, Z12). In the monochromatic case f(0) is a
/// function of Hess f(0), A vanishes and the basis is (grad, Hess) only.
class RegressionWeights {
 public:
  explicit RegressionWeights(const KernelModel& kernel);

  bool monochromatic() const { return monochromatic_; }
  /// 1 + d + d(d+1)/2, or d + d(d+1)/2 for monochromatic kernels.
  int basis_dimension() const { return monochromatic_ ? 5 : 6; }
  const KernelModel& kernel() const { return kernel_; }

  /// d^(a1, a2) A at x (zero for monochromatic kernels).
  double a(const Vec2& x, int a1 = 0, int a2 = 0) const;
  /// d^(a1, a2) b at x.
  Eigen::Vector3d b(const Vec2& x, int a1 = 0, int a2 = 0) const;

  /// Jet (order <= 2) of t A + vech(Z) . b.
  Jet2 mean_jet(const Vec2& x, double t, const Mat2& z, int order) const;

 private:
  KernelModel kernel_;
  bool monochromatic_;
  Eigen::MatrixXd m_inv_;  // inverse of the (f, Hess) or Hess block
};

/// Covariance of the residual field, r(x - y) - k(x)' Sigma^-1 k(y) where k is
/// the covariance of the jet at 0 with the field at x.
double conditional_cov(const KernelModel& kernel, const Vec2& x, const Vec2& y);

struct QuDraw {
  double xi = 0.0;
  Mat2 z = Mat2::Zero();
  /// Effective sample size of the importance batch this draw came from.
  double ess = 0.0;
};

/// Draws from q_u(t, Z) ~ det Z p(t, Z) 1{Z negative definite, t >= u} by
/// sampling-importance-resampling. For monochromatic kernels t = -tr Z.
std::vector<QuDraw> sample_qu(const KernelModel& kernel, double u, int batch_size,
                              std::uint64_t seed);

/// f minus its regression on the jet at the origin (d = 2, order <= 2).
std::shared_ptr<const FieldEvaluator> residualize(const FieldRealization& field);

struct PalmPair {
  FieldRealization f;
  FieldRealization f_tilde;
  QuDraw draw;
  std::shared_ptr<const FieldEvaluator> residual;
};

struct PalmOptions {
  int batch_size = 512;
};

/// f_tilde = xi A + Z . b + residual(f), sharing the residual with f.
PalmPair palm_couple(const FieldRealization& field, double u, std::uint64_t seed,
                     PalmOptions opts = {});
/// f_tilde = Z . b + residual(f) with f_tilde(0) = -tr Z >= u.
PalmPair palm_couple_monochromatic(const FieldRealization& field, double u, std::uint64_t seed,
                                   PalmOptions opts = {});

struct FlowOptions {
  double initial_step = 1.0 / 64.0;
  double min_step = 1e-10;
  /// Local position error per accepted step.
  double tolerance = 1e-8;
  double degeneracy_threshold = 1e-8;
  double gradient_tolerance = 1e-7;
};

struct FlowSample {
  double t = 0.0;
  Vec2 x = Vec2::Zero();
  double grad_norm = 0.0;
  double det_hess = 0.0;
  int morse_index = 0;
};

enum class FlowStatus { kCompleted, kDegenerate, kStepUnderflow, kLeftDomain };

struct FlowResult {
  FlowStatus status = FlowStatus::kCompleted;
  std::string message;
  std::vector<FlowSample> trajectory;
};

std::string to_string(FlowStatus status);

/// Follows the critical point `start` of f along F_t = f + t (f_tilde - f),
/// dx/dt = -Hess F_t(x)^-1 grad (f_tilde - f)(x), t from 0 to 1.
FlowResult flow_critical_points(const FieldEvaluator& f, const FieldEvaluator& f_tilde,
                                const CriticalPoint& start, const Box2& domain,
                                FlowOptions opts = {});

}  // namespace gpmax
