#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "gpmax/kernel.hpp"

namespace gpmax {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Axis-aligned box [x0, x1] x [y0, y1].
struct Box2 {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;

  static Box2 centered(double side) { return {-0.5 * side, 0.5 * side, -0.5 * side, 0.5 * side}; }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  bool contains(const Vec2& p, double slack = 0.0) const {
    return p.x() >= x0 - slack && p.x() <= x1 + slack && p.y() >= y0 - slack && p.y() <= y1 + slack;
  }
  bool contains(const Box2& b) const { return b.x0 >= x0 && b.x1 <= x1 && b.y0 >= y0 && b.y1 <= y1; }
};

/// Value and derivatives of a field at a point. `third` holds
/// (f_xxx, f_xxy, f_xyy, f_yyy) and is only filled for order >= 3.
struct Jet2 {
  double value = 0.0;
  Vec2 grad = Vec2::Zero();
  Mat2 hess = Mat2::Zero();
  std::array<double, 4> third{};
};

/// Regular lattice {(x0 + i h, y0 + j h) : 0 <= i < nx, 0 <= j < ny}.
struct GridSpec {
  double x0 = 0.0, y0 = 0.0, h = 1.0;
  int nx = 0, ny = 0;

  Vec2 point(int i, int j) const { return {x0 + i * h, y0 + j * h}; }
  /// Lattice h * Z^2 (anchored at the origin) restricted to `box`.
  static GridSpec anchored(const Box2& box, double h);
};

/// Grid values; values(i, j) sits at spec.point(i, j).
struct GridValues {
  GridSpec spec;
  Eigen::MatrixXd values;
};

/// Analytic access to a realization.
class FieldEvaluator {
 public:
  virtual ~FieldEvaluator() = default;
  /// order in 0..3; entries beyond `order` are left zero.
  virtual Jet2 jet(const Vec2& x, int order) const = 0;
  virtual double value(const Vec2& x) const { return jet(x, 0).value; }
  virtual Eigen::MatrixXd grid(const GridSpec& spec) const;
  /// False where the field is undefined (gaps of a block-independent field).
  virtual bool supports(const Vec2&) const { return true; }
};

enum class SamplerKind {
  kBargmannFockSeries,
  kPlaneWaveBessel,
  kCirculantGrid,
  kBlockIndependent,
  kAnalytic,
  kDerived,  // residual or Palm-conditioned fields built from another realization
};

/// One sampled field. Either backed by an analytic evaluator (series
/// samplers) or holding grid values only (circulant embedding).
class FieldRealization {
 public:
  FieldRealization(KernelModel kernel, SamplerKind kind, std::uint64_t seed, Box2 domain,
                   int truncation, double truncation_error_bound,
                   std::shared_ptr<const FieldEvaluator> evaluator);
  FieldRealization(KernelModel kernel, std::uint64_t seed, GridValues grid,
                   double truncation_error_bound);

  /// Deterministic test function on `domain`; the kernel is recorded as
  /// Bargmann-Fock only for bookkeeping.
  static FieldRealization from_function(Box2 domain, std::function<Jet2(const Vec2&, int)> fn);

  const KernelModel& kernel() const { return kernel_; }
  SamplerKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const Box2& domain() const { return domain_; }
  int truncation() const { return truncation_; }
  double truncation_error_bound() const { return bound_; }

  bool has_evaluator() const { return evaluator_ != nullptr; }
  const FieldEvaluator& evaluator() const;
  std::shared_ptr<const FieldEvaluator> evaluator_ptr() const { return evaluator_; }
  bool has_grid() const { return grid_.has_value(); }
  const GridValues& grid() const;

  Jet2 jet(const Vec2& x, int order = 2) const { return evaluator().jet(x, order); }
  double value(const Vec2& x) const { return evaluator().value(x); }
  bool supports(const Vec2& x) const { return !evaluator_ || evaluator_->supports(x); }
  /// Values on a lattice: evaluator-backed fields evaluate, grid-only fields
  /// must be asked for exactly their own lattice.
  Eigen::MatrixXd values_on(const GridSpec& spec) const;

 private:
  KernelModel kernel_;
  SamplerKind kind_;
  std::uint64_t seed_;
  Box2 domain_;
  int truncation_;
  double bound_;
  std::shared_ptr<const FieldEvaluator> evaluator_;
  std::optional<GridValues> grid_;
};

struct SeriesOptions {
  double tolerance = 1e-10;
  int max_degree = 4000;
};

/// Bargmann-Fock field via the Gaussian entire series
///   f(c + y) = exp(-|y|^2/2) sum_{j,k<=N} a_jk y1^j y2^k / sqrt(j! k!)
/// expanded about the domain centre c. a_jk is addressed by (j, k) in the
/// counter-based stream, so it does not depend on N.
FieldRealization sample_bf_series(std::uint64_t seed, const Box2& domain, SeriesOptions opts = {});

/// Random plane wave on the disk of radius R via the Fourier-Bessel series
///   f = a0 J0(r) + sqrt(2) sum_{n<=N} J_n(r) (a_n cos n theta + b_n sin n theta).
/// The domain box is [-R, R]^2 and N is chosen for radius R sqrt(2) so the
/// whole box meets the tolerance.
FieldRealization sample_rpw_bessel(std::uint64_t seed, double disk_radius, SeriesOptions opts = {});

struct CirculantOptions {
  /// Physical padding added to each side before wrapping; negative selects
  /// the classical minimal embedding of size 2(n-1).
  double pad_length = -1.0;
  double tolerance = 1e-10;
};

/// Cached circulant embedding of a stationary kernel on one lattice. Each
/// draw costs one FFT and yields two independent fields.
class CirculantEmbedding {
 public:
  CirculantEmbedding(const KernelModel& kernel, const GridSpec& grid, CirculantOptions opts = {});
  std::pair<GridValues, GridValues> draw_pair(std::uint64_t seed) const;
  /// Max covariance error over grid pairs (wrapped lags plus clipped spectrum).
  double error_bound() const;
  std::pair<int, int> embedding_size() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

/// Circulant-embedding sampler on a 2-d lattice: exact covariance on the
/// grid points up to the embedding tolerance. Grid values only.
FieldRealization sample_stationary_grid(const KernelModel& kernel, const GridSpec& grid,
                                        std::uint64_t seed, CirculantOptions opts = {});

/// The real and imaginary parts of one complex circulant draw: two
/// independent realizations for the price of one FFT.
std::pair<FieldRealization, FieldRealization> sample_stationary_grid_pair(
    const KernelModel& kernel, const GridSpec& grid, std::uint64_t seed, CirculantOptions opts = {});

/// Block-independent comparison field: the domain is tiled by squares of
/// side `block_side` separated by gaps `gap`; each square carries an
/// independent copy of the series field. Undefined in the gaps.
FieldRealization sample_block_independent(const KernelModel& kernel, double block_side, double gap,
                                          const Box2& domain, std::uint64_t seed,
                                          SeriesOptions opts = {});

/// Smallest N with sup over `domain` (expanded about its centre) of the
/// covariance deficit of the truncated BF series <= tolerance.
int bf_required_degree(const Box2& domain, double tolerance);

}  // namespace gpmax
