#pragma once

#include <array>
#include <optional>
#include <vector>

#include "gpmax/field.hpp"

namespace gpmax {

struct CriticalPoint {
  Vec2 location = Vec2::Zero();
  double height = 0.0;
  /// |grad f| at the returned location (zero for quadratic fits on grid-only fields).
  double grad_norm = 0.0;
  std::array<double, 2> hess_eigs{};  // ascending
  int morse_index = 0;                // number of negative eigenvalues
};

struct ScanOptions {
  /// Lattice spacing is grid_factor / max(u, 1).
  double grid_factor = 0.25;
  double newton_tol = 1e-9;
  int max_iterations = 30;
  /// Region searched; defaults to the field's domain.
  std::optional<Box2> window;
  /// Candidate cells need a value above u - margin_sd * spacing * sqrt(tr Lambda).
  double margin_sd = 3.0;
};

/// Bookkeeping of one scan.
struct ScanTally {
  long candidates = 0;
  long converged = 0;
  long not_converged = 0;  // hit max_iterations, left the cell, or singular Hessian
  long duplicates = 0;
};

/// Local maxima with height > u inside the window, sorted lexicographically.
std::vector<CriticalPoint> find_local_maxima(const FieldRealization& field, double u,
                                             const ScanOptions& opts = {},
                                             ScanTally* tally = nullptr);

/// All non-degenerate critical points with height > u (needs an evaluator).
std::vector<CriticalPoint> find_critical_points(const FieldRealization& field, double u,
                                                const ScanOptions& opts = {},
                                                ScanTally* tally = nullptr);

/// Newton iteration on grad f = 0 from `start`, confined to the box of
/// half-width `confine` around it. Empty when it does not converge.
std::optional<CriticalPoint> refine_critical_point(const FieldEvaluator& eval, const Vec2& start,
                                                   double confine, double tol = 1e-9,
                                                   int max_iterations = 30);

/// Maxima located in rescaled coordinates x / mu(u).
struct PointPattern {
  std::vector<Vec2> points;
  Box2 window;  // rescaled
  double level = 0.0;
  double scale = 1.0;  // mu(u)
  double physical_side = 0.0;
};

/// Divides every point by mu(u); all points must lie in [-R/2, R/2]^2.
PointPattern rescale_points(const std::vector<Vec2>& points, double u, double window_side);
PointPattern rescale_points(const std::vector<CriticalPoint>& points, double u, double window_side);

}  // namespace gpmax
