#include "gpmax/critpoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gpmax/error.hpp"
#include "gpmax/kacrice.hpp"

namespace gpmax {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

CriticalPoint classify(const Vec2& x, const Jet2& jet) {
  CriticalPoint cp;
  cp.location = x;
  cp.height = jet.value;
  cp.grad_norm = jet.grad.norm();
  Eigen::SelfAdjointEigenSolver<Mat2> es(jet.hess, Eigen::EigenvaluesOnly);
  cp.hess_eigs = {es.eigenvalues()(0), es.eigenvalues()(1)};
  cp.morse_index = (cp.hess_eigs[0] < 0.0) + (cp.hess_eigs[1] < 0.0);
  return cp;
}

bool lex_less(const CriticalPoint& a, const CriticalPoint& b) {
  if (a.location.x() != b.location.x()) return a.location.x() < b.location.x();
  return a.location.y() < b.location.y();
}

// Keeps the first point of every cluster closer than `radius`, in lexicographic order.
std::vector<CriticalPoint> dedup(std::vector<CriticalPoint> pts, double radius, ScanTally* tally) {
  std::sort(pts.begin(), pts.end(), lex_less);
  std::vector<CriticalPoint> out;
  for (const auto& p : pts) {
    bool dup = false;
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
      if (p.location.x() - it->location.x() >= radius) break;
      if ((p.location - it->location).norm() < radius) {
        dup = true;
        break;
      }
    }
    if (dup) {
      if (tally) ++tally->duplicates;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

double scan_spacing(double u, double grid_factor) {
  if (!(grid_factor > 0.0)) fail(ErrorCode::kInvalidArgument, "grid factor must be > 0");
  return grid_factor / std::max(u, 1.0);
}

Box2 scan_window(const FieldRealization& field, const ScanOptions& opts) {
  const Box2 w = opts.window.value_or(field.domain());
  if (!(w.x1 >= w.x0) || !(w.y1 >= w.y0)) fail(ErrorCode::kInvalidArgument, "empty scan window");
  return w;
}

double margin(const FieldRealization& field, double spacing, double margin_sd) {
  return margin_sd * spacing * std::sqrt(field.kernel().lambda().trace());
}

// Lattice anchored at the origin covering the window plus one cell of halo
// (clipped to the field's domain) so boundary points see their neighbours.
GridSpec halo_grid(const FieldRealization& field, const Box2& window, double spacing) {
  const Box2& dom = field.domain();
  Box2 ext{std::max(dom.x0, window.x0 - spacing), std::min(dom.x1, window.x1 + spacing),
           std::max(dom.y0, window.y0 - spacing), std::min(dom.y1, window.y1 + spacing)};
  return GridSpec::anchored(ext, spacing);
}

bool is_discrete_max(const Eigen::MatrixXd& v, int i, int j) {
  const double c = v(i, j);
  if (std::isnan(c)) return false;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      const int a = i + di, b = j + dj;
      if (a < 0 || b < 0 || a >= v.rows() || b >= v.cols()) continue;
      const double n = v(a, b);
      if (std::isnan(n)) continue;
      // Ties are broken by position so plateaus give one candidate.
      if (n > c || (n == c && (di < 0 || (di == 0 && dj < 0)))) return false;
    }
  }
  return true;
}

// Quadratic least-squares fit over the 3x3 neighbourhood of an interior
// grid point; used when only grid values exist.
std::optional<CriticalPoint> quadratic_refine(const GridValues& g, int i, int j) {
  if (i < 1 || j < 1 || i + 1 >= g.spec.nx || j + 1 >= g.spec.ny) return std::nullopt;
  const double h = g.spec.h;
  Eigen::Matrix<double, 9, 6> a;
  Eigen::Matrix<double, 9, 1> rhs;
  int row = 0;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      const double x = di * h, y = dj * h;
      a.row(row) << 1.0, x, y, 0.5 * x * x, 0.5 * y * y, x * y;
      rhs(row) = g.values(i + di, j + dj);
      ++row;
    }
  }
  const Eigen::Matrix<double, 6, 1> c = a.colPivHouseholderQr().solve(rhs);
  Mat2 hess;
  hess << c(3), c(5), c(5), c(4);
  const Vec2 grad{c(1), c(2)};
  if (std::abs(hess.determinant()) < 1e-300) return std::nullopt;
  Vec2 step = -hess.ldlt().solve(grad);
  if (std::abs(step.x()) > h || std::abs(step.y()) > h) return std::nullopt;
  Jet2 jet;
  jet.value = c(0) + grad.dot(step) + 0.5 * step.dot(hess * step);
  jet.hess = hess;
  CriticalPoint cp = classify(g.spec.point(i, j) + step, jet);
  cp.grad_norm = 0.0;
  return cp;
}

}  // namespace

std::optional<CriticalPoint> refine_critical_point(const FieldEvaluator& eval, const Vec2& start,
                                                   double confine, double tol, int max_iterations) {
  Vec2 x = start;
  for (int it = 0; it <= max_iterations; ++it) {
    if (!eval.supports(x)) return std::nullopt;
    const Jet2 jet = eval.jet(x, 2);
    if (!std::isfinite(jet.value)) return std::nullopt;
    if (jet.grad.norm() <= tol) return classify(x, jet);
    if (it == max_iterations) break;
    const double det = jet.hess.determinant();
    if (!(std::abs(det) > 1e-14 * std::max(1.0, jet.hess.squaredNorm()))) return std::nullopt;
    Vec2 step = -jet.hess.inverse() * jet.grad;
    // Damp long steps to the confinement half-width.
    const double len = step.lpNorm<Eigen::Infinity>();
    if (len > confine) step *= confine / len;
    x += step;
    if ((x - start).lpNorm<Eigen::Infinity>() > confine) return std::nullopt;
  }
  return std::nullopt;
}

std::vector<CriticalPoint> find_local_maxima(const FieldRealization& field, double u,
                                             const ScanOptions& opts, ScanTally* tally) {
  if (!std::isfinite(u)) fail(ErrorCode::kInvalidArgument, "level must be finite");
  const double spacing = scan_spacing(u, opts.grid_factor);
  const Box2 window = scan_window(field, opts);
  const double cut = u - margin(field, spacing, opts.margin_sd);
  std::vector<CriticalPoint> found;

  if (!field.has_evaluator()) {
    const GridValues& g = field.grid();
    if (g.spec.h > spacing * (1.0 + 1e-12)) {
      fail(ErrorCode::kInvalidArgument, "grid-only field is coarser than the scan spacing b/u");
    }
    for (int i = 0; i < g.spec.nx; ++i) {
      for (int j = 0; j < g.spec.ny; ++j) {
        if (!(g.values(i, j) > cut) || !is_discrete_max(g.values, i, j)) continue;
        if (tally) ++tally->candidates;
        auto cp = quadratic_refine(g, i, j);
        if (!cp) {
          if (tally) ++tally->not_converged;
          continue;
        }
        if (tally) ++tally->converged;
        if (cp->morse_index == 2 && cp->height > u && window.contains(cp->location)) {
          found.push_back(*cp);
        }
      }
    }
    return dedup(std::move(found), 0.5 * g.spec.h, tally);
  }

  const FieldEvaluator& eval = field.evaluator();
  const GridSpec spec = halo_grid(field, window, spacing);
  if (spec.nx == 0 || spec.ny == 0) return {};
  const Eigen::MatrixXd v = eval.grid(spec);
  auto consider = [&](const Vec2& start) {
    if (tally) ++tally->candidates;
    auto cp = refine_critical_point(eval, start, 1.5 * spacing, opts.newton_tol, opts.max_iterations);
    if (!cp) {
      if (tally) ++tally->not_converged;
      return;
    }
    if (tally) ++tally->converged;
    if (cp->morse_index == 2 && cp->height > u && window.contains(cp->location) &&
        field.domain().contains(cp->location)) {
      found.push_back(*cp);
    }
  };
  for (int i = 0; i < spec.nx; ++i) {
    for (int j = 0; j < spec.ny; ++j) {
      if (v(i, j) > cut && is_discrete_max(v, i, j)) consider(spec.point(i, j));
    }
  }
  // A maximum paired with a nearby saddle need not be a discrete maximum of
  // the lattice. Other points above the cut whose Newton step lands within
  // one cell are tried as well; a finite-difference Newton step (within
  // three cells) screens them before the exact jet is evaluated.
  const double h2 = spacing * spacing;
  for (int i = 1; i + 1 < spec.nx; ++i) {
    for (int j = 1; j + 1 < spec.ny; ++j) {
      if (!(v(i, j) > cut) || is_discrete_max(v, i, j)) continue;
      const Vec2 g{(v(i + 1, j) - v(i - 1, j)) / (2 * spacing), (v(i, j + 1) - v(i, j - 1)) / (2 * spacing)};
      Mat2 hd;
      hd(0, 0) = (v(i + 1, j) - 2 * v(i, j) + v(i - 1, j)) / h2;
      hd(1, 1) = (v(i, j + 1) - 2 * v(i, j) + v(i, j - 1)) / h2;
      hd(0, 1) = hd(1, 0) = (v(i + 1, j + 1) - v(i + 1, j - 1) - v(i - 1, j + 1) + v(i - 1, j - 1)) / (4 * h2);
      const double dd = hd.determinant();
      if (std::abs(dd) > 1e-14 * std::max(1.0, hd.squaredNorm()) &&
          (hd.inverse() * g).lpNorm<Eigen::Infinity>() > 3 * spacing) {
        continue;
      }
      const Vec2 x = spec.point(i, j);
      if (!eval.supports(x)) continue;
      const Jet2 jet = eval.jet(x, 2);
      const double det = jet.hess.determinant();
      if (!(std::abs(det) > 1e-14 * std::max(1.0, jet.hess.squaredNorm()))) continue;
      if ((jet.hess.inverse() * jet.grad).lpNorm<Eigen::Infinity>() <= spacing) consider(x);
    }
  }
  return dedup(std::move(found), 0.5 * spacing, tally);
}

std::vector<CriticalPoint> find_critical_points(const FieldRealization& field, double u,
                                                const ScanOptions& opts, ScanTally* tally) {
  if (!std::isfinite(u)) fail(ErrorCode::kInvalidArgument, "level must be finite");
  const FieldEvaluator& eval = field.evaluator();
  const double spacing = scan_spacing(u, opts.grid_factor);
  const Box2 window = scan_window(field, opts);
  const double cut = u - margin(field, spacing, opts.margin_sd);
  const GridSpec spec = halo_grid(field, window, spacing);
  if (spec.nx < 2 || spec.ny < 2) return {};

  Eigen::MatrixXd v(spec.nx, spec.ny), gx(spec.nx, spec.ny), gy(spec.nx, spec.ny);
  // Lattice points whose Newton step stays within one cell.
  std::vector<Vec2> near_critical;
  for (int i = 0; i < spec.nx; ++i) {
    for (int j = 0; j < spec.ny; ++j) {
      const Vec2 p = spec.point(i, j);
      if (!eval.supports(p)) {
        v(i, j) = gx(i, j) = gy(i, j) = kNaN;
        continue;
      }
      const Jet2 jet = eval.jet(p, 2);
      v(i, j) = jet.value;
      gx(i, j) = jet.grad.x();
      gy(i, j) = jet.grad.y();
      const double det = jet.hess.determinant();
      if (jet.value > cut && std::abs(det) > 1e-14 * std::max(1.0, jet.hess.squaredNorm()) &&
          (jet.hess.inverse() * jet.grad).lpNorm<Eigen::Infinity>() <= spacing) {
        near_critical.push_back(p);
      }
    }
  }
  auto straddles = [](double a, double b, double c, double d) {
    const double lo = std::min({a, b, c, d}), hi = std::max({a, b, c, d});
    return lo <= 0.0 && hi >= 0.0;
  };
  std::vector<CriticalPoint> found;
  auto consider = [&](const Vec2& start) {
    if (tally) ++tally->candidates;
    auto cp = refine_critical_point(eval, start, 1.5 * spacing, opts.newton_tol, opts.max_iterations);
    if (!cp) {
      if (tally) ++tally->not_converged;
      return;
    }
    if (tally) ++tally->converged;
    const bool degenerate = cp->hess_eigs[0] == 0.0 || cp->hess_eigs[1] == 0.0;
    if (!degenerate && cp->height > u && window.contains(cp->location) &&
        field.domain().contains(cp->location)) {
      found.push_back(*cp);
    }
  };
  for (int i = 0; i + 1 < spec.nx; ++i) {
    for (int j = 0; j + 1 < spec.ny; ++j) {
      const double vmax = std::max({v(i, j), v(i + 1, j), v(i, j + 1), v(i + 1, j + 1)});
      if (!(vmax > cut)) continue;
      if (!straddles(gx(i, j), gx(i + 1, j), gx(i, j + 1), gx(i + 1, j + 1))) continue;
      if (!straddles(gy(i, j), gy(i + 1, j), gy(i, j + 1), gy(i + 1, j + 1))) continue;
      consider(spec.point(i, j) + Vec2(0.5 * spacing, 0.5 * spacing));
    }
  }
  // Discrete extrema catch critical points whose gradient sign pattern is
  // split across cells.
  for (int i = 0; i < spec.nx; ++i) {
    for (int j = 0; j < spec.ny; ++j) {
      if (!(v(i, j) > cut)) continue;
      if (is_discrete_max(v, i, j)) consider(spec.point(i, j));
    }
  }
  for (const Vec2& p : near_critical) consider(p);
  return dedup(std::move(found), 0.5 * spacing, tally);
}

PointPattern rescale_points(const std::vector<Vec2>& points, double u, double window_side) {
  if (!(u > 0.0)) fail(ErrorCode::kInvalidArgument, "level must be > 0");
  if (!(window_side > 0.0)) fail(ErrorCode::kInvalidArgument, "window side must be > 0");
  PointPattern out;
  out.level = u;
  out.scale = mu_scaling(u, 2);
  out.physical_side = window_side;
  const double half = 0.5 * window_side;
  const Box2 physical = Box2::centered(window_side);
  out.window = Box2::centered(window_side / out.scale);
  out.points.reserve(points.size());
  for (const Vec2& p : points) {
    if (!physical.contains(p)) {
      fail(ErrorCode::kDomain, "point (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                                   ") outside the window [-" + std::to_string(half) + ", " +
                                   std::to_string(half) + "]^2");
    }
    out.points.push_back(p / out.scale);
  }
  return out;
}

PointPattern rescale_points(const std::vector<CriticalPoint>& points, double u, double window_side) {
  std::vector<Vec2> locs;
  locs.reserve(points.size());
  for (const auto& p : points) locs.push_back(p.location);
  return rescale_points(locs, u, window_side);
}

}  // namespace gpmax
