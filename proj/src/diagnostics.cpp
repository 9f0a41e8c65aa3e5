#include "gpmax/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/poisson.hpp>
#include <cmath>
#include <numeric>

#include "gpmax/error.hpp"
#include "gpmax/rng.hpp"

namespace gpmax {

namespace {

constexpr std::uint64_t kBootstrapTag = 0xB005ull;
constexpr std::uint64_t kSupercriticalTag = 0x5C17ull;
constexpr std::uint64_t kExcursionTag = 0xE7C5ull;
constexpr std::uint64_t kCaptureTag = 0xCA97ull;

double poisson_pmf(double lambda, long k) {
  if (lambda == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(k * std::log(lambda) - lambda - std::lgamma(k + 1.0));
}

// Maximum of a smooth function along a segment from its samples; interior
// discrete maxima are refined by a parabola through three samples.
double segment_max(const std::vector<double>& v) {
  double best = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (std::isfinite(x)) best = std::max(best, x);
  }
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    const double a = v[i - 1], b = v[i], c = v[i + 1];
    if (!(b >= a && b >= c)) continue;
    const double curv = a - 2.0 * b + c;
    if (!(curv < 0.0)) continue;
    const double off = 0.5 * (a - c) / curv;  // in units of step
    if (std::abs(off) <= 1.0) best = std::max(best, b - 0.25 * (a - c) * off);
  }
  return best;
}

// Boundary maximum of an evaluator-backed field along one edge: sampled,
// then refined by 1-d Newton on the tangential derivative.
double edge_max(const FieldEvaluator& eval, const Vec2& a, const Vec2& b, double spacing) {
  const Vec2 dir = b - a;
  const double len = dir.norm();
  if (len == 0.0) return eval.value(a);
  const Vec2 e = dir / len;
  const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
  const double step = len / (n - 1);
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = eval.value(a + (i * step) * e);
  double best = std::max(v.front(), v.back());
  for (int i = 1; i + 1 < n; ++i) {
    best = std::max(best, v[i]);
    if (!(v[i] >= v[i - 1] && v[i] >= v[i + 1])) continue;
    double s = i * step;
    for (int it = 0; it < 30; ++it) {
      const Jet2 j = eval.jet(a + s * e, 2);
      const double g = e.dot(j.grad), h = e.dot(j.hess * e);
      if (!(h < 0.0)) break;
      const double next = std::clamp(s - g / h, (i - 1) * step, (i + 1) * step);
      const bool done = std::abs(next - s) < 1e-12;
      s = next;
      if (done) break;
    }
    best = std::max(best, eval.value(a + s * e));
  }
  return best;
}

double grid_boundary_max(const GridValues& g) {
  const auto& v = g.values;
  const int nx = static_cast<int>(v.rows()), ny = static_cast<int>(v.cols());
  std::vector<double> line;
  double best = -std::numeric_limits<double>::infinity();
  auto take_row = [&](int i) {
    line.assign(ny, 0.0);
    for (int j = 0; j < ny; ++j) line[j] = v(i, j);
    best = std::max(best, segment_max(line));
  };
  auto take_col = [&](int j) {
    line.assign(nx, 0.0);
    for (int i = 0; i < nx; ++i) line[i] = v(i, j);
    best = std::max(best, segment_max(line));
  };
  take_row(0);
  take_row(nx - 1);
  take_col(0);
  take_col(ny - 1);
  return best;
}

}  // namespace

std::vector<double> histogram_pmf(const std::vector<long>& counts) {
  if (counts.empty()) fail(ErrorCode::kInvalidArgument, "no counts");
  long kmax = 0;
  for (long c : counts) {
    if (c < 0) fail(ErrorCode::kInvalidArgument, "counts must be nonnegative");
    kmax = std::max(kmax, c);
  }
  std::vector<double> pmf(kmax + 1, 0.0);
  for (long c : counts) pmf[c] += 1.0;
  for (double& p : pmf) p /= static_cast<double>(counts.size());
  return pmf;
}

double tv_distance_poisson(const std::vector<double>& pmf, double lambda) {
  if (!(lambda > 0.0)) fail(ErrorCode::kInvalidArgument, "Poisson mean must be > 0");
  double sum = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    const double q = poisson_pmf(lambda, static_cast<long>(k));
    sum += std::abs(pmf[k] - q);
  }
  // Poisson mass beyond the largest observed count.
  const double tail = pmf.empty() ? 1.0
                                  : boost::math::cdf(boost::math::complement(
                                        boost::math::poisson_distribution<double>(lambda),
                                        static_cast<double>(pmf.size() - 1)));
  return std::clamp(0.5 * (sum + tail), 0.0, 1.0);
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t n = std::max(p.size(), q.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = k < p.size() ? p[k] : 0.0;
    const double b = k < q.size() ? q[k] : 0.0;
    sum += std::abs(a - b);
  }
  return 0.5 * sum;
}

TvResult tv_to_poisson(const std::vector<long>& counts, std::optional<double> lambda,
                       std::uint64_t seed, int n_bootstrap) {
  if (counts.empty()) fail(ErrorCode::kInvalidArgument, "no counts");
  auto mean_of = [](const std::vector<long>& c) {
    return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
  };
  TvResult res;
  res.lambda = lambda.value_or(mean_of(counts));
  if (!(res.lambda > 0.0)) fail(ErrorCode::kDomain, "Poisson reference mean is zero (no points observed)");
  res.estimate = tv_distance_poisson(histogram_pmf(counts), res.lambda);
  if (n_bootstrap <= 0) {
    res.ci_low = res.ci_high = res.estimate;
    return res;
  }
  Philox4x32 rng(seed, derive_stream({kBootstrapTag}));
  std::vector<double> stats;
  stats.reserve(n_bootstrap);
  std::vector<long> resample(counts.size());
  const std::uint64_t n = counts.size();
  for (int b = 0; b < n_bootstrap; ++b) {
    for (auto& c : resample) c = counts[rng.next_u64() % n];
    const double lam = lambda.value_or(mean_of(resample));
    stats.push_back(lam > 0.0 ? tv_distance_poisson(histogram_pmf(resample), lam) : 1.0);
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double pos = q * (stats.size() - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - i;
    return i + 1 < stats.size() ? stats[i] * (1.0 - frac) + stats[i + 1] * frac : stats[i];
  };
  res.ci_low = quantile(0.025);
  res.ci_high = quantile(0.975);
  return res;
}

std::vector<AvoidanceResult> avoidance_probability(const std::vector<PointPattern>& patterns,
                                                   const std::vector<Box2>& boxes) {
  if (patterns.empty()) fail(ErrorCode::kInvalidArgument, "no patterns");
  std::vector<AvoidanceResult> out;
  for (const Box2& box : boxes) {
    if (!(box.x1 >= box.x0) || !(box.y1 >= box.y0)) fail(ErrorCode::kInvalidArgument, "malformed box");
    long empty = 0;
    for (const auto& p : patterns) {
      const double slack = 1e-12 * std::max(1.0, p.window.width());
      if (!p.window.contains(Box2{box.x0 + slack, box.x1 - slack, box.y0 + slack, box.y1 - slack}) &&
          !(box.area() == 0.0 && p.window.contains(box.center()))) {
        fail(ErrorCode::kDomain, "avoidance box lies outside the pattern window");
      }
      bool hit = false;
      for (const Vec2& x : p.points) {
        if (box.area() > 0.0 && box.contains(x)) {
          hit = true;
          break;
        }
      }
      empty += !hit;
    }
    out.push_back({box, static_cast<double>(empty) / patterns.size(), std::exp(-box.area())});
  }
  return out;
}

long cluster_pairs(const PointPattern& pattern, double u) {
  const double tau = cluster_radius(u);
  long pairs = 0;
  const auto& pts = pattern.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j && (pts[i] - pts[j]).norm() < tau) ++pairs;
    }
  }
  return pairs;
}

McEstimate palm_count_discrepancy(const std::vector<PalmPair>& pairs, double u, double window_side,
                                  const ScanOptions& scan) {
  if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "no Palm pairs");
  const double hole = mu_scaling(u, 2) * cluster_radius(u);
  ScanOptions opts = scan;
  opts.window = Box2::centered(window_side);
  auto count = [&](const FieldRealization& f) {
    long c = 0;
    for (const auto& cp : find_local_maxima(f, u, opts)) c += cp.location.norm() >= hole;
    return c;
  };
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& p : pairs) {
    const double d = std::abs(static_cast<double>(count(p.f_tilde) - count(p.f)));
    sum += d;
    sum_sq += d * d;
  }
  const long n = static_cast<long>(pairs.size());
  McEstimate est;
  est.samples = n;
  est.value = sum / n;
  est.std_error = n > 1 ? std::sqrt(std::max(0.0, sum_sq / n - est.value * est.value) / (n - 1)) : 0.0;
  return est;
}

double field_maximum(const FieldRealization& field, const Box2& region, double floor,
                     double grid_factor) {
  ScanOptions opts;
  opts.grid_factor = grid_factor;
  double best = -std::numeric_limits<double>::infinity();
  if (!field.has_evaluator()) {
    const GridValues& g = field.grid();
    const Box2& dom = field.domain();
    if (std::abs(dom.x0 - region.x0) > 1e-9 || std::abs(dom.x1 - region.x1) > 1e-9 ||
        std::abs(dom.y0 - region.y0) > 1e-9 || std::abs(dom.y1 - region.y1) > 1e-9) {
      fail(ErrorCode::kUnsupported, "grid-only field: the region must be the field's own lattice box");
    }
    opts.grid_factor = std::max(grid_factor, g.spec.h * std::max(floor, 1.0));
    for (const auto& cp : find_local_maxima(field, floor, opts)) best = std::max(best, cp.height);
    return std::max({best, grid_boundary_max(g), g.values.maxCoeff()});
  }
  opts.window = region;
  for (const auto& cp : find_local_maxima(field, floor, opts)) best = std::max(best, cp.height);
  const FieldEvaluator& e = field.evaluator();
  const double spacing = grid_factor / std::max(floor, 1.0);
  const Vec2 c00{region.x0, region.y0}, c10{region.x1, region.y0}, c01{region.x0, region.y1},
      c11{region.x1, region.y1};
  best = std::max({best, edge_max(e, c00, c10, spacing), edge_max(e, c10, c11, spacing),
                   edge_max(e, c11, c01, spacing), edge_max(e, c01, c00, spacing)});
  return best;
}

double supercritical_level(int n, double alpha, int d) {
  if (n < 2) fail(ErrorCode::kInvalidArgument, "n must be >= 2");
  return std::sqrt(2.0 * alpha * d * std::log(static_cast<double>(n)));
}

SupercriticalResult supercritical_emptiness(const KernelModel& kernel, int n, double alpha,
                                            long replicates, std::uint64_t seed,
                                            SupercriticalOptions opts) {
  if (!(alpha > 1.0)) fail(ErrorCode::kInvalidArgument, "alpha must be > 1");
  if (n < 10) fail(ErrorCode::kInvalidArgument, "n must be >= 10");
  if (replicates < 1) fail(ErrorCode::kInvalidArgument, "replicates must be >= 1");
  const int d = kernel.dim();
  const int cells = static_cast<int>(std::llround(n / opts.spacing));
  const long points = static_cast<long>(cells + 1) * (cells + 1);
  if (points > opts.max_points) {
    fail(ErrorCode::kDomain, "n = " + std::to_string(n) + " needs " + std::to_string(points) +
                                 " lattice points, above the configured cap " +
                                 std::to_string(opts.max_points));
  }
  SupercriticalResult res;
  res.n = n;
  res.alpha = alpha;
  res.level = supercritical_level(n, alpha, d);
  res.replicates = replicates;
  res.reference = std::pow(static_cast<double>(n), (1.0 - alpha) * d) *
                  std::pow(std::log(static_cast<double>(n)), 0.5 * (d - 1));
  const GridSpec spec{0.0, 0.0, opts.spacing, cells + 1, cells + 1};
  CirculantOptions copts;
  copts.pad_length = std::isfinite(kernel.decay_radius()) ? kernel.decay_radius() : -1.0;
  const CirculantEmbedding embedding(kernel, spec, copts);
  const double u = res.level;
  const double margin = 3.0 * opts.spacing * std::sqrt(kernel.lambda().trace());
  auto hit = [&](GridValues&& g) {
    if (g.values.maxCoeff() > u) return true;
    if (g.values.maxCoeff() <= u - margin) return false;
    const FieldRealization f(kernel, 0, std::move(g), embedding.error_bound());
    return field_maximum(f, f.domain(), u, opts.grid_factor) > u;
  };
  for (long r = 0; r < replicates; r += 2) {
    auto [a, b] = embedding.draw_pair(derive_seed(seed, {kSupercriticalTag, static_cast<std::uint64_t>(n),
                                                          static_cast<std::uint64_t>(r / 2)}));
    res.hits += hit(std::move(a));
    if (r + 1 < replicates) res.hits += hit(std::move(b));
  }
  res.p_hit = static_cast<double>(res.hits) / replicates;
  res.std_error = std::sqrt(res.p_hit * (1.0 - res.p_hit) / replicates);
  return res;
}

ExcursionFit excursion_fit(const KernelModel& kernel, const std::vector<double>& levels,
                           const Box2& region, long replicates, std::uint64_t seed) {
  if (levels.size() < 3) fail(ErrorCode::kInvalidArgument, "need at least three levels");
  if (kernel.family() != KernelFamily::kBargmannFock) {
    fail(ErrorCode::kUnsupported, "excursion fit uses the Bargmann-Fock series sampler");
  }
  if (replicates < 1) fail(ErrorCode::kInvalidArgument, "replicates must be >= 1");
  const int d = kernel.dim();
  ExcursionFit fit;
  fit.volume = region.area();
  fit.replicates = replicates;
  const double floor = *std::min_element(levels.begin(), levels.end());
  std::vector<long> exceed(levels.size(), 0);
  for (long r = 0; r < replicates; ++r) {
    const auto f = sample_bf_series(derive_seed(seed, {kExcursionTag, static_cast<std::uint64_t>(r)}), region);
    const double m = field_maximum(f, region, floor);
    for (std::size_t i = 0; i < levels.size(); ++i) exceed[i] += m > levels[i];
  }
  auto log_shape = [&](double u) {
    return std::log(fit.volume) + (d - 1) * std::log(u) + std::log(0.5 * std::erfc(u / std::sqrt(2.0)));
  };
  double acc = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    ExcursionLevel lv;
    lv.u = levels[i];
    lv.exceed = exceed[i];
    lv.p_hat = static_cast<double>(exceed[i]) / replicates;
    if (exceed[i] == 0) {
      fit.warnings.push_back("level " + std::to_string(levels[i]) + " dropped: no exceedances");
    } else {
      lv.used = true;
      acc += std::log(lv.p_hat) - log_shape(lv.u);
      ++used;
    }
    fit.levels.push_back(lv);
  }
  if (used == 0) fail(ErrorCode::kNumerical, "no level has exceedances; cannot fit");
  const double log_c = acc / used;
  fit.c = std::exp(log_c);
  for (auto& lv : fit.levels) {
    if (lv.used) lv.residual = std::log(lv.p_hat) - (log_c + log_shape(lv.u));
  }
  return fit;
}

std::vector<CaptureRate> grid_capture_rate(const KernelModel& kernel, double u,
                                           const std::vector<double>& grid_factors,
                                           const Box2& region, long replicates,
                                           std::uint64_t seed) {
  if (grid_factors.size() < 2) fail(ErrorCode::kInvalidArgument, "need at least two grid factors");
  if (kernel.family() != KernelFamily::kBargmannFock) {
    fail(ErrorCode::kUnsupported, "capture rate uses the Bargmann-Fock series sampler");
  }
  std::vector<CaptureRate> out;
  for (double b : grid_factors) {
    if (!(b > 0.0)) fail(ErrorCode::kInvalidArgument, "grid factors must be > 0");
    out.push_back({b, 0, 0, 0.0});
  }
  const double fine = std::min(0.25, *std::min_element(grid_factors.begin(), grid_factors.end()));
  for (long r = 0; r < replicates; ++r) {
    const auto f = sample_bf_series(derive_seed(seed, {kCaptureTag, static_cast<std::uint64_t>(r)}), region);
    const double m = field_maximum(f, region, u, fine);
    if (!(m > u)) continue;
    for (auto& c : out) {
      ++c.exceed;
      const GridSpec spec = GridSpec::anchored(region, c.grid_factor / u);
      const double lattice_max = spec.nx > 0 && spec.ny > 0 ? f.values_on(spec).maxCoeff()
                                                            : -std::numeric_limits<double>::infinity();
      c.misses += lattice_max <= u;
    }
  }
  for (auto& c : out) c.miss_fraction = static_cast<double>(c.misses) / replicates;
  return out;
}

double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::kInvalidArgument, "empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  const double na = a.size(), nb = b.size();
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    dmax = std::max(dmax, std::abs(i / na - j / nb));
  }
  return dmax;
}

KsResult ks_test_normal(std::vector<double> sample) {
  if (sample.empty()) fail(ErrorCode::kInvalidArgument, "empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = sample.size();
  double dmax = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-sample[i] / std::sqrt(2.0));
    dmax = std::max({dmax, (i + 1) / n - cdf, cdf - i / n});
  }
  const double sn = std::sqrt(n);
  return {dmax, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * dmax)};
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::kInvalidArgument, "need two or more (x, y) pairs");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) fail(ErrorCode::kInvalidArgument, "x values are all equal");
  return sxy / sxx;
}

}  // namespace gpmax
