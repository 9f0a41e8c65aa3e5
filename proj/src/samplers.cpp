#include <fftw3.h>

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <sstream>

#include "gpmax/bessel.hpp"
#include "gpmax/error.hpp"
#include "gpmax/field.hpp"
#include "gpmax/rng.hpp"
#include "gpmax/sampling_detail.hpp"

namespace gpmax {

namespace detail {

Band hermite_band(double t, int degree, int order) {
  Band band;
  constexpr double kNegligible = 1e-19;
  std::vector<double> up, down;  // phi_j for j >= j0 and j < j0
  int j0 = 0;
  double phi0 = 1.0;
  if (t != 0.0) {
    j0 = static_cast<int>(std::min<double>(std::llround(t * t), degree));
    const double logphi =
        -0.5 * t * t + j0 * std::log(std::abs(t)) - 0.5 * std::lgamma(j0 + 1.0);
    phi0 = std::exp(logphi);
    if (t < 0.0 && (j0 % 2 == 1)) phi0 = -phi0;
  }
  // Walk up until negligible, then `order + 1` further terms so the
  // derivative recurrences see their neighbours.
  {
    double phi = phi0;
    int extra = -1;
    for (int j = j0; j <= degree; ++j) {
      if (j > j0) phi *= t / std::sqrt(static_cast<double>(j));
      up.push_back(phi);
      if (extra < 0 && std::abs(phi) < kNegligible && j >= j0 + order) extra = 0;
      if (extra >= 0 && ++extra > order + 1) break;
    }
  }
  if (t != 0.0) {
    double phi = phi0;
    int extra = -1;
    for (int j = j0; j >= 1; --j) {
      phi *= std::sqrt(static_cast<double>(j)) / t;  // phi_{j-1}
      down.push_back(phi);
      if (extra < 0 && std::abs(phi) < kNegligible) extra = 0;
      if (extra >= 0 && ++extra > order + 1) break;
    }
  }
  band.lo = j0 - static_cast<int>(down.size());
  band.hi = j0 + static_cast<int>(up.size()) - 1;
  const int len = band.hi - band.lo + 1;
  band.d.setZero(len, order + 1);
  for (std::size_t k = 0; k < down.size(); ++k) band.d(static_cast<int>(down.size() - 1 - k), 0) = down[k];
  for (std::size_t k = 0; k < up.size(); ++k) band.d(static_cast<int>(down.size() + k), 0) = up[k];
  // phi_j^(m) = sqrt(j) phi_{j-1}^(m-1) - t phi_j^(m-1) - (m-1) phi_j^(m-2)
  for (int m = 1; m <= order; ++m) {
    for (int r = 0; r < len; ++r) {
      const int j = band.lo + r;
      const double lower = (r > 0) ? band.d(r - 1, m - 1) : 0.0;
      double v = std::sqrt(static_cast<double>(j)) * lower - t * band.d(r, m - 1);
      if (m >= 2) v -= (m - 1) * band.d(r, m - 2);
      band.d(r, m) = v;
    }
  }
  return band;
}

}  // namespace detail

namespace {

constexpr std::uint64_t kBfTag = 0xBF5E41E5ull;
constexpr std::uint64_t kRpwTag = 0x12B4E55Eull;
constexpr std::uint64_t kCirculantTag = 0xC12C0ull;

std::uint64_t bf_stream(std::uint64_t block) { return derive_stream({kBfTag, block}); }

class BfSeriesEvaluator final : public FieldEvaluator {
 public:
  BfSeriesEvaluator(Vec2 center, Eigen::MatrixXd coef) : center_(center), coef_(std::move(coef)) {}

  int degree() const { return static_cast<int>(coef_.rows()) - 1; }

  Jet2 jet(const Vec2& x, int order) const override {
    const int n = degree();
    const auto bx = detail::hermite_band(x.x() - center_.x(), n, order);
    const auto by = detail::hermite_band(x.y() - center_.y(), n, order);
    const Eigen::MatrixXd t =
        coef_.block(bx.lo, by.lo, bx.d.rows(), by.d.rows()) * by.d;  // bx x (order+1)
    auto term = [&](int a, int b) { return bx.d.col(a).dot(t.col(b)); };
    Jet2 out;
    out.value = term(0, 0);
    if (order >= 1) out.grad = {term(1, 0), term(0, 1)};
    if (order >= 2) {
      out.hess(0, 0) = term(2, 0);
      out.hess(1, 1) = term(0, 2);
      out.hess(0, 1) = out.hess(1, 0) = term(1, 1);
    }
    if (order >= 3) out.third = {term(3, 0), term(2, 1), term(1, 2), term(0, 3)};
    return out;
  }

  double value(const Vec2& x) const override { return jet(x, 0).value; }

  Eigen::MatrixXd grid(const GridSpec& spec) const override {
    const int n = degree();
    Eigen::MatrixXd px = Eigen::MatrixXd::Zero(spec.nx, n + 1);
    Eigen::MatrixXd py = Eigen::MatrixXd::Zero(spec.ny, n + 1);
    std::vector<int> xlo(spec.nx), xhi(spec.nx), ylo(spec.ny), yhi(spec.ny);
    for (int i = 0; i < spec.nx; ++i) {
      const auto b = detail::hermite_band(spec.x0 + i * spec.h - center_.x(), n, 0);
      px.row(i).segment(b.lo, b.d.rows()) = b.d.col(0).transpose();
      xlo[i] = b.lo;
      xhi[i] = b.hi;
    }
    for (int j = 0; j < spec.ny; ++j) {
      const auto b = detail::hermite_band(spec.y0 + j * spec.h - center_.y(), n, 0);
      py.row(j).segment(b.lo, b.d.rows()) = b.d.col(0).transpose();
      ylo[j] = b.lo;
      yhi[j] = b.hi;
    }
    // Rows and columns of the basis matrices are banded; multiply chunk by
    // chunk over the union of the bands.
    constexpr int kChunk = 48;
    Eigen::MatrixXd out(spec.nx, spec.ny);
    for (int r0 = 0; r0 < spec.nx; r0 += kChunk) {
      const int rows = std::min(kChunk, spec.nx - r0);
      const int jlo = *std::min_element(xlo.begin() + r0, xlo.begin() + r0 + rows);
      const int jhi = *std::max_element(xhi.begin() + r0, xhi.begin() + r0 + rows);
      const Eigen::MatrixXd t =
          px.block(r0, jlo, rows, jhi - jlo + 1) * coef_.middleRows(jlo, jhi - jlo + 1);
      for (int c0 = 0; c0 < spec.ny; c0 += kChunk) {
        const int cols = std::min(kChunk, spec.ny - c0);
        const int klo = *std::min_element(ylo.begin() + c0, ylo.begin() + c0 + cols);
        const int khi = *std::max_element(yhi.begin() + c0, yhi.begin() + c0 + cols);
        out.block(r0, c0, rows, cols).noalias() =
            t.middleCols(klo, khi - klo + 1) * py.block(c0, klo, cols, khi - klo + 1).transpose();
      }
    }
    return out;
  }

 private:
  Vec2 center_;
  Eigen::MatrixXd coef_;
};

double bf_deficit(const Box2& domain, int degree) {
  const double hx = 0.5 * domain.width();
  const double hy = 0.5 * domain.height();
  auto tail = [degree](double half) {
    if (half == 0.0) return 0.0;
    return boost::math::gamma_p(static_cast<double>(degree) + 1.0, half * half);  // P(Pois > N)
  };
  const double pa = tail(hx);
  const double pb = tail(hy);
  return pa + pb - pa * pb;
}

std::shared_ptr<BfSeriesEvaluator> make_bf(std::uint64_t seed, std::uint64_t stream,
                                           const Box2& domain, int degree) {
  Eigen::MatrixXd coef(degree + 1, degree + 1);
  std::vector<double> row(static_cast<std::size_t>(degree) + 1);
  for (int j = 0; j <= degree; ++j) {
    fill_normals(seed, stream, static_cast<std::uint64_t>(j) << 32, row);
    for (int k = 0; k <= degree; ++k) coef(j, k) = row[k];
  }
  return std::make_shared<BfSeriesEvaluator>(domain.center(), std::move(coef));
}

void check_box(const Box2& domain) {
  if (!(domain.x1 > domain.x0) || !(domain.y1 > domain.y0) || !std::isfinite(domain.area())) {
    fail(ErrorCode::kInvalidArgument, "domain must be a bounded box with positive area");
  }
}

// ---------------------------------------------------------------------------
// Random plane wave

// K^{ab}_s: d_x^a d_y^b W_n = sum_s K^{ab}_s W_{n+s}, from
// d_x = (D+ + D-)/2, d_y = (D+ - D-)/(2i), D+ W_n = -W_{n+1}, D- W_n = W_{n-1}.
struct LadderTable {
  // index [a][b][s + 3]
  std::complex<double> k[4][4][7]{};

  LadderTable() {
    using C = std::complex<double>;
    for (int a = 0; a <= 3; ++a) {
      for (int b = 0; a + b <= 3; ++b) {
        // polynomial in (P, Q): coef[p][q]
        C poly[4][4]{};
        poly[0][0] = 1.0;
        auto multiply = [&](C cp, C cq) {
          C next[4][4]{};
          for (int p = 0; p < 4; ++p)
            for (int q = 0; q < 4; ++q) {
              if (poly[p][q] == C(0.0)) continue;
              if (p + 1 < 4) next[p + 1][q] += poly[p][q] * cp;
              if (q + 1 < 4) next[p][q + 1] += poly[p][q] * cq;
            }
          std::copy(&next[0][0], &next[0][0] + 16, &poly[0][0]);
        };
        for (int i = 0; i < a; ++i) multiply(0.5, 0.5);
        for (int i = 0; i < b; ++i) multiply(C(0.0, -0.5), C(0.0, 0.5));
        for (int p = 0; p < 4; ++p)
          for (int q = 0; q < 4; ++q) {
            const double sign = (p % 2 == 0) ? 1.0 : -1.0;
            k[a][b][p - q + 3] += sign * poly[p][q];
          }
      }
    }
  }
};

const LadderTable& ladder() {
  static const LadderTable table;
  return table;
}

class RpwBesselEvaluator final : public FieldEvaluator {
 public:
  explicit RpwBesselEvaluator(std::vector<std::complex<double>> coef) : coef_(std::move(coef)) {}

  Jet2 jet(const Vec2& x, int order) const override {
    using C = std::complex<double>;
    const int n = static_cast<int>(coef_.size()) - 1;
    const double r = x.norm();
    const int mmax = n + order;
    const auto jv = bessel::j_sequence(mmax, r);
    const C z = (r > 0.0) ? C(x.x() / r, x.y() / r) : C(1.0, 0.0);
    // W_m for m in [-order, n + order]
    std::vector<C> w(static_cast<std::size_t>(mmax + order + 1));
    C zp(1.0, 0.0);
    for (int m = 0; m <= mmax; ++m) {
      w[m + order] = jv[m] * zp;
      if (m >= 1 && m <= order) {
        const double sign = (m % 2 == 0) ? 1.0 : -1.0;
        w[order - m] = sign * jv[m] * std::conj(zp);
      }
      zp *= z;
    }
    C s[7]{};
    for (int shift = -order; shift <= order; ++shift) {
      C acc(0.0, 0.0);
      for (int k = 0; k <= n; ++k) acc += coef_[k] * w[k + shift + order];
      s[shift + 3] = acc;
    }
    const auto& table = ladder();
    auto deriv = [&](int a, int b) {
      C acc(0.0, 0.0);
      for (int shift = -(a + b); shift <= a + b; ++shift) acc += table.k[a][b][shift + 3] * s[shift + 3];
      return acc.real();
    };
    Jet2 out;
    out.value = s[3].real();
    if (order >= 1) out.grad = {deriv(1, 0), deriv(0, 1)};
    if (order >= 2) {
      out.hess(0, 0) = deriv(2, 0);
      out.hess(1, 1) = deriv(0, 2);
      out.hess(0, 1) = out.hess(1, 0) = deriv(1, 1);
    }
    if (order >= 3) out.third = {deriv(3, 0), deriv(2, 1), deriv(1, 2), deriv(0, 3)};
    return out;
  }

 private:
  std::vector<std::complex<double>> coef_;
};

int rpw_required_order(double radius, double tolerance, int max_order) {
  // Deficit 2 sum_{n>N} J_n(r)^2 <= 2 sum_{n>N} ((r/2)^n / n!)^2 for every r <= radius.
  const double half = 0.5 * radius;
  const int floor_order = static_cast<int>(std::ceil(std::numbers::e * half));
  for (int order = 0; order <= max_order; ++order) {
    if (order < floor_order) continue;
    double tail = 0.0;
    for (int k = order + 1; k < order + 400; ++k) {
      const double logterm = 2.0 * (k * std::log(std::max(half, 1e-300)) - std::lgamma(k + 1.0));
      const double term = std::exp(logterm);
      tail += term;
      if (term < 1e-30 * std::max(tail, 1e-300)) break;
    }
    if (2.0 * tail <= tolerance) return order;
  }
  fail(ErrorCode::kDomain, "random plane wave: radius " + std::to_string(radius) +
                               " needs a Bessel order above the configured maximum " +
                               std::to_string(max_order));
}

// ---------------------------------------------------------------------------
// Block-independent field

class BlockEvaluator final : public FieldEvaluator {
 public:
  struct Block {
    Box2 box;
    std::shared_ptr<const FieldEvaluator> eval;
  };
  BlockEvaluator(std::vector<Block> blocks, double pitch, Box2 domain, int nbx, int nby)
      : blocks_(std::move(blocks)), pitch_(pitch), domain_(domain), nbx_(nbx), nby_(nby) {}

  const Block* locate(const Vec2& x) const {
    if (!domain_.contains(x)) return nullptr;
    const int i = std::clamp(static_cast<int>(std::floor((x.x() - domain_.x0) / pitch_)), 0, nbx_ - 1);
    const int j = std::clamp(static_cast<int>(std::floor((x.y() - domain_.y0) / pitch_)), 0, nby_ - 1);
    const Block& b = blocks_[static_cast<std::size_t>(i) * nby_ + j];
    return b.box.contains(x) ? &b : nullptr;
  }

  bool supports(const Vec2& x) const override { return locate(x) != nullptr; }

  Jet2 jet(const Vec2& x, int order) const override {
    const Block* b = locate(x);
    if (!b) {
      Jet2 nan;
      nan.value = std::numeric_limits<double>::quiet_NaN();
      return nan;
    }
    return b->eval->jet(x, order);
  }

  Eigen::MatrixXd grid(const GridSpec& spec) const override {
    Eigen::MatrixXd out =
        Eigen::MatrixXd::Constant(spec.nx, spec.ny, std::numeric_limits<double>::quiet_NaN());
    for (const Block& b : blocks_) {
      const double eps = 1e-12 * spec.h;
      const int i0 = std::max(0, static_cast<int>(std::ceil((b.box.x0 - spec.x0) / spec.h - eps)));
      const int i1 = std::min(spec.nx - 1, static_cast<int>(std::floor((b.box.x1 - spec.x0) / spec.h + eps)));
      const int j0 = std::max(0, static_cast<int>(std::ceil((b.box.y0 - spec.y0) / spec.h - eps)));
      const int j1 = std::min(spec.ny - 1, static_cast<int>(std::floor((b.box.y1 - spec.y0) / spec.h + eps)));
      if (i1 < i0 || j1 < j0) continue;
      GridSpec sub{spec.x0 + i0 * spec.h, spec.y0 + j0 * spec.h, spec.h, i1 - i0 + 1, j1 - j0 + 1};
      out.block(i0, j0, sub.nx, sub.ny) = b.eval->grid(sub);
    }
    return out;
  }

 private:
  std::vector<Block> blocks_;
  double pitch_;
  Box2 domain_;
  int nbx_, nby_;
};

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

int fft_friendly(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int p : {2, 3, 5, 7}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

}  // namespace

int bf_required_degree(const Box2& domain, double tolerance) {
  if (!(tolerance > 0.0)) fail(ErrorCode::kInvalidArgument, "tolerance must be > 0");
  const double half = 0.5 * std::max(domain.width(), domain.height());
  int lo = 0;
  int hi = static_cast<int>(half * half + 40.0 * half + 60.0);
  while (bf_deficit(domain, hi) > tolerance) hi *= 2;
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    if (bf_deficit(domain, mid) <= tolerance) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

FieldRealization sample_bf_series(std::uint64_t seed, const Box2& domain, SeriesOptions opts) {
  check_box(domain);
  const int degree = bf_required_degree(domain, opts.tolerance);
  if (degree > opts.max_degree) {
    fail(ErrorCode::kDomain, "Bargmann-Fock series: domain needs degree N = " +
                                 std::to_string(degree) + " > configured maximum " +
                                 std::to_string(opts.max_degree) + " for tolerance " +
                                 std::to_string(opts.tolerance));
  }
  auto eval = make_bf(seed, bf_stream(0), domain, degree);
  return FieldRealization(KernelModel::bargmann_fock(2), SamplerKind::kBargmannFockSeries, seed,
                          domain, degree, bf_deficit(domain, degree), std::move(eval));
}

FieldRealization sample_rpw_bessel(std::uint64_t seed, double disk_radius, SeriesOptions opts) {
  if (!(disk_radius > 0.0)) fail(ErrorCode::kInvalidArgument, "disk radius must be > 0");
  const double cover = disk_radius * std::numbers::sqrt2;
  const int order = rpw_required_order(cover, opts.tolerance, opts.max_degree);
  std::vector<double> ab(2 * (static_cast<std::size_t>(order) + 1));
  fill_normals(seed, derive_stream({kRpwTag, 0}), 0, ab);
  std::vector<std::complex<double>> coef(static_cast<std::size_t>(order) + 1);
  coef[0] = ab[0];
  for (int n = 1; n <= order; ++n) {
    coef[n] = std::numbers::sqrt2 * std::complex<double>(ab[2 * n], -ab[2 * n + 1]);
  }
  double bound = 0.0;
  {
    const double half = 0.5 * cover;
    for (int k = order + 1; k < order + 400; ++k) {
      bound += 2.0 * std::exp(2.0 * (k * std::log(half) - std::lgamma(k + 1.0)));
    }
  }
  const Box2 domain{-disk_radius, disk_radius, -disk_radius, disk_radius};
  return FieldRealization(KernelModel::random_plane_wave(), SamplerKind::kPlaneWaveBessel, seed,
                          domain, order, bound, std::make_shared<RpwBesselEvaluator>(std::move(coef)));
}

FieldRealization sample_block_independent(const KernelModel& kernel, double block_side, double gap,
                                          const Box2& domain, std::uint64_t seed,
                                          SeriesOptions opts) {
  check_box(domain);
  if (!(block_side > 0.0)) fail(ErrorCode::kInvalidArgument, "block side must be > 0");
  if (!(gap >= 0.0)) fail(ErrorCode::kInvalidArgument, "gap must be >= 0");
  if (kernel.family() != KernelFamily::kBargmannFock) {
    fail(ErrorCode::kUnsupported, "block-independent field needs the Bargmann-Fock series sampler");
  }
  const double pitch = block_side + gap;
  const int nbx = std::max(1, static_cast<int>(std::ceil((domain.width() + gap) / pitch - 1e-12)));
  const int nby = std::max(1, static_cast<int>(std::ceil((domain.height() + gap) / pitch - 1e-12)));
  std::vector<BlockEvaluator::Block> blocks;
  blocks.reserve(static_cast<std::size_t>(nbx) * nby);
  int max_degree = 0;
  double bound = 0.0;
  for (int i = 0; i < nbx; ++i) {
    for (int j = 0; j < nby; ++j) {
      Box2 box{domain.x0 + i * pitch, std::min(domain.x1, domain.x0 + i * pitch + block_side),
               domain.y0 + j * pitch, std::min(domain.y1, domain.y0 + j * pitch + block_side)};
      const int degree = bf_required_degree(box, opts.tolerance);
      if (degree > opts.max_degree) {
        fail(ErrorCode::kDomain, "block needs series degree " + std::to_string(degree));
      }
      max_degree = std::max(max_degree, degree);
      bound = std::max(bound, bf_deficit(box, degree));
      const std::uint64_t index = static_cast<std::uint64_t>(i) * nby + j;
      blocks.push_back({box, make_bf(seed, bf_stream(index), box, degree)});
    }
  }
  if (blocks.size() == 1) {
    // Same stream, centre and degree as sample_bf_series on this domain.
    return FieldRealization(kernel, SamplerKind::kBlockIndependent, seed, domain, max_degree, bound,
                            blocks.front().eval);
  }
  return FieldRealization(kernel, SamplerKind::kBlockIndependent, seed, domain, max_degree, bound,
                          std::make_shared<BlockEvaluator>(std::move(blocks), pitch, domain, nbx, nby));
}

// ---------------------------------------------------------------------------
// Circulant embedding

struct CirculantEmbedding::State {
  int nx = 0, ny = 0, mx = 0, my = 0;
  GridSpec spec;
  std::vector<double> sqrt_eig;  // sqrt(lambda / (mx my)), row-major mx x my
  double bound = 0.0;
  fftw_plan plan = nullptr;
  KernelModel kernel;

  explicit State(KernelModel k) : kernel(std::move(k)) {}
  ~State() {
    if (plan) {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
  }
};

CirculantEmbedding::CirculantEmbedding(const KernelModel& kernel, const GridSpec& grid,
                                       CirculantOptions opts)
    : state_(std::make_shared<State>(kernel)) {
  if (kernel.dim() != 2) fail(ErrorCode::kUnsupported, "grid sampler is two-dimensional");
  if (grid.nx < 1 || grid.ny < 1 || !(grid.h > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "grid sampler: empty grid or non-positive spacing");
  }
  State& s = *state_;
  s.spec = grid;
  s.nx = grid.nx;
  s.ny = grid.ny;
  auto embed = [&](int n) {
    if (opts.pad_length < 0.0) return fft_friendly(std::max(2 * (n - 1), 1));
    const int pad = static_cast<int>(std::ceil(opts.pad_length / grid.h));
    return fft_friendly(std::max(n + pad, 1));
  };
  s.mx = embed(s.nx);
  s.my = embed(s.ny);
  const std::size_t total = static_cast<std::size_t>(s.mx) * s.my;

  auto wrapped = [](int i, int m) { return (2 * i <= m) ? i : i - m; };
  fftw_complex* buf = fftw_alloc_complex(total);
  for (int i = 0; i < s.mx; ++i) {
    for (int j = 0; j < s.my; ++j) {
      const double c = kernel.eval2(grid.h * wrapped(i, s.mx), grid.h * wrapped(j, s.my), 0, 0);
      buf[static_cast<std::size_t>(i) * s.my + j][0] = c;
      buf[static_cast<std::size_t>(i) * s.my + j][1] = 0.0;
    }
  }
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    s.plan = fftw_plan_dft_2d(s.mx, s.my, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(s.plan);
  double max_eig = 0.0, neg_mass = 0.0, min_eig = 0.0;
  s.sqrt_eig.resize(total);
  for (std::size_t k = 0; k < total; ++k) {
    const double lam = buf[k][0];
    max_eig = std::max(max_eig, lam);
    min_eig = std::min(min_eig, lam);
    if (lam < 0.0) neg_mass += -lam;
    s.sqrt_eig[k] = std::sqrt(std::max(lam, 0.0) / static_cast<double>(total));
  }
  fftw_free(buf);
  if (min_eig < -opts.tolerance * std::max(max_eig, 1.0)) {
    std::ostringstream msg;
    msg << "circulant embedding has negative eigenvalue " << min_eig
        << "; increase the padding (pad_length) or grid size";
    fail(ErrorCode::kNumerical, msg.str());
  }
  // Covariance error: clipped negative spectrum plus lags misrepresented by
  // wrapping when the embedding is shorter than 2(n-1).
  double lag_error = 0.0;
  const bool short_x = s.mx < 2 * (s.nx - 1);
  const bool short_y = s.my < 2 * (s.ny - 1);
  if (short_x || short_y) {
    for (int lx = 0; lx < s.nx; ++lx) {
      for (int ly = 0; ly < s.ny; ++ly) {
        const bool bad_x = 2 * lx > s.mx;
        const bool bad_y = 2 * ly > s.my;
        if (!bad_x && !bad_y) continue;
        for (int sy : {1, -1}) {
          const double exact = kernel.eval2(grid.h * lx, grid.h * sy * ly, 0, 0);
          const double torus = kernel.eval2(grid.h * wrapped(lx, s.mx),
                                            grid.h * sy * wrapped(ly, s.my), 0, 0);
          lag_error = std::max(lag_error, std::abs(exact - torus));
        }
      }
    }
  }
  s.bound = lag_error + neg_mass / static_cast<double>(total);
  if (s.bound > opts.tolerance) {
    std::ostringstream msg;
    msg << "circulant embedding covariance error " << s.bound << " exceeds tolerance "
        << opts.tolerance << "; increase the padding";
    fail(ErrorCode::kNumerical, msg.str());
  }
}

double CirculantEmbedding::error_bound() const { return state_->bound; }
std::pair<int, int> CirculantEmbedding::embedding_size() const { return {state_->mx, state_->my}; }

std::pair<GridValues, GridValues> CirculantEmbedding::draw_pair(std::uint64_t seed) const {
  const State& s = *state_;
  const std::size_t total = static_cast<std::size_t>(s.mx) * s.my;
  std::vector<double> noise(2 * total);
  fill_normals(seed, derive_stream({kCirculantTag, 0}), 0, noise);
  fftw_complex* buf = fftw_alloc_complex(total);
  for (std::size_t k = 0; k < total; ++k) {
    buf[k][0] = s.sqrt_eig[k] * noise[2 * k];
    buf[k][1] = s.sqrt_eig[k] * noise[2 * k + 1];
  }
  fftw_execute_dft(s.plan, buf, buf);
  GridValues re{s.spec, Eigen::MatrixXd(s.nx, s.ny)};
  GridValues im{s.spec, Eigen::MatrixXd(s.nx, s.ny)};
  for (int i = 0; i < s.nx; ++i) {
    for (int j = 0; j < s.ny; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * s.my + j;
      re.values(i, j) = buf[k][0];
      im.values(i, j) = buf[k][1];
    }
  }
  fftw_free(buf);
  return {std::move(re), std::move(im)};
}

std::pair<FieldRealization, FieldRealization> sample_stationary_grid_pair(
    const KernelModel& kernel, const GridSpec& grid, std::uint64_t seed, CirculantOptions opts) {
  const CirculantEmbedding embedding(kernel, grid, opts);
  auto [re, im] = embedding.draw_pair(seed);
  return {FieldRealization(kernel, seed, std::move(re), embedding.error_bound()),
          FieldRealization(kernel, seed, std::move(im), embedding.error_bound())};
}

FieldRealization sample_stationary_grid(const KernelModel& kernel, const GridSpec& grid,
                                        std::uint64_t seed, CirculantOptions opts) {
  return sample_stationary_grid_pair(kernel, grid, seed, opts).first;
}

}  // namespace gpmax
