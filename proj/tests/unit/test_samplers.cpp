#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gpmax/bessel.hpp"
#include "gpmax/field.hpp"
#include "gpmax/rng.hpp"

using namespace gpmax;

namespace {

struct Moments {
  double cov = 0, se = 0;
};

// Sample covariance of paired draws and its standard error.
Moments covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  std::vector<double> prod(a.size());
  double c = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    prod[i] = (a[i] - ma) * (b[i] - mb);
    c += prod[i];
  }
  c /= n - 1;
  double v = 0;
  for (double p : prod) v += (p - c) * (p - c);
  return {c, std::sqrt(v / (n - 1) / n)};
}

}  // namespace

TEST_CASE("BF series: truncation and determinism") {
  const Box2 box{-3, 5, -2, 4};
  const auto f = sample_bf_series(77, box);
  CHECK(f.truncation_error_bound() <= 1e-10);
  CHECK(f.truncation() == bf_required_degree(box, 1e-10));
  const auto g = sample_bf_series(77, box);
  for (double x : {-2.5, 0.0, 1.3, 4.9})
    for (double y : {-1.0, 0.7, 3.9}) CHECK(f.value({x, y}) == g.value({x, y}));
  const auto h = sample_bf_series(78, box);
  CHECK(f.value({0.5, 0.5}) != h.value({0.5, 0.5}));
}

TEST_CASE("BF series: derivatives match finite differences") {
  const auto f = sample_bf_series(5, Box2::centered(8));
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> pos(-3.5, 3.5);
  const double h = 1e-5;
  for (int i = 0; i < 50; ++i) {
    const Vec2 x{pos(gen), pos(gen)};
    const Jet2 j = f.jet(x, 3);
    for (int d = 0; d < 2; ++d) {
      const Vec2 e = Vec2::Unit(d) * h;
      const Jet2 jp = f.jet(x + e, 2), jm = f.jet(x - e, 2);
      const double g = (jp.value - jm.value) / (2 * h);
      CHECK(std::abs(g - j.grad(d)) <= 1e-6 * std::max(1.0, std::abs(j.grad(d))));
      const Vec2 hg = (jp.grad - jm.grad) / (2 * h);
      for (int k = 0; k < 2; ++k)
        CHECK(std::abs(hg(k) - j.hess(d, k)) <= 1e-6 * std::max(1.0, std::abs(j.hess(d, k))));
    }
    // Third derivatives from Hessian differences.
    const Vec2 ex{h, 0};
    const Mat2 dh = (f.jet(x + ex, 2).hess - f.jet(x - ex, 2).hess) / (2 * h);
    CHECK(std::abs(dh(0, 0) - j.third[0]) <= 1e-5 * std::max(1.0, std::abs(j.third[0])));
    CHECK(std::abs(dh(0, 1) - j.third[1]) <= 1e-5 * std::max(1.0, std::abs(j.third[1])));
    CHECK(std::abs(dh(1, 1) - j.third[2]) <= 1e-5 * std::max(1.0, std::abs(j.third[2])));
  }
}

TEST_CASE("BF series: grid values equal pointwise values") {
  const auto f = sample_bf_series(9, Box2::centered(6));
  const auto spec = GridSpec::anchored(Box2::centered(6), 0.37);
  const auto v = f.values_on(spec);
  for (int i = 0; i < spec.nx; i += 3)
    for (int j = 0; j < spec.ny; j += 2)
      CHECK(v(i, j) == doctest::Approx(f.value(spec.point(i, j))).epsilon(1e-12).scale(1));
}

TEST_CASE("BF series: unit variance, Gaussian covariance, isotropy") {
  const int n = 4000;
  std::vector<double> a(n), b(n), c(n), d(n);
  const Vec2 p{0.3, -0.2}, q = p + Vec2{1, 0};
  const Vec2 q_rot = p + Vec2{std::cos(1.1), std::sin(1.1)};
  for (int s = 0; s < n; ++s) {
    const auto f = sample_bf_series(derive_seed(100, {std::uint64_t(s)}), Box2::centered(3));
    a[s] = f.value(p);
    b[s] = f.value(q);
    c[s] = f.value(q_rot);
    d[s] = f.value({1.2, 1.4});
  }
  const auto var = covariance(d, d);
  CHECK(std::abs(var.cov - 1.0) <= 3 * var.se);
  const auto m = covariance(a, b);
  CHECK(std::abs(m.cov - std::exp(-0.5)) <= 3 * m.se);
  const auto r = covariance(a, c);
  CHECK(std::abs(r.cov - std::exp(-0.5)) <= 3 * r.se);
}

TEST_CASE("RPW Bessel series: Helmholtz equation and covariance") {
  const auto f = sample_rpw_bessel(3, 10.0);
  CHECK(f.truncation_error_bound() <= 1e-10);
  CHECK(f.domain().x1 == 10.0);
  for (double x : {-7.0, 0.0, 2.5, 9.0}) {
    const Jet2 j = f.jet({x, 0.3 * x}, 2);
    CHECK(std::abs(j.hess.trace() + j.value) < 1e-8);
  }
  const int n = 4000;
  std::vector<double> a(n), b(n), z(n), o(n);
  for (int s = 0; s < n; ++s) {
    const auto g = sample_rpw_bessel(derive_seed(200, {std::uint64_t(s)}), 3.0);
    a[s] = g.value({0.5, 0.5});
    b[s] = g.value({0.5, 1.5});
    z[s] = g.value({0.5 + 2.404825557695773 / std::sqrt(2.0), 0.5 + 2.404825557695773 / std::sqrt(2.0)});
    o[s] = g.value({0, 0});
  }
  const auto c1 = covariance(a, b);
  CHECK(std::abs(c1.cov - bessel::j(0, 1.0)) <= 3 * c1.se);
  const auto c0 = covariance(a, z);
  CHECK(std::abs(c0.cov) <= 3 * c0.se);
  const auto v = covariance(o, o);
  CHECK(std::abs(v.cov - 1.0) <= 3 * v.se);
}

TEST_CASE("circulant grid: lag covariance, determinism, error bound") {
  const auto bf = KernelModel::bargmann_fock(2);
  const double h = 0.5;
  const GridSpec spec{0, 0, h, 128, 128};
  CirculantOptions opts;
  opts.pad_length = 7.0;
  const CirculantEmbedding emb(bf, spec, opts);
  CHECK(emb.error_bound() <= 1e-10);
  const auto [g1, g2] = emb.draw_pair(4);
  const auto [g3, g4] = emb.draw_pair(4);
  CHECK(g1.values == g3.values);
  CHECK(g2.values == g4.values);
  // Lag-1 covariance, averaged over 40 draws; blocks of sites 4 apart are
  // nearly independent, used for the standard error.
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pair = emb.draw_pair(derive_seed(300, {s}));
    for (const auto* g : {&pair.first, &pair.second})
      for (int i = 0; i + 1 < 128; i += 8)
        for (int j = 0; j < 128; j += 8) {
          a.push_back(g->values(i, j));
          b.push_back(g->values(i + 1, j));
        }
  }
  const auto m = covariance(a, b);
  CHECK(std::abs(m.cov - std::exp(-h * h / 2)) <= 3 * m.se);
  const auto pure = sample_stationary_grid(bf, spec, 4, opts);
  CHECK(pure.grid().values == g1.values);
}

TEST_CASE("circulant grid: narrow kernel gives nearly independent sites") {
  const double len = 0.05;
  const auto k = KernelModel::from_id("gaussian", 2, std::span<const double>(&len, 1));
  const GridSpec spec{0, 0, 0.5, 64, 64};
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto f = sample_stationary_grid(k, spec, s);
    for (int i = 0; i + 1 < 64; i += 2)
      for (int j = 0; j < 64; ++j) {
        a.push_back(f.grid().values(i, j));
        b.push_back(f.grid().values(i + 1, j));
      }
  }
  const auto m = covariance(a, b);
  CHECK(std::abs(m.cov) <= 3 * m.se);
  const auto v = covariance(a, a);
  CHECK(std::abs(v.cov - 1.0) <= 3 * v.se);
}

TEST_CASE("block-independent field") {
  const auto bf = KernelModel::bargmann_fock(2);
  const Box2 dom{0, 7, 0, 3};
  // Blocks [0,3] and [4,7] with a gap of 1.
  const auto f = sample_block_independent(bf, 3.0, 1.0, dom, 1);
  CHECK(f.supports({1, 1}));
  CHECK_FALSE(f.supports({3.5, 1}));
  const int n = 3000;
  std::vector<double> a(n), b(n), c(n);
  for (int s = 0; s < n; ++s) {
    const auto g = sample_block_independent(bf, 3.0, 1.0, dom, derive_seed(400, {std::uint64_t(s)}));
    a[s] = g.value({2.5, 1.5});
    b[s] = g.value({4.5, 1.5});
    c[s] = g.value({1.5, 1.5});
  }
  const auto across = covariance(a, b);
  CHECK(std::abs(across.cov) <= 3 * across.se);
  const auto within = covariance(a, c);
  CHECK(std::abs(within.cov - std::exp(-0.5)) <= 3 * within.se);
  // One block covering the domain is the plain series sampler.
  const auto single = sample_block_independent(bf, 3.0, 1.0, Box2{0, 3, 0, 3}, 8);
  CHECK(single.truncation() == sample_bf_series(8, Box2{0, 3, 0, 3}).truncation());
  CHECK(single.value({1, 2}) == sample_bf_series(8, Box2{0, 3, 0, 3}).value({1, 2}));
}
