#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gpmax/critpoints.hpp"
#include "gpmax/diagnostics.hpp"
#include "gpmax/palm.hpp"
#include "gpmax/rng.hpp"

using namespace gpmax;

namespace {

// Residual covariance of the BF field after regressing out the 2-jet at 0,
// derived by hand from the jet cross-covariances.
double bf_residual_cov(const Vec2& p, const Vec2& q) {
  const double x1 = p.x(), y1 = p.y(), x2 = q.x(), y2 = q.y();
  const double a = x1 * x2, b = y1 * y2;
  return std::exp(-0.5 * (p - q).squaredNorm()) -
         std::exp(-0.5 * (p.squaredNorm() + q.squaredNorm())) *
             (1 + a + b + 0.5 * a * a + 0.5 * b * b + a * b);
}

Mat2 random_negdef(std::mt19937_64& gen) {
  std::normal_distribution<double> z;
  Mat2 m;
  m << z(gen), z(gen), z(gen), z(gen);
  return -(m * m.transpose() + 0.1 * Mat2::Identity());
}

}  // namespace

TEST_CASE("regression weights reproduce the conditioned jet") {
  const RegressionWeights w(KernelModel::bargmann_fock(2));
  CHECK(w.a({0, 0}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(w.b({0, 0}).norm() < 1e-14);
  CHECK(std::abs(w.a({10, 0})) < 1e-20);
  CHECK(w.b({0, 10}).norm() < 1e-20);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    const double xi = 3 + std::abs(z(gen));
    const Mat2 zm = random_negdef(gen);
    const Jet2 j = w.mean_jet({0, 0}, xi, zm, 2);
    CHECK(j.value == doctest::Approx(xi).epsilon(1e-12));
    CHECK(j.grad.norm() < 1e-12);
    CHECK((j.hess - zm).norm() < 1e-10);
    // Finite differences of the value alone.
    auto v = [&](double x, double y) { return w.mean_jet({x, y}, xi, zm, 0).value; };
    const double fxx = (v(h, 0) - 2 * v(0, 0) + v(-h, 0)) / (h * h);
    const double fyy = (v(0, h) - 2 * v(0, 0) + v(0, -h)) / (h * h);
    const double fxy = (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4 * h * h);
    CHECK(std::abs(fxx - zm(0, 0)) < 1e-6 * std::max(1.0, std::abs(zm(0, 0))) * 10);
    CHECK(std::abs(fyy - zm(1, 1)) < 1e-6 * std::max(1.0, std::abs(zm(1, 1))) * 10);
    CHECK(std::abs(fxy - zm(0, 1)) < 1e-6 * std::max(1.0, std::abs(zm(0, 1))) * 10);
    CHECK(std::abs((v(h, 0) - v(-h, 0)) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("residual covariance") {
  const auto bf = KernelModel::bargmann_fock(2);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> pos(-3, 3);
  for (int i = 0; i < 20; ++i) {
    const Vec2 p{pos(gen), pos(gen)}, q{pos(gen), pos(gen)};
    CHECK(std::abs(conditional_cov(bf, p, q) - bf_residual_cov(p, q)) < 1e-10);
    CHECK(std::abs(conditional_cov(bf, {0, 0}, q)) <= 1e-14);
    const double c = conditional_cov(bf, p, p);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  CHECK(1.0 - conditional_cov(bf, {10, 0}, {10, 0}) < 1e-10);
  const auto rpw = KernelModel::random_plane_wave();
  for (int i = 0; i < 50; ++i) {
    const Vec2 p{pos(gen), pos(gen)}, q{pos(gen), pos(gen)};
    CHECK(conditional_cov(rpw, p, p) >= -1e-10);
    const double cpq = conditional_cov(rpw, p, q);
    CHECK(cpq * cpq <= conditional_cov(rpw, p, p) * conditional_cov(rpw, q, q) + 1e-10);
  }
}

TEST_CASE("q_u draws") {
  const auto bf = KernelModel::bargmann_fock(2);
  const auto draws = sample_qu(bf, 3.0, 2000, 7);
  for (const auto& d : draws) {
    CHECK(d.xi >= 3.0);
    CHECK(d.z(0, 0) < 0);
    CHECK(d.z.determinant() > 0);
    CHECK(d.ess > 100);
  }
  // Importance-weighted oracle for E[-tr Z] at u = 4: t from the tail by
  // rejection, Hess | t from its Gaussian conditional law.
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  std::exponential_distribution<double> ex(4.0);
  double wsum = 0, wtr = 0;
  long negdef = 0, total = 0;
  for (int i = 0; i < 100000; ++i) {
    double t;
    do t = 4.0 + ex(gen);
    while (std::uniform_real_distribution<double>()(gen) > std::exp(-0.5 * (t - 4) * (t - 4)));
    // Hess | f = t for the BF jet: mean (-t, -t, 0), covariance diag block [[2,0],[0,2]] and 1.
    const double h11 = -t + std::sqrt(2.0) * z(gen), h22 = -t + std::sqrt(2.0) * z(gen), h12 = z(gen);
    const double det = h11 * h22 - h12 * h12;
    ++total;
    if (h11 < 0 && det > 0) {
      ++negdef;
      wsum += det;
      wtr += det * -(h11 + h22);
    }
  }
  const double oracle = wtr / wsum;
  CHECK(oracle > 4.0);
  double mean = 0;
  long n = 0;
  for (std::uint64_t s = 0; s < 50; ++s)
    for (const auto& d : sample_qu(bf, 4.0, 2000, s)) {
      mean += -d.z.trace();
      ++n;
    }
  mean /= n;
  CHECK(mean > 4.0);
  CHECK(mean == doctest::Approx(oracle).epsilon(0.02));
  // At u = 5 almost every proposal is negative definite.
  long nd5 = 0;
  for (int i = 0; i < 20000; ++i) {
    double t;
    do t = 5.0 + ex(gen);
    while (std::uniform_real_distribution<double>()(gen) > std::exp(-0.5 * (t - 5) * (t - 5)));
    const double h11 = -t + std::sqrt(2.0) * z(gen), h22 = -t + std::sqrt(2.0) * z(gen), h12 = z(gen);
    nd5 += h11 < 0 && h11 * h22 - h12 * h12 > 0;
  }
  CHECK(nd5 / 20000.0 > 0.99);
  CHECK(negdef < total);
}

TEST_CASE("residual field") {
  const auto f = sample_bf_series(11, Box2::centered(6));
  const auto res = residualize(f);
  const Jet2 j = res->jet({0, 0}, 2);
  CHECK(std::abs(j.value) <= 1e-8);
  CHECK(j.grad.norm() <= 1e-8);
  CHECK(j.hess.norm() <= 1e-8);

  const int n = 10000;
  const std::vector<std::pair<Vec2, Vec2>> pairs{
      {{0.5, 0}, {0.5, 0}},   {{1, 1}, {1, 1}},     {{1, 0}, {0, 1}},   {{-1, 0.5}, {1.5, 0.2}},
      {{2, 0}, {2.5, 0}},     {{0.3, 0.3}, {-0.3, -0.3}}, {{2, 2}, {2, 2}}, {{0, 2}, {1, 2}},
      {{-1.5, -1}, {-1, -1.5}}, {{0.8, -0.4}, {0.2, 1.1}}};
  std::vector<std::vector<double>> a(pairs.size(), std::vector<double>(n)), b = a;
  std::vector<double> f0(n), res_far(n);
  for (int s = 0; s < n; ++s) {
    const auto g = sample_bf_series(derive_seed(900, {std::uint64_t(s)}), Box2::centered(6));
    const auto r = residualize(g);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      a[k][s] = r->value(pairs[k].first);
      b[k][s] = r->value(pairs[k].second);
    }
    f0[s] = g.value({0, 0});
    res_far[s] = r->value({1.0, 0.5});
  }
  const auto bf = KernelModel::bargmann_fock(2);
  auto moments = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (int s = 0; s < n; ++s) mx += x[s], my += y[s];
    mx /= n, my /= n;
    std::vector<double> p(n);
    double c = 0;
    for (int s = 0; s < n; ++s) c += p[s] = (x[s] - mx) * (y[s] - my);
    c /= n - 1;
    double v = 0;
    for (double e : p) v += (e - c) * (e - c);
    return std::pair{c, std::sqrt(v / (n - 1) / n)};
  };
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [c, se] = moments(a[k], b[k]);
    INFO("pair " << k);
    CHECK(std::abs(c - conditional_cov(bf, pairs[k].first, pairs[k].second)) <= 3 * se);
  }
  const auto [cross, cse] = moments(f0, res_far);
  CHECK(std::abs(cross) <= 3 * cse);
}

TEST_CASE("Palm coupling") {
  const auto f = sample_bf_series(21, Box2::centered(22));
  const auto pair = palm_couple(f, 4.0, 5);
  const Jet2 j = pair.f_tilde.jet({0, 0}, 2);
  CHECK(j.value == doctest::Approx(pair.draw.xi).epsilon(1e-12));
  CHECK(j.value >= 4.0);
  CHECK(j.grad.norm() <= 1e-8);
  CHECK((j.hess - pair.draw.z).norm() <= 1e-8);
  CHECK(pair.draw.z.determinant() > 0);
  CHECK(pair.draw.z(0, 0) < 0);
  const auto maxima = find_local_maxima(pair.f_tilde, 3.9, ScanOptions{0.25, 1e-9, 30, Box2::centered(1), 3});
  REQUIRE(maxima.size() == 1);
  CHECK(maxima[0].location.norm() < 1e-8);
  for (double ang = 0; ang < 6.28; ang += 0.5) {
    const Vec2 x = 10 * Vec2{std::cos(ang), std::sin(ang)};
    CHECK(std::abs(pair.f_tilde.value(x) - f.value(x)) < 1e-15);
  }
  CHECK_THROWS(palm_couple_monochromatic(f, 4.0, 5));
}

TEST_CASE("Palm coupling: far-field marginal is standard normal") {
  std::vector<double> v;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto f = sample_bf_series(derive_seed(1000, {s}), Box2{-1, 7, -1, 1});
    const auto pair = palm_couple(f, 3.0, derive_seed(1001, {s}), PalmOptions{256});
    v.push_back(pair.f_tilde.value({6, 0}));
  }
  CHECK(ks_test_normal(v).p_value > 0.01);
}

TEST_CASE("monochromatic Palm coupling") {
  const auto f = sample_rpw_bessel(4, 8.0);
  const auto pair = palm_couple_monochromatic(f, 2.0, 9);
  const Jet2 j = pair.f_tilde.jet({0, 0}, 2);
  CHECK(j.value == doctest::Approx(-pair.draw.z.trace()).epsilon(1e-12));
  CHECK(j.value >= 2.0);
  CHECK(j.grad.norm() <= 1e-8);
  CHECK(std::abs(j.hess.trace() + j.value) < 1e-8);
  CHECK_THROWS(palm_couple(f, 2.0, 9));
}

TEST_CASE("critical point flow") {
  const auto f = sample_bf_series(31, Box2::centered(16));
  const auto start = find_local_maxima(f, 0.0, ScanOptions{0.25, 1e-9, 30, Box2::centered(8), 3});
  REQUIRE(!start.empty());
  // f_tilde = f: nothing moves.
  const auto still = flow_critical_points(f.evaluator(), f.evaluator(), start[0], f.domain());
  CHECK(still.status == FlowStatus::kCompleted);
  for (const auto& s : still.trajectory) CHECK((s.x - start[0].location).norm() < 1e-12);

  const auto pair = palm_couple(f, 3.0, 2);
  int completed = 0;
  for (const auto& p : start) {
    const auto r = flow_critical_points(f.evaluator(), pair.f_tilde.evaluator(), p, f.domain());
    if (r.status != FlowStatus::kCompleted) {
      CHECK(!r.message.empty());
      continue;
    }
    ++completed;
    CHECK(r.trajectory.back().t == doctest::Approx(1.0));
    for (const auto& s : r.trajectory) {
      CHECK(s.grad_norm <= 1e-7);
      CHECK(s.morse_index == r.trajectory.front().morse_index);
    }
  }
  CHECK(completed > 0);
  CHECK(to_string(FlowStatus::kDegenerate) == "degenerate");
}

TEST_CASE("Palm count discrepancy is zero for identical fields") {
  const auto f = sample_bf_series(41, Box2::centered(20));
  PalmPair same{f, f, QuDraw{}, nullptr};
  const auto d = palm_count_discrepancy({same}, 2.5, 20.0);
  CHECK(d.value == 0.0);
}
