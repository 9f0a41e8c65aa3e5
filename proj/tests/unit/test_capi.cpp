#include <doctest.h>

#include <cmath>
#include <string>

#include "gpmax/gpmax.h"

TEST_CASE("C API: kernels and errors") {
  gpm_kernel* k = nullptr;
  CHECK(gpm_kernel_create("matern", 2, nullptr, 0, &k) == GPM_INVALID_ARGUMENT);
  CHECK(std::string(gpm_last_error()).find("matern") != std::string::npos);
  REQUIRE(gpm_kernel_create("bargmann-fock", 2, nullptr, 0, &k) == GPM_OK);
  CHECK(std::string(gpm_last_error()).empty());
  double v = 0;
  REQUIRE(gpm_kernel_eval(k, 0.6, 0.8, 0, 0, &v) == GPM_OK);
  CHECK(v == doctest::Approx(std::exp(-0.5)));
  double* m = nullptr;
  size_t n = 0;
  REQUIRE(gpm_kernel_moment_matrix(k, &m, &n) == GPM_OK);
  CHECK(n == 6);
  CHECK(m[3 * 6 + 3] == 3.0);
  CHECK(m[0 * 6 + 3] == -1.0);
  gpm_free(m);
  gpm_intensity in{};
  REQUIRE(gpm_intensity_get(k, 3.0, &in) == GPM_OK);
  CHECK(in.density == doctest::Approx(2.116e-3).epsilon(1e-3));
  CHECK(gpm_kernel_eval(nullptr, 0, 0, 0, 0, &v) == GPM_INVALID_ARGUMENT);
  gpm_kernel_destroy(k);
}

TEST_CASE("C API: sample, maxima, Palm") {
  gpm_field* f = nullptr;
  REQUIRE(gpm_sample_bf(3, gpm_box{-10, 10, -10, 10}, 0, &f) == GPM_OK);
  gpm_field_info info{};
  REQUIRE(gpm_field_info_get(f, &info) == GPM_OK);
  CHECK(info.sampler == GPM_SAMPLER_BF_SERIES);
  CHECK(info.truncation_error_bound <= 1e-10);
  double jet[GPM_JET_SIZE];
  REQUIRE(gpm_field_jet(f, 0.5, 0.5, jet) == GPM_OK);
  double grid[4];
  REQUIRE(gpm_field_grid(f, 0.5, 0.5, 1.0, 2, 2, grid) == GPM_OK);
  CHECK(grid[0] == doctest::Approx(jet[0]).epsilon(1e-12));
  gpm_critical_point* pts = nullptr;
  size_t n = 0;
  REQUIRE(gpm_find_maxima(f, 1.5, 0.25, nullptr, &pts, &n) == GPM_OK);
  for (size_t i = 0; i < n; ++i) {
    CHECK(pts[i].height > 1.5);
    CHECK(pts[i].index == 2);
  }
  gpm_free(pts);
  gpm_palm* p = nullptr;
  REQUIRE(gpm_palm_couple(f, 3.0, 1, &p) == GPM_OK);
  gpm_palm_info pi{};
  REQUIRE(gpm_palm_info_get(p, &pi) == GPM_OK);
  gpm_field* t = nullptr;
  REQUIRE(gpm_palm_tilde(p, &t) == GPM_OK);
  REQUIRE(gpm_field_jet(t, 0, 0, jet) == GPM_OK);
  CHECK(jet[0] == doctest::Approx(pi.xi));
  CHECK(std::abs(jet[1]) < 1e-8);
  gpm_field_destroy(t);
  gpm_palm_destroy(p);
  gpm_field_destroy(f);
}

TEST_CASE("C API: grid field") {
  gpm_kernel* k = nullptr;
  REQUIRE(gpm_kernel_create("bargmann-fock", 2, nullptr, 0, &k) == GPM_OK);
  gpm_field* f = nullptr;
  REQUIRE(gpm_sample_grid(k, gpm_box{0, 10, 0, 10}, 0.25, 7.0, 2, &f) == GPM_OK);
  double x0, y0, h;
  int nx, ny;
  REQUIRE(gpm_field_native_grid(f, &x0, &y0, &h, &nx, &ny) == GPM_OK);
  CHECK(nx == 41);
  double jet[GPM_JET_SIZE];
  CHECK(gpm_field_jet(f, 1, 1, jet) == GPM_INVALID_ARGUMENT);
  gpm_field_destroy(f);
  gpm_kernel_destroy(k);
}
