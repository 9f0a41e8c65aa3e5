#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gpmax/critpoints.hpp"
#include "gpmax/field.hpp"
#include "gpmax/kacrice.hpp"
#include "gpmax/palm.hpp"

namespace gpmax {

/// Empirical pmf of nonnegative integer counts, indexed 0..max.
std::vector<double> histogram_pmf(const std::vector<long>& counts);

/// Total variation between a pmf on 0..K and Poisson(lambda); the Poisson
/// mass beyond K enters analytically.
double tv_distance_poisson(const std::vector<double>& pmf, double lambda);

/// Total variation between two pmfs on the nonnegative integers.
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

struct TvResult {
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double lambda = 0.0;
};

/// TV between the count distribution and Poisson. Without `lambda` the
/// reference mean is the sample mean, refitted in every bootstrap resample.
/// The interval is the 2.5% / 97.5% percentile bootstrap.
TvResult tv_to_poisson(const std::vector<long>& counts, std::optional<double> lambda,
                       std::uint64_t seed, int n_bootstrap = 1000);

struct AvoidanceResult {
  Box2 box;
  double p_empty = 0.0;
  double poisson = 0.0;  // exp(-area)
};

/// Per box (rescaled coordinates), the fraction of patterns without points in it.
std::vector<AvoidanceResult> avoidance_probability(const std::vector<PointPattern>& patterns,
                                                   const std::vector<Box2>& boxes);

/// Ordered pairs of distinct points closer than tau(u) (rescaled coordinates).
long cluster_pairs(const PointPattern& pattern, double u);

/// Mean |#maxima(f_tilde) - #maxima(f)| above u over [-R/2, R/2]^2 minus the
/// physical ball of radius mu(u) tau(u) around the origin.
McEstimate palm_count_discrepancy(const std::vector<PalmPair>& pairs, double u, double window_side,
                                  const ScanOptions& scan = {});

/// Maximum of the field over `region`: interior maxima above `floor` and a
/// scan of the region's boundary. Results below `floor` are only lower bounds.
double field_maximum(const FieldRealization& field, const Box2& region, double floor,
                     double grid_factor = 0.25);

struct SupercriticalResult {
  int n = 0;
  double alpha = 0.0;
  double level = 0.0;
  long hits = 0;
  long replicates = 0;
  double p_hit = 0.0;
  double std_error = 0.0;
  double reference = 0.0;  // n^((1-alpha) d) (log n)^((d-1)/2)
};

struct SupercriticalOptions {
  double spacing = 0.1;
  double grid_factor = 0.5;
  /// Upper limit on lattice points per field.
  long max_points = 25'000'000;
};

/// u(n) = sqrt(2 alpha d log n).
double supercritical_level(int n, double alpha, int d = 2);

/// Fraction of fields on [0, n]^2 whose maximum exceeds u(n), from the
/// circulant grid sampler.
SupercriticalResult supercritical_emptiness(const KernelModel& kernel, int n, double alpha,
                                            long replicates, std::uint64_t seed,
                                            SupercriticalOptions opts = {});

struct ExcursionLevel {
  double u = 0.0;
  double p_hat = 0.0;
  long exceed = 0;
  double residual = 0.0;  // log p_hat - log fitted
  bool used = false;
};

struct ExcursionFit {
  double c = 0.0;
  double volume = 0.0;
  long replicates = 0;
  std::vector<ExcursionLevel> levels;
  std::vector<std::string> warnings;
};

/// Least-squares fit on the log scale of P(max_A f > u) = C vol(A) u^(d-1) (1 - Phi(u)).
ExcursionFit excursion_fit(const KernelModel& kernel, const std::vector<double>& levels,
                           const Box2& region, long replicates, std::uint64_t seed);

struct CaptureRate {
  double grid_factor = 0.0;
  long misses = 0;
  long exceed = 0;  // replicates whose continuous maximum exceeds u
  double miss_fraction = 0.0;
};

/// Per grid factor b, the fraction of replicates whose maximum over `region`
/// exceeds u while every point of (b/u) Z^2 in the region stays at or below u.
std::vector<CaptureRate> grid_capture_rate(const KernelModel& kernel, double u,
                                           const std::vector<double>& grid_factors,
                                           const Box2& region, long replicates,
                                           std::uint64_t seed);

/// Kolmogorov-Smirnov statistics.
double ks_distance(std::vector<double> a, std::vector<double> b);
struct KsResult {
  double distance = 0.0;
  double p_value = 0.0;
};
KsResult ks_test_normal(std::vector<double> sample);
/// P(K > x) for the Kolmogorov distribution.
double kolmogorov_survival(double x);

/// Least-squares slope of y on x.
double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gpmax
