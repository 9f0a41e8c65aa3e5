#include "gpmax/kernel.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "gpmax/bessel.hpp"
#include "gpmax/error.hpp"

namespace gpmax {

namespace {

// Sum over partitions of `axes` into singletons and pairs (Faa di Bruno for
// a function of |x|^2/2): singletons contribute x_i, pairs delta_ij, and a
// partition with k blocks picks up G^(k).
double partition_sum(std::span<const double> x, std::vector<int>& axes, std::size_t first,
                     int blocks, double weight, std::span<const double> g_derivs) {
  // Skip consumed entries (marked -1).
  while (first < axes.size() && axes[first] < 0) ++first;
  if (first == axes.size()) return weight * g_derivs[blocks];
  const int axis = axes[first];
  axes[first] = -1;
  double total = 0.0;
  const double xi = x[axis];
  if (xi != 0.0) {
    total += partition_sum(x, axes, first + 1, blocks + 1, weight * xi, g_derivs);
  }
  for (std::size_t j = first + 1; j < axes.size(); ++j) {
    if (axes[j] != axis) continue;
    axes[j] = -1;
    total += partition_sum(x, axes, first + 1, blocks + 1, weight, g_derivs);
    axes[j] = axis;
  }
  axes[first] = axis;
  return total;
}

int order_of(std::span<const int> alpha) {
  int n = 0;
  for (int a : alpha) {
    if (a < 0) fail(ErrorCode::kInvalidArgument, "multi-index entries must be non-negative");
    n += a;
  }
  return n;
}

}  // namespace

double radial_derivative(std::span<const double> x, std::span<const int> alpha,
                         std::span<const double> g_derivs) {
  std::vector<int> axes;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    for (int k = 0; k < alpha[i]; ++k) axes.push_back(static_cast<int>(i));
  }
  return partition_sum(x, axes, 0, 0, 1.0, g_derivs);
}

struct KernelModel::Impl {
  KernelFamily family;
  int dim;
  std::string id;
  std::vector<double> params;
  double decay_radius = std::numeric_limits<double>::infinity();
  // Radial families fill g(s_half_rho2, out[0..4]); custom kernels use table.
  std::function<void(double rho, std::array<double, 5>&)> radial;
  DerivativeTable table;
  Eigen::MatrixXd lambda;
  Eigen::MatrixXd sigma;
  bool monochromatic = false;

  double eval(std::span<const double> x, std::span<const int> alpha) const {
    if (static_cast<int>(x.size()) != dim || static_cast<int>(alpha.size()) != dim) {
      fail(ErrorCode::kInvalidArgument, "kernel " + id + ": point/multi-index dimension mismatch");
    }
    const int order = order_of(alpha);
    if (order > kMaxDerivativeOrder) {
      fail(ErrorCode::kUnsupported,
           "kernel " + id + ": derivative order " + std::to_string(order) + " > 4 not supported");
    }
    if (table) return table(x, alpha);
    double rho2 = 0.0;
    for (double v : x) rho2 += v * v;
    std::array<double, 5> g{};
    radial(std::sqrt(rho2), g);
    return radial_derivative(x, alpha, std::span<const double>(g.data(), order + 1));
  }
};

KernelModel::KernelModel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

std::vector<std::vector<int>> jet_multi_indices(int dim) {
  std::vector<std::vector<int>> out;
  out.emplace_back(dim, 0);
  for (int i = 0; i < dim; ++i) {
    std::vector<int> a(dim, 0);
    a[i] = 1;
    out.push_back(a);
  }
  for (int i = 0; i < dim; ++i) {
    std::vector<int> a(dim, 0);
    a[i] = 2;
    out.push_back(a);
  }
  for (int i = 0; i < dim; ++i) {
    for (int j = i + 1; j < dim; ++j) {
      std::vector<int> a(dim, 0);
      a[i] = 1;
      a[j] = 1;
      out.push_back(a);
    }
  }
  return out;
}

namespace {

KernelModel::Impl finalize(KernelModel::Impl impl) {
  const auto idx = jet_multi_indices(impl.dim);
  const int n = static_cast<int>(idx.size());
  const std::vector<double> origin(impl.dim, 0.0);
  impl.sigma.resize(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      std::vector<int> sum(impl.dim);
      int order_a = 0;
      for (int k = 0; k < impl.dim; ++k) {
        sum[k] = idx[a][k] + idx[b][k];
        order_a += idx[a][k];
      }
      const double sign = (order_a % 2 == 0) ? 1.0 : -1.0;
      impl.sigma(a, b) = sign * impl.eval(origin, sum);
    }
  }
  // Odd-order derivatives vanish at the origin; clean rounding noise.
  impl.sigma.block(1, 0, impl.dim, 1).setZero();
  impl.sigma.block(0, 1, 1, impl.dim).setZero();
  impl.sigma.block(1, 1 + impl.dim, impl.dim, n - 1 - impl.dim).setZero();
  impl.sigma.block(1 + impl.dim, 1, n - 1 - impl.dim, impl.dim).setZero();
  impl.lambda = impl.sigma.block(1, 1, impl.dim, impl.dim);
  return impl;
}

std::shared_ptr<const KernelModel::Impl> make_radial(
    KernelFamily family, int dim, std::string id,
    std::function<void(double, std::array<double, 5>&)> radial, double decay) {
  KernelModel::Impl impl;
  impl.family = family;
  impl.dim = dim;
  impl.id = std::move(id);
  impl.radial = std::move(radial);
  impl.decay_radius = decay;
  return std::make_shared<const KernelModel::Impl>(finalize(std::move(impl)));
}

void check_dim(int dim) {
  if (dim < 2) fail(ErrorCode::kInvalidArgument, "kernel dimension must be >= 2");
  if (dim > 8) fail(ErrorCode::kUnsupported, "kernel dimension above 8 not supported");
}

}  // namespace

KernelModel KernelModel::bargmann_fock(int dim) {
  check_dim(dim);
  // G(s) = exp(-s), s = |x|^2 / 2. Below 1e-17 beyond |x| = 9 including
  // the degree-4 polynomial prefactors of the derivatives.
  return KernelModel(make_radial(
      KernelFamily::kBargmannFock, dim, "bargmann-fock",
      [](double rho, std::array<double, 5>& g) {
        const double e = std::exp(-0.5 * rho * rho);
        for (int k = 0; k < 5; ++k) g[k] = (k % 2 == 0) ? e : -e;
      },
      9.5));
}

KernelModel KernelModel::monochromatic_sphere(int dim) {
  check_dim(dim);
  // r(rho) = Gamma(nu+1) (2/rho)^nu J_nu(rho), nu = d/2 - 1, and
  // (rho^-1 d/drho)^k [rho^-nu J_nu] = (-1)^k rho^-(nu+k) J_(nu+k).
  const double nu = 0.5 * dim - 1.0;
  const double prefactor = std::tgamma(nu + 1.0) * std::pow(2.0, nu);
  auto radial = [nu, prefactor](double rho, std::array<double, 5>& g) {
    for (int k = 0; k < 5; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      g[k] = sign * prefactor * bessel::j_scaled(nu + k, rho);
    }
  };
  auto impl = make_radial(dim == 2 ? KernelFamily::kRandomPlaneWave
                                   : KernelFamily::kMonochromaticSphere,
                          dim, dim == 2 ? "random-plane-wave" : "monochromatic-sphere",
                          std::move(radial), std::numeric_limits<double>::infinity());
  auto copy = std::make_shared<KernelModel::Impl>(*impl);
  copy->monochromatic = true;
  return KernelModel(std::move(copy));
}

KernelModel KernelModel::random_plane_wave() { return monochromatic_sphere(2); }

KernelModel KernelModel::custom_spectral(int dim, std::string id, DerivativeTable table,
                                         double decay_radius) {
  check_dim(dim);
  if (!table) {
    fail(ErrorCode::kUnsupported, "custom kernel " + id + ": no derivative table registered");
  }
  KernelModel::Impl impl;
  impl.family = KernelFamily::kCustomSpectral;
  impl.dim = dim;
  impl.id = std::move(id);
  impl.table = std::move(table);
  impl.decay_radius = decay_radius;
  return KernelModel(std::make_shared<const Impl>(finalize(std::move(impl))));
}

KernelModel KernelModel::scaled_gaussian(int dim, double length) {
  if (!(length > 0.0)) fail(ErrorCode::kInvalidArgument, "gaussian kernel: length must be > 0");
  const double inv = 1.0 / (length * length);
  auto table = [inv](std::span<const double> x, std::span<const int> alpha) {
    double rho2 = 0.0;
    for (double v : x) rho2 += v * v;
    const double e = std::exp(-0.5 * rho2 * inv);
    std::array<double, 5> g{};
    double scale = 1.0;
    for (int k = 0; k < 5; ++k) {
      g[k] = scale * e;
      scale *= -inv;
    }
    return radial_derivative(x, alpha, g);
  };
  auto kernel = custom_spectral(dim, "gaussian", std::move(table), 9.5 * length);
  auto copy = std::make_shared<Impl>(*kernel.impl_);
  copy->params = {length};
  return KernelModel(std::move(copy));
}

KernelModel KernelModel::from_id(std::string_view id, int dim, std::span<const double> params) {
  if (id == "bargmann-fock" || id == "bf") return bargmann_fock(dim);
  if (id == "random-plane-wave" || id == "rpw") {
    if (dim != 2) fail(ErrorCode::kInvalidArgument, "random-plane-wave is two-dimensional");
    return random_plane_wave();
  }
  if (id == "monochromatic-sphere") return monochromatic_sphere(dim);
  if (id == "gaussian") {
    if (params.size() != 1) fail(ErrorCode::kInvalidArgument, "gaussian kernel needs {length}");
    return scaled_gaussian(dim, params[0]);
  }
  fail(ErrorCode::kInvalidArgument, "unknown kernel id '" + std::string(id) + "'");
}

KernelFamily KernelModel::family() const { return impl_->family; }
int KernelModel::dim() const { return impl_->dim; }
const std::string& KernelModel::id() const { return impl_->id; }
const std::vector<double>& KernelModel::params() const { return impl_->params; }

double KernelModel::eval(std::span<const double> x, std::span<const int> alpha) const {
  return impl_->eval(x, alpha);
}

double KernelModel::eval2(double x, double y, int a1, int a2) const {
  const std::array<double, 2> p{x, y};
  const std::array<int, 2> a{a1, a2};
  return impl_->eval(p, a);
}

double KernelModel::value(std::span<const double> x) const {
  const std::vector<int> zero(x.size(), 0);
  return impl_->eval(x, zero);
}

const Eigen::MatrixXd& KernelModel::lambda() const { return impl_->lambda; }
const Eigen::MatrixXd& KernelModel::sigma_joint() const { return impl_->sigma; }
int KernelModel::jet_size() const { return static_cast<int>(impl_->sigma.rows()); }
bool KernelModel::is_monochromatic() const { return impl_->monochromatic; }
double KernelModel::decay_radius() const { return impl_->decay_radius; }

Eigen::MatrixXd cross_moment_matrix(const KernelModel& kernel, std::span<const double> x) {
  const int dim = kernel.dim();
  const auto idx = jet_multi_indices(dim);
  const int n = static_cast<int>(idx.size());
  Eigen::MatrixXd out(n, n);
  std::vector<int> sum(dim);
  for (int a = 0; a < n; ++a) {
    const int order_a = std::accumulate(idx[a].begin(), idx[a].end(), 0);
    const double sign = (order_a % 2 == 0) ? 1.0 : -1.0;
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < dim; ++k) sum[k] = idx[a][k] + idx[b][k];
      out(a, b) = sign * kernel.eval(x, sum);
    }
  }
  return out;
}

Eigen::MatrixXd joint_moment_matrix(const KernelModel& kernel) { return kernel.sigma_joint(); }

}  // namespace gpmax
