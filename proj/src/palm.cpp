#include "gpmax/palm.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numbers>

#include "gpmax/error.hpp"
#include "gpmax/linalg.hpp"
#include "gpmax/rng.hpp"

namespace gpmax {

namespace {

constexpr std::uint64_t kQuTag = 0x9A1Dull;

// Jet entries (f, d1, d2, d11, d22, d12) as derivative counts.
constexpr int kJetAlpha[6][2] = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {0, 2}, {1, 1}};

void require_plane(const KernelModel& kernel) {
  if (kernel.dim() != 2) fail(ErrorCode::kUnsupported, "Palm constructions are implemented for d = 2");
}

std::vector<int> basis_of(const KernelModel& kernel) {
  if (kernel.is_monochromatic()) return {1, 2, 3, 4, 5};
  return {0, 1, 2, 3, 4, 5};
}

// d^c of Cov(jet_i(0), f(x)) = (-1)^|a_i| d^(a_i + c) r(x).
double jet_cross(const KernelModel& kernel, int i, const Vec2& x, int c1, int c2) {
  const int a1 = kJetAlpha[i][0], a2 = kJetAlpha[i][1];
  const double sign = ((a1 + a2) % 2 == 0) ? 1.0 : -1.0;
  return sign * kernel.eval2(x.x(), x.y(), a1 + c1, a2 + c2);
}

// Derivatives (order <= 2) of sum_i w_i Cov(jet_i(0), f(x)) collected in a jet.
Jet2 combine_jet(const KernelModel& kernel, const std::vector<int>& idx, const Eigen::VectorXd& w,
                 const Vec2& x, int order) {
  if (order > 2) fail(ErrorCode::kUnsupported, "regression fields support derivatives up to order 2");
  auto d = [&](int c1, int c2) {
    double acc = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (w(k) != 0.0) acc += w(k) * jet_cross(kernel, idx[k], x, c1, c2);
    }
    return acc;
  };
  Jet2 out;
  out.value = d(0, 0);
  if (order >= 1) out.grad = {d(1, 0), d(0, 1)};
  if (order >= 2) {
    out.hess(0, 0) = d(2, 0);
    out.hess(1, 1) = d(0, 2);
    out.hess(0, 1) = out.hess(1, 0) = d(1, 1);
  }
  return out;
}

Jet2 subtract(Jet2 a, const Jet2& b) {
  a.value -= b.value;
  a.grad -= b.grad;
  a.hess -= b.hess;
  return a;
}

Jet2 add(Jet2 a, const Jet2& b) {
  a.value += b.value;
  a.grad += b.grad;
  a.hess += b.hess;
  return a;
}

class ResidualEvaluator final : public FieldEvaluator {
 public:
  ResidualEvaluator(std::shared_ptr<const FieldEvaluator> base, KernelModel kernel,
                    std::vector<int> idx, Eigen::VectorXd coef)
      : base_(std::move(base)), kernel_(std::move(kernel)), idx_(std::move(idx)), coef_(std::move(coef)) {}

  Jet2 jet(const Vec2& x, int order) const override {
    return subtract(base_->jet(x, order), combine_jet(kernel_, idx_, coef_, x, order));
  }
  bool supports(const Vec2& x) const override { return base_->supports(x); }

 private:
  std::shared_ptr<const FieldEvaluator> base_;
  KernelModel kernel_;
  std::vector<int> idx_;
  Eigen::VectorXd coef_;
};

class PalmEvaluator final : public FieldEvaluator {
 public:
  PalmEvaluator(std::shared_ptr<const FieldEvaluator> residual, RegressionWeights weights,
                double xi, Mat2 z)
      : residual_(std::move(residual)), weights_(std::move(weights)), xi_(xi), z_(z) {}

  Jet2 jet(const Vec2& x, int order) const override {
    return add(residual_->jet(x, order), weights_.mean_jet(x, xi_, z_, order));
  }
  bool supports(const Vec2& x) const override { return residual_->supports(x); }

 private:
  std::shared_ptr<const FieldEvaluator> residual_;
  RegressionWeights weights_;
  double xi_;
  Mat2 z_;
};

Jet2 jet_at(const FieldEvaluator& e, const Vec2& x) { return e.jet(x, 2); }

Eigen::VectorXd jet_vector(const Jet2& j) {
  Eigen::VectorXd v(6);
  v << j.value, j.grad.x(), j.grad.y(), j.hess(0, 0), j.hess(1, 1), j.hess(0, 1);
  return v;
}

PalmPair couple(const FieldRealization& field, double u, std::uint64_t seed, PalmOptions opts) {
  auto residual = residualize(field);
  const auto draws = sample_qu(field.kernel(), u, opts.batch_size, seed);
  const QuDraw draw = draws.front();
  RegressionWeights weights(field.kernel());
  auto tilde = std::make_shared<PalmEvaluator>(residual, weights, draw.xi, draw.z);
  FieldRealization f_tilde(field.kernel(), SamplerKind::kDerived, seed, field.domain(),
                           field.truncation(), field.truncation_error_bound(), std::move(tilde));
  return PalmPair{field, std::move(f_tilde), draw, std::move(residual)};
}

}  // namespace

RegressionWeights::RegressionWeights(const KernelModel& kernel)
    : kernel_(kernel), monochromatic_(kernel.is_monochromatic()) {
  require_plane(kernel);
  const std::vector<int> block = monochromatic_ ? std::vector<int>{3, 4, 5} : std::vector<int>{0, 3, 4, 5};
  const Eigen::MatrixXd m = linalg::select(kernel.sigma_joint(), block, block);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12) {
    fail(ErrorCode::kNumerical,
         "the (f, Hess f) covariance block is singular; use the monochromatic construction");
  }
  m_inv_ = lu.inverse();
}

double RegressionWeights::a(const Vec2& x, int a1, int a2) const {
  if (monochromatic_) return 0.0;
  const int block[4] = {0, 3, 4, 5};
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) acc += jet_cross(kernel_, block[k], x, a1, a2) * m_inv_(k, 0);
  return acc;
}

Eigen::Vector3d RegressionWeights::b(const Vec2& x, int a1, int a2) const {
  const int off = monochromatic_ ? 0 : 1;
  const int n = 3 + off;
  Eigen::RowVectorXd k(n);
  for (int i = 0; i < n; ++i) {
    const int idx = monochromatic_ ? 3 + i : (i == 0 ? 0 : 2 + i);
    k(i) = jet_cross(kernel_, idx, x, a1, a2);
  }
  const Eigen::RowVectorXd w = k * m_inv_;
  return w.segment(off, 3).transpose();
}

Jet2 RegressionWeights::mean_jet(const Vec2& x, double t, const Mat2& z, int order) const {
  if (order > 2) fail(ErrorCode::kUnsupported, "regression fields support derivatives up to order 2");
  const Eigen::Vector3d vz{z(0, 0), z(1, 1), z(0, 1)};
  auto d = [&](int c1, int c2) { return t * a(x, c1, c2) + vz.dot(b(x, c1, c2)); };
  Jet2 out;
  out.value = d(0, 0);
  if (order >= 1) out.grad = {d(1, 0), d(0, 1)};
  if (order >= 2) {
    out.hess(0, 0) = d(2, 0);
    out.hess(1, 1) = d(0, 2);
    out.hess(0, 1) = out.hess(1, 0) = d(1, 1);
  }
  return out;
}

double conditional_cov(const KernelModel& kernel, const Vec2& x, const Vec2& y) {
  require_plane(kernel);
  const std::vector<int> idx = basis_of(kernel);
  const Eigen::MatrixXd s = linalg::select(kernel.sigma_joint(), idx, idx);
  Eigen::VectorXd kx(idx.size()), ky(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    kx(i) = jet_cross(kernel, idx[i], x, 0, 0);
    ky(i) = jet_cross(kernel, idx[i], y, 0, 0);
  }
  const Vec2 diff = x - y;
  return kernel.eval2(diff.x(), diff.y(), 0, 0) - kx.dot(s.ldlt().solve(ky));
}

std::vector<QuDraw> sample_qu(const KernelModel& kernel, double u, int batch_size,
                              std::uint64_t seed) {
  require_plane(kernel);
  if (!std::isfinite(u)) fail(ErrorCode::kInvalidArgument, "level must be finite");
  if (batch_size < 1) fail(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  const Eigen::MatrixXd& s = kernel.sigma_joint();
  // Hess | f = t is Gaussian with mean beta t and covariance cond.
  const std::vector<int> hess{3, 4, 5};
  const Eigen::Vector3d beta = linalg::select(s, hess, {0}) / s(0, 0);
  const Eigen::Matrix3d cond = linalg::select(s, hess, hess) - s(0, 0) * beta * beta.transpose();
  const Eigen::Matrix3d root = linalg::psd_sqrt(cond);
  const double sd = std::sqrt(s(0, 0));
  const double tail = std::erfc(u / (sd * std::numbers::sqrt2));
  if (!(tail > 0.0)) fail(ErrorCode::kDomain, "level too high: the upper tail underflows");

  Philox4x32 rng(seed, derive_stream({kQuTag}));
  std::vector<QuDraw> proposals(batch_size);
  std::vector<double> weight(batch_size);
  double sum = 0.0, sum_sq = 0.0;
  for (int k = 0; k < batch_size; ++k) {
    const double t = sd * std::numbers::sqrt2 * boost::math::erfc_inv(tail * rng.uniform());
    Eigen::Vector3d g{rng.normal(), rng.normal(), rng.normal()};
    const Eigen::Vector3d h = beta * t + root * g;
    QuDraw& q = proposals[k];
    q.z << h(0), h(2), h(2), h(1);
    q.xi = kernel.is_monochromatic() ? -q.z.trace() : t;
    const double det = q.z.determinant();
    const bool negdef = q.z(0, 0) < 0.0 && det > 0.0;
    weight[k] = negdef && q.xi >= u ? det : 0.0;
    sum += weight[k];
    sum_sq += weight[k] * weight[k];
  }
  if (!(sum > 0.0)) {
    fail(ErrorCode::kNumerical, "no proposal has a negative definite Hessian; increase the batch size");
  }
  const double ess = sum * sum / sum_sq;
  if (ess < 0.05 * batch_size) {
    fail(ErrorCode::kNumerical, "importance weights too skewed (ESS " + std::to_string(ess) +
                                    " < 5% of batch); increase the batch size");
  }
  std::vector<double> cdf(batch_size);
  double acc = 0.0;
  for (int k = 0; k < batch_size; ++k) cdf[k] = (acc += weight[k] / sum);
  std::vector<QuDraw> out(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    const double v = rng.uniform();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), v);
    int pick = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), batch_size - 1));
    while (weight[pick] == 0.0) --pick;  // guard against rounding at the end of cdf
    out[k] = proposals[pick];
    out[k].ess = ess;
  }
  return out;
}

std::shared_ptr<const FieldEvaluator> residualize(const FieldRealization& field) {
  const KernelModel& kernel = field.kernel();
  require_plane(kernel);
  if (!field.has_evaluator()) {
    fail(ErrorCode::kUnsupported, "residualization needs an analytic evaluator, not grid values");
  }
  const std::vector<int> idx = basis_of(kernel);
  const Eigen::MatrixXd s = linalg::select(kernel.sigma_joint(), idx, idx);
  const Eigen::VectorXd j0 = jet_vector(jet_at(field.evaluator(), Vec2::Zero()));
  Eigen::VectorXd data(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) data(i) = j0(idx[i]);
  Eigen::VectorXd coef = s.ldlt().solve(data);
  return std::make_shared<ResidualEvaluator>(field.evaluator_ptr(), kernel, idx, std::move(coef));
}

PalmPair palm_couple(const FieldRealization& field, double u, std::uint64_t seed, PalmOptions opts) {
  if (field.kernel().is_monochromatic()) {
    fail(ErrorCode::kInvalidArgument, "monochromatic kernel: use palm_couple_monochromatic");
  }
  return couple(field, u, seed, opts);
}

PalmPair palm_couple_monochromatic(const FieldRealization& field, double u, std::uint64_t seed,
                                   PalmOptions opts) {
  if (!field.kernel().is_monochromatic()) {
    fail(ErrorCode::kInvalidArgument, "kernel is not monochromatic: use palm_couple");
  }
  return couple(field, u, seed, opts);
}

std::string to_string(FlowStatus status) {
  switch (status) {
    case FlowStatus::kCompleted: return "completed";
    case FlowStatus::kDegenerate: return "degenerate";
    case FlowStatus::kStepUnderflow: return "step_underflow";
    case FlowStatus::kLeftDomain: return "left_domain";
  }
  return "unknown";
}

FlowResult flow_critical_points(const FieldEvaluator& f, const FieldEvaluator& f_tilde,
                                const CriticalPoint& start, const Box2& domain, FlowOptions opts) {
  struct Local {
    Vec2 grad_f, grad_h;
    Mat2 hess_f, hess_h;
  };
  auto local = [&](const Vec2& x) {
    const Jet2 a = f.jet(x, 2), b = f_tilde.jet(x, 2);
    return Local{a.grad, b.grad - a.grad, a.hess, b.hess - a.hess};
  };
  auto sample = [&](double t, const Vec2& x) {
    const Local l = local(x);
    const Mat2 h = l.hess_f + t * l.hess_h;
    FlowSample s;
    s.t = t;
    s.x = x;
    s.grad_norm = (l.grad_f + t * l.grad_h).norm();
    s.det_hess = h.determinant();
    Eigen::SelfAdjointEigenSolver<Mat2> es(h, Eigen::EigenvaluesOnly);
    s.morse_index = (es.eigenvalues()(0) < 0.0) + (es.eigenvalues()(1) < 0.0);
    return s;
  };

  FlowResult res;
  Vec2 x = start.location;
  double t = 0.0;
  res.trajectory.push_back(sample(t, x));
  auto finish = [&](FlowStatus st, std::string msg) {
    res.status = st;
    res.message = std::move(msg);
    return res;
  };
  if (std::abs(res.trajectory.back().det_hess) < opts.degeneracy_threshold) {
    return finish(FlowStatus::kDegenerate, "degenerate Hessian at the starting point");
  }

  bool degenerate = false;
  auto velocity = [&](double tt, const Vec2& y) -> Vec2 {
    const Local l = local(y);
    const Mat2 h = l.hess_f + tt * l.hess_h;
    if (std::abs(h.determinant()) < opts.degeneracy_threshold) degenerate = true;
    return -h.inverse() * l.grad_h;
  };
  auto rk4 = [&](double tt, const Vec2& y, double dt) {
    const Vec2 k1 = velocity(tt, y);
    const Vec2 k2 = velocity(tt + 0.5 * dt, y + 0.5 * dt * k1);
    const Vec2 k3 = velocity(tt + 0.5 * dt, y + 0.5 * dt * k2);
    const Vec2 k4 = velocity(tt + dt, y + dt * k3);
    return Vec2(y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };

  double dt = opts.initial_step;
  while (t < 1.0) {
    dt = std::min(dt, 1.0 - t);
    if (dt < opts.min_step) {
      return finish(FlowStatus::kStepUnderflow,
                    "step size underflow at t = " + std::to_string(t) + " (treated as degeneracy)");
    }
    degenerate = false;
    const Vec2 full = rk4(t, x, dt);
    const Vec2 half = rk4(t + 0.5 * dt, rk4(t, x, 0.5 * dt), 0.5 * dt);
    if (degenerate) {
      // Shrink towards the event before reporting it.
      dt *= 0.5;
      if (dt < opts.min_step) {
        return finish(FlowStatus::kDegenerate,
                      "|det Hess F_t| below threshold near t = " + std::to_string(t));
      }
      continue;
    }
    const double err = (full - half).lpNorm<Eigen::Infinity>();
    if (!std::isfinite(err) || err > opts.tolerance) {
      dt *= std::clamp(0.9 * std::pow(opts.tolerance / std::max(err, 1e-300), 0.2), 0.1, 0.5);
      if (!std::isfinite(err)) dt *= 0.1;
      continue;
    }
    Vec2 next = half + (half - full) / 15.0;
    const double tn = t + dt;
    if (!domain.contains(next) || !f.supports(next) || !f_tilde.supports(next)) {
      res.trajectory.push_back(sample(tn, next));
      return finish(FlowStatus::kLeftDomain, "trajectory left the domain at t = " + std::to_string(tn));
    }
    // One Newton step back onto grad F_t = 0.
    {
      const Local l = local(next);
      const Mat2 h = l.hess_f + tn * l.hess_h;
      if (std::abs(h.determinant()) < opts.degeneracy_threshold) {
        res.trajectory.push_back(sample(tn, next));
        return finish(FlowStatus::kDegenerate,
                      "|det Hess F_t| below threshold at t = " + std::to_string(tn));
      }
      next -= h.inverse() * (l.grad_f + tn * l.grad_h);
    }
    const FlowSample s = sample(tn, next);
    if (s.grad_norm > opts.gradient_tolerance) {
      dt *= 0.5;
      continue;
    }
    if (std::abs(s.det_hess) < opts.degeneracy_threshold) {
      res.trajectory.push_back(s);
      return finish(FlowStatus::kDegenerate, "|det Hess F_t| below threshold at t = " + std::to_string(tn));
    }
    res.trajectory.push_back(s);
    x = next;
    t = tn;
    dt *= std::clamp(0.9 * std::pow(opts.tolerance / std::max(err, 1e-300), 0.2), 1.0, 2.0);
  }
  return finish(FlowStatus::kCompleted, "reached t = 1");
}

}  // namespace gpmax
