#include "gpmax/field.hpp"

#include <cmath>
#include <limits>

#include "gpmax/error.hpp"

namespace gpmax {

GridSpec GridSpec::anchored(const Box2& box, double h) {
  if (!(h > 0.0)) fail(ErrorCode::kInvalidArgument, "grid spacing must be > 0");
  const double eps = 1e-12 * h;
  const long i0 = static_cast<long>(std::ceil(box.x0 / h - eps));
  const long i1 = static_cast<long>(std::floor(box.x1 / h + eps));
  const long j0 = static_cast<long>(std::ceil(box.y0 / h - eps));
  const long j1 = static_cast<long>(std::floor(box.y1 / h + eps));
  GridSpec spec;
  spec.h = h;
  spec.x0 = static_cast<double>(i0) * h;
  spec.y0 = static_cast<double>(j0) * h;
  spec.nx = static_cast<int>(std::max(0L, i1 - i0 + 1));
  spec.ny = static_cast<int>(std::max(0L, j1 - j0 + 1));
  return spec;
}

Eigen::MatrixXd FieldEvaluator::grid(const GridSpec& spec) const {
  Eigen::MatrixXd out(spec.nx, spec.ny);
  for (int i = 0; i < spec.nx; ++i) {
    for (int j = 0; j < spec.ny; ++j) {
      const Vec2 p = spec.point(i, j);
      out(i, j) = supports(p) ? value(p) : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

FieldRealization::FieldRealization(KernelModel kernel, SamplerKind kind, std::uint64_t seed,
                                   Box2 domain, int truncation, double truncation_error_bound,
                                   std::shared_ptr<const FieldEvaluator> evaluator)
    : kernel_(std::move(kernel)),
      kind_(kind),
      seed_(seed),
      domain_(domain),
      truncation_(truncation),
      bound_(truncation_error_bound),
      evaluator_(std::move(evaluator)) {}

FieldRealization::FieldRealization(KernelModel kernel, std::uint64_t seed, GridValues grid,
                                   double truncation_error_bound)
    : kernel_(std::move(kernel)),
      kind_(SamplerKind::kCirculantGrid),
      seed_(seed),
      domain_{grid.spec.x0, grid.spec.x0 + (grid.spec.nx - 1) * grid.spec.h, grid.spec.y0,
              grid.spec.y0 + (grid.spec.ny - 1) * grid.spec.h},
      truncation_(0),
      bound_(truncation_error_bound),
      grid_(std::move(grid)) {}

namespace {

class FunctionEvaluator final : public FieldEvaluator {
 public:
  explicit FunctionEvaluator(std::function<Jet2(const Vec2&, int)> fn) : fn_(std::move(fn)) {}
  Jet2 jet(const Vec2& x, int order) const override { return fn_(x, order); }

 private:
  std::function<Jet2(const Vec2&, int)> fn_;
};

}  // namespace

FieldRealization FieldRealization::from_function(Box2 domain,
                                                 std::function<Jet2(const Vec2&, int)> fn) {
  return FieldRealization(KernelModel::bargmann_fock(2), SamplerKind::kAnalytic, 0, domain, 0, 0.0,
                          std::make_shared<FunctionEvaluator>(std::move(fn)));
}

const FieldEvaluator& FieldRealization::evaluator() const {
  if (!evaluator_) {
    fail(ErrorCode::kUnsupported,
         "field has grid values only; this operation needs an analytic evaluator");
  }
  return *evaluator_;
}

const GridValues& FieldRealization::grid() const {
  if (!grid_) fail(ErrorCode::kUnsupported, "field has no stored grid values");
  return *grid_;
}

Eigen::MatrixXd FieldRealization::values_on(const GridSpec& spec) const {
  if (evaluator_) return evaluator_->grid(spec);
  const GridSpec& own = grid().spec;
  if (own.nx != spec.nx || own.ny != spec.ny || std::abs(own.h - spec.h) > 1e-12 * own.h ||
      std::abs(own.x0 - spec.x0) > 1e-9 * own.h || std::abs(own.y0 - spec.y0) > 1e-9 * own.h) {
    fail(ErrorCode::kUnsupported, "grid-only field cannot be evaluated off its own lattice");
  }
  return grid_->values;
}

}  // namespace gpmax
