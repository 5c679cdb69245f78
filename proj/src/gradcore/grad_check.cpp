#include "histoprog/gradcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "histoprog/common/error.hpp"

namespace histoprog::gradcore {

namespace {
double eval_at(const ScalarFn& fn, const Tensor& x, std::size_t coord) {
  const double v = fn(constant(x)).value().item();
  if (!std::isfinite(v)) {
    throw RuntimeFailure("grad_check: non-finite loss when perturbing coordinate " +
                         std::to_string(coord));
  }
  return v;
}
}  // namespace

Tensor numeric_gradient(const ScalarFn& loss_fn, const Tensor& point, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ValidationError("grad_check: eps must be in (0, 1e-2]");
  Tensor grad(point.shape());
  Tensor x = point;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = eval_at(loss_fn, x, i);
    x[i] = orig - eps;
    const double down = eval_at(loss_fn, x, i);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

GradCheckReport grad_check(const ScalarFn& loss_fn, const Tensor& point, double eps) {
  Var x = parameter(point);
  Var loss = loss_fn(x);
  if (!std::isfinite(loss.value().item())) {
    throw RuntimeFailure("grad_check: non-finite loss at the base point");
  }
  backward(loss);
  const Tensor analytic = x.grad().empty() ? Tensor(point.shape(), 0.0) : x.grad();
  const Tensor numeric = numeric_gradient(loss_fn, point, eps);

  GradCheckReport report;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i]));
    if (i == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric[i];
    }
  }
  return report;
}

}  // namespace histoprog::gradcore
