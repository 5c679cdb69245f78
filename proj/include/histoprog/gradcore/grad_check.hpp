#pragma once

#include <functional>

#include "histoprog/gradcore/var.hpp"

namespace histoprog::gradcore {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
};

using ScalarFn = std::function<Var(const Var&)>;

/// Compares the reverse-mode gradient of `loss_fn` at `point` against
/// central differences. Relative error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check(const ScalarFn& loss_fn, const Tensor& point, double eps = 1e-5);

/// Central-difference gradient alone.
Tensor numeric_gradient(const ScalarFn& loss_fn, const Tensor& point, double eps = 1e-5);

}  // namespace histoprog::gradcore
