#include "histoprog/gradcore/optim.hpp"

#include <cmath>

#include "histoprog/common/error.hpp"

namespace histoprog::gradcore {

void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimState& state, std::span<const std::string> names) {
  if (params.size() != grads.size()) {
    throw ValidationError("sgd_momentum_step: params/grads count mismatch");
  }
  auto label = [&](std::size_t i) {
    return i < names.size() ? names[i] : "#" + std::to_string(i);
  };
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.shape(), 0.0);
  }
  if (state.velocity.size() != params.size()) {
    throw ValidationError("sgd_momentum_step: velocity count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.velocity[i].shape() != params[i].shape()) {
      throw ValidationError("sgd_momentum_step: shape mismatch for " + label(i));
    }
    if (!grads[i].all_finite()) {
      throw RuntimeFailure("non-finite gradient for parameter " + label(i));
    }
  }
  double gscale = 1.0;
  if (state.clip_norm > 0) {
    double sq = 0;
    for (const auto& g : grads) {
      for (double x : g.data()) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > state.clip_norm) gscale = state.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto v = state.velocity[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + gscale * g[j];
      p[j] -= state.lr * v[j];
    }
  }
}

void sgd_momentum_step(ParamSet& params, OptimState& state) {
  std::vector<Tensor> values;
  std::vector<Tensor> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (const auto& v : params.vars()) {
    values.push_back(std::move(const_cast<Var&>(v).mutable_value()));
    grads.push_back(v.grad().empty() ? Tensor(values.back().shape(), 0.0) : v.grad());
  }
  try {
    sgd_momentum_step(values, grads, state, params.names());
  } catch (...) {
    for (std::size_t i = 0; i < values.size(); ++i) params.vars()[i].mutable_value() = std::move(values[i]);
    throw;
  }
  for (std::size_t i = 0; i < values.size(); ++i) params.vars()[i].mutable_value() = std::move(values[i]);
}

EmaState make_ema(const ParamSet& student, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("EMA delta must be in [0,1]");
  EmaState ema;
  ema.delta = delta;
  for (const auto& v : student.vars()) ema.teacher.push_back(v.value());
  return ema;
}

void ema_update(EmaState& ema, std::span<const Tensor> student) {
  if (!(ema.delta >= 0.0 && ema.delta <= 1.0)) throw ValidationError("EMA delta must be in [0,1]");
  if (student.size() != ema.teacher.size()) {
    throw ValidationError("ema_update: parameter count mismatch");
  }
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[i].shape() != ema.teacher[i].shape()) {
      throw ValidationError("ema_update: shape mismatch at parameter " + std::to_string(i));
    }
  }
  const double d = ema.delta;
  for (std::size_t i = 0; i < student.size(); ++i) {
    auto t = ema.teacher[i].data();
    auto s = student[i].data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = d * t[j] + (1.0 - d) * s[j];
  }
}

void ema_update(EmaState& ema, const ParamSet& student) {
  std::vector<Tensor> values;
  values.reserve(student.size());
  for (const auto& v : student.vars()) values.push_back(v.value());
  ema_update(ema, values);
}

}  // namespace histoprog::gradcore
