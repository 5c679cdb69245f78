#pragma once

#include <span>
#include <string>
#include <vector>

#include "histoprog/gradcore/params.hpp"

namespace histoprog::gradcore {

/// Classical (heavy-ball) momentum state.
struct OptimState {
  double lr = 0.001;
  double momentum = 0.9;
  /// If positive, gradients are rescaled so their global L2 norm is at most this.
  double clip_norm = 0.0;
  std::vector<Tensor> velocity;  // one per parameter, created on first step
};

/// v <- momentum * v + g;  p <- p - lr * v.
/// Throws if any gradient is non-finite, naming the parameter.
void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimState& state, std::span<const std::string> names = {});

/// Convenience overload reading gradients from the parameter nodes.
/// Parameters that received no gradient are treated as having g = 0.
void sgd_momentum_step(ParamSet& params, OptimState& state);

/// Teacher weights tracked as an exponential moving average.
struct EmaState {
  double delta = 0.99;
  std::vector<Tensor> teacher;
};

EmaState make_ema(const ParamSet& student, double delta);

/// teacher <- delta * teacher + (1 - delta) * student, coordinate-wise.
void ema_update(EmaState& ema, std::span<const Tensor> student);
void ema_update(EmaState& ema, const ParamSet& student);

}  // namespace histoprog::gradcore
