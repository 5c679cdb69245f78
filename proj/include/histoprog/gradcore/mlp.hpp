#pragma once

#include <functional>
#include <string>
#include <vector>

#include "histoprog/gradcore/params.hpp"

namespace histoprog::gradcore {

enum class Activation { identity, relu, sigmoid, tanh, softmax };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Stack of dense layers. `sizes` has one more entry than `activations`;
/// layer i maps sizes[i] -> sizes[i+1] and applies activations[i].
/// Parameters are named "<prefix>.<i>.weight" and "<prefix>.<i>.bias".
struct MlpSpec {
  std::string prefix = "mlp";
  std::vector<std::size_t> sizes;
  std::vector<Activation> activations;

  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }
  std::size_t layers() const { return activations.size(); }
  void validate() const;
};

/// Adds Glorot-initialized weights and zero biases for `spec` to `params`.
void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng);

/// Called on every activation except the last; may replace it (dropout).
using LayerHook = std::function<Var(std::size_t layer, const Var& activation)>;

/// Forward pass over a batch of rows. When `activations` is non-null it
/// receives every post-activation output, the last one included.
Var mlp_forward(const ParamSet& params, const Var& input, const MlpSpec& spec,
                std::vector<Var>* activations = nullptr, const LayerHook& hook = {});

Var apply_activation(const Var& x, Activation a);

}  // namespace histoprog::gradcore
