#include "histoprog/gradcore/mlp.hpp"

#include "histoprog/common/error.hpp"

namespace histoprog::gradcore {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::identity, Activation::relu, Activation::sigmoid,
                 Activation::tanh, Activation::softmax}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown activation: " + name);
}

void MlpSpec::validate() const {
  if (sizes.size() < 2 || sizes.size() != activations.size() + 1) {
    throw ValidationError("mlp '" + prefix + "': need sizes.size() == activations.size() + 1");
  }
  for (auto s : sizes) {
    if (s == 0) throw ValidationError("mlp '" + prefix + "': zero layer width");
  }
}

void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const std::string base = spec.prefix + "." + std::to_string(i);
    params.add(base + ".weight", glorot_uniform(spec.sizes[i], spec.sizes[i + 1], rng));
    params.add(base + ".bias", Tensor({spec.sizes[i + 1]}, 0.0));
  }
}

Var apply_activation(const Var& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::softmax: return softmax_rows(x);
  }
  return x;
}

Var mlp_forward(const ParamSet& params, const Var& input, const MlpSpec& spec,
                std::vector<Var>* activations, const LayerHook& hook) {
  spec.validate();
  Var x = input;
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const std::string base = spec.prefix + "." + std::to_string(i);
    const Var& w = params.at(base + ".weight");
    const Var& b = params.at(base + ".bias");
    if (x.value().rank() != 2 || x.value().cols() != spec.sizes[i]) {
      throw ValidationError("mlp layer " + base + ": expected input width " +
                            std::to_string(spec.sizes[i]) + ", got shape " +
                            shape_string(x.shape()));
    }
    if (w.shape() != Shape{spec.sizes[i], spec.sizes[i + 1]}) {
      throw ValidationError("mlp layer " + base + ": weight shape " + shape_string(w.shape()) +
                            " does not match spec");
    }
    x = apply_activation(add(matmul(x, w), b), spec.activations[i]);
    if (hook && i + 1 < spec.layers()) x = hook(i, x);
    if (activations) activations->push_back(x);
  }
  return x;
}

}  // namespace histoprog::gradcore
