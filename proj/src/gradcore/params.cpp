#include "histoprog/gradcore/params.hpp"

#include <algorithm>
#include <cmath>

#include "histoprog/common/error.hpp"

namespace histoprog::gradcore {

Var& ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  vars_.push_back(parameter(std::move(value)));
  return vars_.back();
}

void ParamSet::append(const ParamSet& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (contains(other.names_[i])) {
      throw ValidationError("duplicate parameter name: " + other.names_[i]);
    }
    names_.push_back(other.names_[i]);
    vars_.push_back(other.vars_[i]);
  }
}

bool ParamSet::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Var& ParamSet::at(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("unknown parameter: " + name);
  return vars_[static_cast<std::size_t>(it - names_.begin())];
}

Var& ParamSet::at(const std::string& name) {
  return const_cast<Var&>(std::as_const(*this).at(name));
}

void ParamSet::zero_grad() {
  for (auto& v : vars_) v.zero_grad();
}

std::vector<NamedTensor> ParamSet::snapshot() const {
  std::vector<NamedTensor> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) out.push_back({names_[i], vars_[i].value()});
  return out;
}

void ParamSet::load(const std::vector<NamedTensor>& values) {
  if (values.size() != vars_.size()) {
    throw ValidationError("parameter count mismatch: have " + std::to_string(vars_.size()) +
                          ", got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].name != names_[i] || values[i].tensor.shape() != vars_[i].shape()) {
      throw ValidationError("parameter mismatch at " + names_[i] + " (got " +
                            values[i].name + " " + shape_string(values[i].tensor.shape()) + ")");
    }
    vars_[i].mutable_value() = values[i].tensor;
  }
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.add(names_[i], vars_[i].value());
  return out;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v.value().size();
  return n;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.data()) v = uniform(rng, -limit, limit);
  return t;
}

}  // namespace histoprog::gradcore
