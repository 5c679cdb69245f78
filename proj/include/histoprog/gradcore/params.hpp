#pragma once

#include <string>
#include <vector>

#include "histoprog/gradcore/rng.hpp"
#include "histoprog/gradcore/var.hpp"

namespace histoprog::gradcore {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered collection of named trainable parameters.
class ParamSet {
 public:
  Var& add(std::string name, Tensor value);
  /// Adds every entry of `other`, keeping its names.
  void append(const ParamSet& other);

  const Var& at(const std::string& name) const;
  Var& at(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return vars_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Var>& vars() const { return vars_; }
  std::vector<Var>& vars() { return vars_; }

  void zero_grad();
  std::vector<NamedTensor> snapshot() const;
  /// Overwrites values from a snapshot with identical names and shapes.
  void load(const std::vector<NamedTensor>& values);
  /// Fresh parameter nodes holding copies of the current values.
  ParamSet clone() const;
  std::size_t parameter_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace histoprog::gradcore
