#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/optim.hpp"
#include "histoprog/gradcore/params.hpp"

namespace histoprog::gradcore {

inline constexpr char kCheckpointMagic[] = "HISTOPROG-CKPT-1";

struct OptimSnapshot {
  double lr = 0.0;
  double momentum = 0.0;
  std::vector<NamedTensor> velocity;
  friend bool operator==(const OptimSnapshot&, const OptimSnapshot&) = default;
};

struct EmaSnapshot {
  double delta = 0.0;
  std::vector<NamedTensor> teacher;
  friend bool operator==(const EmaSnapshot&, const EmaSnapshot&) = default;
};

/// Self-describing container: named parameter tensors, optional optimizer
/// and EMA state, the RNG seed, and free-form string metadata (model kind,
/// layer sizes, ...). Immutable once built; safe to share between threads.
///
/// Layout (all integers and floats little-endian):
///   magic[16] seed:u64
///   n_meta:u32 { key:str value:str }
///   tensors
///   has_optim:u8 [lr:f64 momentum:f64 tensors]
///   has_ema:u8 [delta:f64 tensors]
/// where str = len:u32 bytes, and tensors = n:u32 { name:str rank:u32
/// dims:u64[rank] data:f64[prod(dims)] }.
struct Checkpoint {
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;
  std::optional<OptimSnapshot> optim;
  std::optional<EmaSnapshot> ema;

  const Tensor& tensor(const std::string& name) const;
  const std::string& meta(const std::string& key) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the serialized bytes; equal hashes across runs signal
/// identical parameters and state.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

/// Raised by trainers when the loss blows up; carries the last checkpoint
/// taken before the divergent step.
class DivergenceError : public RuntimeFailure {
 public:
  DivergenceError(const std::string& what, Checkpoint last_stable)
      : RuntimeFailure(what), last_stable_(std::move(last_stable)) {}
  const Checkpoint& last_stable() const { return last_stable_; }

 private:
  Checkpoint last_stable_;
};

OptimSnapshot snapshot_optim(const OptimState& state, const ParamSet& params);
EmaSnapshot snapshot_ema(const EmaState& ema, const ParamSet& params);

}  // namespace histoprog::gradcore
