#include "histoprog/gradcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "histoprog/common/error.hpp"

namespace histoprog::gradcore {

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void tensors(const std::vector<NamedTensor>& ts) {
    u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
      str(t.name);
      u32(static_cast<std::uint32_t>(t.tensor.rank()));
      for (auto d : t.tensor.shape()) u64(d);
      for (double v : t.tensor.data()) f64(v);
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::vector<NamedTensor> tensors() {
    std::vector<NamedTensor> out;
    const auto n = u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      NamedTensor t;
      t.name = str();
      const auto rank = u32();
      Shape shape(rank);
      for (auto& d : shape) d = u64();
      const std::size_t count = shape_size(shape);
      need(count * 8);
      std::vector<double> data(count);
      for (auto& v : data) v = f64();
      t.tensor = Tensor(std::move(shape), std::move(data));
      out.push_back(std::move(t));
    }
    return out;
  }
  void bytes(std::size_t n) {
    need(n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ValidationError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw ValidationError("checkpoint has no tensor named " + name);
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw ValidationError("checkpoint has no metadata key " + key);
  return it->second;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  for (std::size_t i = 0; i < kMagicLen; ++i) w.u8(static_cast<std::uint8_t>(kCheckpointMagic[i]));
  w.u64(ckpt.seed);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.tensors(ckpt.tensors);
  w.u8(ckpt.optim ? 1 : 0);
  if (ckpt.optim) {
    w.f64(ckpt.optim->lr);
    w.f64(ckpt.optim->momentum);
    w.tensors(ckpt.optim->velocity);
  }
  w.u8(ckpt.ema ? 1 : 0);
  if (ckpt.ema) {
    w.f64(ckpt.ema->delta);
    w.tensors(ckpt.ema->teacher);
  }
  return w.take();
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen ||
      std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
    throw ValidationError("not a checkpoint: missing " + std::string(kCheckpointMagic) + " header");
  }
  Reader r(bytes);
  r.bytes(kMagicLen);
  Checkpoint ckpt;
  ckpt.seed = r.u64();
  const auto n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.str();
    ckpt.metadata[key] = r.str();
  }
  ckpt.tensors = r.tensors();
  if (r.u8()) {
    OptimSnapshot o;
    o.lr = r.f64();
    o.momentum = r.f64();
    o.velocity = r.tensors();
    ckpt.optim = std::move(o);
  }
  if (r.u8()) {
    EmaSnapshot e;
    e.delta = r.f64();
    e.teacher = r.tensors();
    ckpt.ema = std::move(e);
  }
  if (!r.done()) throw ValidationError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : serialize(ckpt)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

OptimSnapshot snapshot_optim(const OptimState& state, const ParamSet& params) {
  OptimSnapshot s{state.lr, state.momentum, {}};
  for (std::size_t i = 0; i < state.velocity.size() && i < params.size(); ++i) {
    s.velocity.push_back({params.names()[i], state.velocity[i]});
  }
  return s;
}

EmaSnapshot snapshot_ema(const EmaState& ema, const ParamSet& params) {
  EmaSnapshot s{ema.delta, {}};
  for (std::size_t i = 0; i < ema.teacher.size() && i < params.size(); ++i) {
    s.teacher.push_back({params.names()[i], ema.teacher[i]});
  }
  return s;
}

}  // namespace histoprog::gradcore
