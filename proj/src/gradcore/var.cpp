#include "histoprog/gradcore/var.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/kernels.hpp"

namespace histoprog::gradcore {

using kernels::Trans;

const Tensor& Var::value() const { return node_->value; }
Tensor& Var::mutable_value() { return node_->value; }
const Tensor& Var::grad() const { return node_->grad; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }
void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "param";
  return Var(std::move(node));
}

Var detach(const Var& v) { return constant(v.value()); }

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward, std::string op) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const Var& p) { return p.requires_grad(); });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ValidationError("backward() needs a single-element loss, got shape " +
                          shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].node();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

namespace {

enum class Bcast { same, scalar, row, col };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.size() == 1) return Bcast::scalar;
  const bool row_shape = (b.rank() == 1 && b.size() == a.cols()) ||
                         (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == a.cols());
  if (row_shape) return Bcast::row;
  if (b.rank() == 2 && b.dim(1) == 1 && b.dim(0) == a.rows()) return Bcast::col;
  throw ValidationError(std::string(op) + ": cannot broadcast " +
                        shape_string(b.shape()) + " onto " +
                        shape_string(a.shape()));
}

std::size_t bindex(Bcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Bcast::same: return i;
    case Bcast::scalar: return 0;
    case Bcast::row: return i % cols;
    case Bcast::col: return i / cols;
  }
  return 0;
}

template <class Fwd, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(av, bv, name);
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = fwd(av[i], bv[bindex(kind, i, cols)]);
  }
  return make_op(
      std::move(out), {a, b},
      [kind, cols, da, db](Node& self) {
        Node& pa = *self.parents[0].node();
        Node& pb = *self.parents[1].node();
        const Tensor& g = self.grad;
        const Tensor& av = pa.value;
        const Tensor& bv = pb.value;
        if (pa.requires_grad) {
          Tensor& ga = pa.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * da(av[i], bv[bindex(kind, i, cols)], self.value[i]);
          }
        }
        if (pb.requires_grad) {
          Tensor& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t j = bindex(kind, i, cols);
            gb[j] += g[i] * db(av[i], bv[j], self.value[i]);
          }
        }
      },
      name);
}

template <class Fwd, class Deriv>
Var unary(const Var& a, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_op(
      std::move(out), {a},
      [deriv](Node& self) {
        Node& pa = *self.parents[0].node();
        Tensor& ga = pa.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += self.grad[i] * deriv(pa.value[i], self.value[i]);
        }
      },
      name);
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ValidationError(std::string(op) + " expects rank " +
                          std::to_string(rank) + ", got " +
                          shape_string(a.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ValidationError("matmul: inner dimensions differ " +
                          shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::gemm(a.value().data(), b.value().data(), out.data(), m, k, n,
                Trans::no, Trans::no);
  return make_op(
      std::move(out), {a, b},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0].node();
        Node& pb = *self.parents[1].node();
        if (pa.requires_grad) {
          kernels::gemm(self.grad.data(), pb.value.data(), pa.grad_buffer().data(),
                        m, n, k, Trans::no, Trans::yes, true);
        }
        if (pb.requires_grad) {
          kernels::gemm(pa.value.data(), self.grad.data(), pb.grad_buffer().data(),
                        k, m, n, Trans::yes, Trans::no, true);
        }
      },
      "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
  if (b.value().dim(1) != k) {
    throw ValidationError("matmul_nt: inner dimensions differ " +
                          shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::gemm(a.value().data(), b.value().data(), out.data(), m, k, n,
                Trans::no, Trans::yes);
  return make_op(
      std::move(out), {a, b},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0].node();
        Node& pb = *self.parents[1].node();
        if (pa.requires_grad) {
          kernels::gemm(self.grad.data(), pb.value.data(), pa.grad_buffer().data(),
                        m, n, k, Trans::no, Trans::no, true);
        }
        if (pb.requires_grad) {
          kernels::gemm(self.grad.data(), pa.value.data(), pb.grad_buffer().data(),
                        n, m, k, Trans::yes, Trans::no, true);
        }
      },
      "matmul_nt");
}

Var bmm(const Var& a, const Var& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t bs = a.value().dim(0), m = a.value().dim(1), k = a.value().dim(2);
  const std::size_t n = b.value().dim(2);
  if (b.value().dim(0) != bs || b.value().dim(1) != k) {
    throw ValidationError("bmm: incompatible shapes " + shape_string(a.shape()) +
                          " x " + shape_string(b.shape()));
  }
  Tensor out({bs, m, n});
  kernels::gemm_batched(a.value().data(), b.value().data(), out.data(), bs, m, k,
                        n, Trans::no, Trans::no);
  return make_op(
      std::move(out), {a, b},
      [bs, m, k, n](Node& self) {
        Node& pa = *self.parents[0].node();
        Node& pb = *self.parents[1].node();
        if (pa.requires_grad) {
          kernels::gemm_batched(self.grad.data(), pb.value.data(),
                                pa.grad_buffer().data(), bs, m, n, k, Trans::no,
                                Trans::yes, true);
        }
        if (pb.requires_grad) {
          kernels::gemm_batched(pa.value.data(), self.grad.data(),
                                pb.grad_buffer().data(), bs, k, m, n, Trans::yes,
                                Trans::no, true);
        }
      },
      "bmm");
}

Var bmm_nt(const Var& a, const Var& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  const std::size_t bs = a.value().dim(0), m = a.value().dim(1), k = a.value().dim(2);
  const std::size_t n = b.value().dim(1);
  if (b.value().dim(0) != bs || b.value().dim(2) != k) {
    throw ValidationError("bmm_nt: incompatible shapes " + shape_string(a.shape()) +
                          " x " + shape_string(b.shape()));
  }
  Tensor out({bs, m, n});
  kernels::gemm_batched(a.value().data(), b.value().data(), out.data(), bs, m, k,
                        n, Trans::no, Trans::yes);
  return make_op(
      std::move(out), {a, b},
      [bs, m, k, n](Node& self) {
        Node& pa = *self.parents[0].node();
        Node& pb = *self.parents[1].node();
        if (pa.requires_grad) {
          kernels::gemm_batched(self.grad.data(), pb.value.data(),
                                pa.grad_buffer().data(), bs, m, n, k, Trans::no,
                                Trans::no, true);
        }
        if (pb.requires_grad) {
          kernels::gemm_batched(self.grad.data(), pa.value.data(),
                                pb.grad_buffer().data(), bs, n, m, k, Trans::yes,
                                Trans::no, true);
        }
      },
      "bmm_nt");
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return make_op(
      std::move(out), {a},
      [m, n](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
      },
      "transpose");
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * cols];
    double* y = &out[r * cols];
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return make_op(
      std::move(out), {a},
      [rows, cols](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &self.value[r * cols];
          const double* g = &self.grad[r * cols];
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (g[c] - dot);
        }
      },
      "softmax");
}

Var log_softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * cols];
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  return make_op(
      std::move(out), {a},
      [rows, cols](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = &self.grad[r * cols];
          double gsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
          for (std::size_t c = 0; c < cols; ++c) {
            ga[r * cols + c] += g[c] - std::exp(self.value[r * cols + c]) * gsum;
          }
        }
      },
      "log_softmax");
}

Var l2_normalize_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += av[r * cols + c] * av[r * cols + c];
    norms[r] = std::sqrt(ss);
    if (!(norms[r] > 0.0)) {
      throw ValidationError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] / norms[r];
  }
  return make_op(
      std::move(out), {a},
      [rows, cols, norms = std::move(norms)](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &self.value[r * cols];
          const double* g = &self.grad[r * cols];
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c) {
            ga[r * cols + c] += (g[c] - y[c] * dot) / norms[r];
          }
        }
      },
      "l2_normalize");
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op(
      Tensor::scalar(total), {a},
      [](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      },
      "sum");
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += av[r * cols + c];
    out[r] = total;
  }
  return make_op(
      std::move(out), {a},
      [rows, cols](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[r];
      },
      "sum_rows");
}

Var sum_cols(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
  return make_op(
      std::move(out), {a},
      [rows, cols](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[c];
      },
      "sum_cols");
}

Var reshape(const Var& a, Shape shape) {
  return make_op(
      a.value().reshaped(std::move(shape)), {a},
      [](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
      },
      "reshape");
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  const std::size_t cols = a.value().cols();
  if (begin >= end || end > a.value().dim(0)) {
    throw ValidationError("slice_rows: bad range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") for " + shape_string(a.shape()));
  }
  std::vector<double> data(a.value().data().begin() + begin * cols,
                           a.value().data().begin() + end * cols);
  return make_op(
      Tensor({end - begin, cols}, std::move(data)), {a},
      [begin, cols](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * cols + i] += self.grad[i];
      },
      "slice_rows");
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  if (begin >= end || end > cols) {
    throw ValidationError("slice_cols: bad range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") for " + shape_string(a.shape()));
  }
  const std::size_t width = end - begin;
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = a.value()[r * cols + begin + c];
  return make_op(
      std::move(out), {a},
      [rows, cols, begin, width](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < width; ++c)
            ga[r * cols + begin + c] += self.grad[r * width + c];
      },
      "slice_cols");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const std::size_t cols = parts.front().value().cols();
  std::vector<double> data;
  std::vector<std::size_t> offsets{0};
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw ValidationError("concat_rows: column mismatch");
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    offsets.push_back(data.size());
  }
  const std::size_t rows = data.size() / cols;
  return make_op(
      Tensor({rows, cols}, std::move(data)), {parts.begin(), parts.end()},
      [offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          Node& p = *self.parents[k].node();
          if (!p.requires_grad) continue;
          Tensor& gp = p.grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[offsets[k] + i];
        }
      },
      "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw ValidationError("concat_cols: row mismatch");
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = pv[r * widths[k] + c];
    offset += widths[k];
  }
  return make_op(
      std::move(out), {parts.begin(), parts.end()},
      [rows, total, widths](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          Node& p = *self.parents[k].node();
          if (p.requires_grad) {
            Tensor& gp = p.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c)
                gp[r * widths[k] + c] += self.grad[r * total + offset + c];
          }
          offset += widths[k];
        }
      },
      "concat_cols");
}

Var segment_max_rows(const Var& a, std::span<const std::size_t> offsets) {
  require_rank(a, 2, "segment_max_rows");
  const std::size_t cols = a.value().cols();
  if (offsets.size() < 2 || offsets.back() != a.value().dim(0)) {
    throw ValidationError("segment_max_rows: offsets must end at the row count");
  }
  const std::size_t segs = offsets.size() - 1;
  Tensor out({segs, cols});
  std::vector<std::size_t> argmax(segs * cols);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s] >= offsets[s + 1]) throw ValidationError("segment_max_rows: empty segment");
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = offsets[s];
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
        if (a.value()[r * cols + c] > a.value()[best * cols + c]) best = r;
      }
      argmax[s * cols + c] = best;
      out[s * cols + c] = a.value()[best * cols + c];
    }
  }
  return make_op(
      std::move(out), {a},
      [cols, argmax = std::move(argmax)](Node& self) {
        Tensor& ga = self.parents[0].node()->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) {
          ga[argmax[i] * cols + i % cols] += self.grad[i];
        }
      },
      "segment_max");
}

}  // namespace histoprog::gradcore
