#include "metsk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "metsk/kernels.hpp"

namespace metsk {

namespace kp = kernels::parallel;

const Tensor& Var::value() const {
  if (!tape_) throw ValidationError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw ValidationError("non-finite value in tape leaf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
  if (!value.all_finite()) throw std::domain_error(std::string("non-finite value produced by ") + op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ValidationError(std::string(op) + ": input belongs to another tape");
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record_nondifferentiable(const char* op, Tensor value, std::initializer_list<Var> inputs) {
  Var out = record(op, std::move(value), inputs, nullptr);
  nodes_[out.id_].differentiable = false;
  return out;
}

Tensor& Tape::grad_accumulator(std::size_t id) {
  if (!grads_) throw std::logic_error("grad_accumulator outside gradient()");
  Tensor& g = (*grads_)[id];
  if (g.empty()) g = Tensor(nodes_[id].value.shape(), 0.0);
  return g;
}

std::vector<Tensor> Tape::gradient(Var loss, std::span<const Var> wrt) {
  if (loss.tape_ != this) throw ValidationError("gradient: loss belongs to another tape");
  if (nodes_[loss.id_].value.size() != 1) {
    throw ValidationError("gradient requires a scalar loss, got shape " +
                          shape_string(nodes_[loss.id_].value.shape()));
  }
  std::vector<bool> wanted(nodes_.size(), false);
  for (const Var& w : wrt) {
    if (w.tape_ != this) throw ValidationError("gradient: parameter belongs to another tape");
    wanted[w.id_] = true;
  }

  std::vector<Tensor> grads(nodes_.size());
  struct Guard {
    Tape* tape;
    ~Guard() { tape->grads_ = nullptr; }
  } guard{this};
  grads_ = &grads;

  grads[loss.id_] = Tensor(nodes_[loss.id_].value.shape(), 1.0);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads[id].empty() || !node.requires_grad) continue;
    if (!node.differentiable) {
      throw ValidationError(std::string("unsupported primitive in gradient path: ") + node.op);
    }
    if (node.backward) {
      node.backward(*this, id, grads[id]);
      if (!wanted[id]) grads[id] = Tensor();
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    Tensor g = grads[w.id_];
    if (g.empty()) g = Tensor(nodes_[w.id_].value.shape(), 0.0);
    out.push_back(std::move(g));
  }
  return out;
}

void Tape::note_relu_input(std::span<const double> pre) {
  if (!track_kinks_) return;
  constexpr std::uint64_t kPrime = 1099511628211ULL;
  for (double v : pre) {
    const unsigned char bit = v > 0.0 ? 1 : 0;
    relu_signature_ ^= bit;
    relu_signature_ *= kPrime;
    const double margin = std::abs(v);
    if (!relu_seen_ || margin < min_relu_margin_) min_relu_margin_ = margin;
    relu_seen_ = true;
    if (v == 0.0) relu_at_kink_ = true;
  }
}

// ---------------------------------------------------------------------------

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

void require_rank(Var a, std::size_t min_rank, const char* op) {
  if (a.shape().size() < min_rank) {
    throw ValidationError(std::string(op) + ": expected rank >= " + std::to_string(min_rank) + ", got " +
                          shape_string(a.shape()));
  }
}

void accumulate(Tape& tape, Var v, const Tensor& g) {
  if (!v.requires_grad()) return;
  Tensor& acc = tape.grad_accumulator(v.id());
  double* d = acc.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

// Treats the last axis as columns: returns {rows, cols}.
std::pair<std::size_t, std::size_t> row_split(const Shape& s) {
  const std::size_t cols = s.back();
  return {shape_size(s) / cols, cols};
}

template <class F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    accumulate(t, a, g);
    if (b.requires_grad()) {
      Tensor& acc = t.grad_accumulator(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& acc = t.grad_accumulator(a.id());
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& acc = t.grad_accumulator(b.id());
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = map(a.value(), [factor](double v) { return v * factor; });
  return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * factor;
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = map(a.value(), [offset](double v) { return v + offset; });
  return a.tape().record("add_scalar", std::move(out), {a},
                         [a](Tape& t, std::size_t, const Tensor& g) { accumulate(t, a, g); });
}

Var relu(Var a) {
  Tape& tape = a.tape();
  tape.note_relu_input(a.value().values());
  Tensor out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  // derivative at exactly 0 is taken as 0
  return tape.record("relu", std::move(out), {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) acc[i] += g[i];
  });
}

Var exp(Var a) {
  Tensor out = map(a.value(), [](double v) { return std::exp(v); });
  return a.tape().record("exp", std::move(out), {a}, [a](Tape& t, std::size_t self, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value");
  }
  Tensor out = map(a.value(), [](double v) { return std::log(v); });
  return a.tape().record("log", std::move(out), {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] / av[i];
  });
}

Var matmul(Var a, Var b) {
  require_rank(a, 1, "matmul");
  if (b.shape().size() != 2) throw ValidationError("matmul: right operand must be a matrix, got " + shape_string(b.shape()));
  const std::size_t k = a.shape().back();
  if (b.shape()[0] != k) {
    throw ValidationError("matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
  }
  const std::size_t n = b.shape()[1];
  const std::size_t m = a.value().size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out(out_shape, 0.0);
  kp::gemm_nn(a.value().values(), b.value().values(), out.values(), m, k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t, const Tensor& g) {
    if (a.requires_grad()) kp::gemm_nt(g.values(), b.value().values(), t.grad_accumulator(a.id()).values(), m, n, k);
    if (b.requires_grad()) kp::gemm_tn(a.value().values(), g.values(), t.grad_accumulator(b.id()).values(), k, m, n);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1]) {
    throw ValidationError("matmul_nt: incompatible shapes " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor out({m, n}, 0.0);
  kp::gemm_nt(a.value().values(), b.value().values(), out.values(), m, k, n);
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t, const Tensor& g) {
    // C = A B^T: dA = G B, dB = G^T A
    if (a.requires_grad()) kp::gemm_nn(g.values(), b.value().values(), t.grad_accumulator(a.id()).values(), m, n, k);
    if (b.requires_grad()) kp::gemm_tn(g.values(), a.value().values(), t.grad_accumulator(b.id()).values(), n, m, k);
  });
}

Var add_bias(Var a, Var bias) {
  require_rank(a, 1, "add_bias");
  if (bias.shape().size() != 1 || bias.shape()[0] != a.shape().back()) {
    throw ValidationError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                          shape_string(a.shape()));
  }
  const auto [rows, cols] = row_split(a.shape());
  Tensor out = a.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return a.tape().record("add_bias", std::move(out), {a, bias},
                         [a, bias, rows, cols](Tape& t, std::size_t, const Tensor& g) {
                           accumulate(t, a, g);
                           if (bias.requires_grad())
                             kp::column_sum(g.values(), t.grad_accumulator(bias.id()).values(), rows, cols);
                         });
}

Var node_mix(const Tensor& graphs, Var a) {
  require_rank(a, 2, "node_mix");
  if (graphs.rank() != 3 || graphs.dim(0) != a.shape()[0] || graphs.dim(1) != a.shape()[1] ||
      graphs.dim(2) != a.shape()[1]) {
    throw ValidationError("node_mix: graphs " + shape_string(graphs.shape()) + " do not match input " +
                          shape_string(a.shape()));
  }
  const kernels::MixDims d{a.shape()[0], a.shape()[1], a.value().size() / (a.shape()[0] * a.shape()[1])};
  Tensor out(a.shape(), 0.0);
  kp::node_mix(graphs.values(), a.value().values(), out.values(), d, false);
  // The graphs are data, not parameters; the closure holds its own copy.
  return a.tape().record("node_mix", std::move(out), {a}, [a, graphs, d](Tape& t, std::size_t, const Tensor& g) {
    kp::node_mix(graphs.values(), g.values(), t.grad_accumulator(a.id()).values(), d, true);
  });
}

Var conv_time(Var a, Var kernel) {
  require_rank(a, 2, "conv_time");
  const Shape& ks = kernel.shape();
  if (ks.size() != 3) throw ValidationError("conv_time: kernel must be [Cout, Cin, K], got " + shape_string(ks));
  const std::size_t cin = a.shape().back();
  if (ks[1] != cin) {
    throw ValidationError("conv_time: kernel " + shape_string(ks) + " does not match input channels of " +
                          shape_string(a.shape()));
  }
  if (ks[2] % 2 == 0) throw ValidationError("conv_time: kernel size must be odd, got " + std::to_string(ks[2]));
  const std::size_t length = a.shape()[a.shape().size() - 2];
  const kernels::ConvDims d{a.value().size() / (length * cin), length, cin, ks[0], ks[2]};
  Shape out_shape = a.shape();
  out_shape.back() = ks[0];
  Tensor out(out_shape, 0.0);
  kp::conv_time(a.value().values(), kernel.value().values(), out.values(), d);
  return a.tape().record("conv_time", std::move(out), {a, kernel}, [a, kernel, d](Tape& t, std::size_t, const Tensor& g) {
    if (a.requires_grad())
      kp::conv_time_grad_input(g.values(), kernel.value().values(), t.grad_accumulator(a.id()).values(), d);
    if (kernel.requires_grad())
      kp::conv_time_grad_kernel(a.value().values(), g.values(), t.grad_accumulator(kernel.id()).values(), d);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[0];
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record("mean", Tensor::scalar(s / n), {a}, [a, n](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    const double gv = g[0] / n;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gv;
  });
}

Var mean_axes(Var a, std::size_t first, std::size_t last) {
  const Shape& s = a.shape();
  if (first >= last || last > s.size() || (last - first) == s.size()) {
    throw ValidationError("mean_axes: invalid axis range for " + shape_string(s));
  }
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t i = 0; i < first; ++i) outer *= s[i];
  for (std::size_t i = first; i < last; ++i) mid *= s[i];
  for (std::size_t i = last; i < s.size(); ++i) inner *= s[i];
  Shape out_shape(s.begin(), s.begin() + static_cast<long>(first));
  out_shape.insert(out_shape.end(), s.begin() + static_cast<long>(last), s.end());
  Tensor out(out_shape, 0.0);
  const Tensor& av = a.value();
  const double inv = 1.0 / static_cast<double>(mid);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    for (std::size_t m = 0; m < mid; ++m) {
      const double* src = av.data() + (o * mid + m) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) dst[i] *= inv;
  }
  return a.tape().record("mean_axes", std::move(out), {a}, [a, outer, mid, inner, inv](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t m = 0; m < mid; ++m) {
        double* dst = acc.data() + (o * mid + m) * inner;
        const double* src = g.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
      }
  });
}

Var sum_rows(Var a) {
  if (a.shape().size() != 2) throw ValidationError("sum_rows: expected a matrix, got " + shape_string(a.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out({rows}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += a.value()[r * cols + c];
  return a.tape().record("sum_rows", std::move(out), {a}, [a, rows, cols](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) acc[r * cols + c] += g[r];
  });
}

namespace {

Tensor softmax_values(const Tensor& a) {
  const auto [rows, cols] = row_split(a.shape());
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return out;
}

}  // namespace

Var softmax_rows(Var a) {
  require_rank(a, 1, "softmax_rows");
  const auto [rows, cols] = row_split(a.shape());
  return a.tape().record("softmax_rows", softmax_values(a.value()), {a},
                         [a, rows, cols](Tape& t, std::size_t self, const Tensor& g) {
                           Tensor& acc = t.grad_accumulator(a.id());
                           const Tensor& y = t.value(self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                             for (std::size_t c = 0; c < cols; ++c)
                               acc[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                           }
                         });
}

Var log_softmax_rows(Var a) {
  require_rank(a, 1, "log_softmax_rows");
  const auto [rows, cols] = row_split(a.shape());
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  return a.tape().record("log_softmax_rows", std::move(out), {a},
                         [a, rows, cols](Tape& t, std::size_t self, const Tensor& g) {
                           Tensor& acc = t.grad_accumulator(a.id());
                           const Tensor& y = t.value(self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double gs = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                             for (std::size_t c = 0; c < cols; ++c)
                               acc[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gs;
                           }
                         });
}

Var logsumexp_rows(Var a, const Tensor& mask) {
  if (a.shape().size() != 2) throw ValidationError("logsumexp_rows: expected a matrix, got " + shape_string(a.shape()));
  require_shape(mask, a.shape(), "logsumexp_rows mask");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out({rows});
  Tensor weights(a.shape(), 0.0);  // softmax over unmasked entries
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * cols;
    const double* m = mask.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (m[c] != 0.0) mx = std::max(mx, x[c]);
    if (!std::isfinite(mx)) throw ValidationError("logsumexp_rows: row " + std::to_string(r) + " is fully masked");
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (m[c] != 0.0) z += (weights[r * cols + c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) weights[r * cols + c] /= z;
    out[r] = mx + std::log(z);
  }
  return a.tape().record("logsumexp_rows", std::move(out), {a},
                         [a, weights = std::move(weights), rows, cols](Tape& t, std::size_t, const Tensor& g) {
                           Tensor& acc = t.grad_accumulator(a.id());
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) acc[r * cols + c] += g[r] * weights[r * cols + c];
                         });
}

Var normalize_rows(Var a) {
  require_rank(a, 1, "normalize_rows");
  const auto [rows, cols] = row_split(a.shape());
  Tensor out(a.shape());
  Tensor norms({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += x[c] * x[c];
    if (!(ss > 0.0)) throw ValidationError("normalize_rows: row " + std::to_string(r) + " has zero norm");
    norms[r] = std::sqrt(ss);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] / norms[r];
  }
  return a.tape().record("normalize_rows", std::move(out), {a},
                         [a, norms = std::move(norms), rows, cols](Tape& t, std::size_t self, const Tensor& g) {
                           // d(x/|x|) = (g - y (y.g)) / |x|
                           Tensor& acc = t.grad_accumulator(a.id());
                           const Tensor& y = t.value(self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
                             for (std::size_t c = 0; c < cols; ++c)
                               acc[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * dot) / norms[r];
                           }
                         });
}

Var norm(Var a) {
  double ss = 0.0;
  for (double v : a.value().values()) ss += v * v;
  const double n = std::sqrt(ss);
  return a.tape().record("norm", Tensor::scalar(n), {a}, [a, n](Tape& t, std::size_t, const Tensor& g) {
    if (n == 0.0) return;  // subgradient 0 at the origin
    Tensor& acc = t.grad_accumulator(a.id());
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[0] * av[i] / n;
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const Var& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail) throw ValidationError("concat: trailing shape mismatch " + shape_string(p.shape()));
    rows += p.shape()[0];
  }
  Shape out_shape{rows};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  std::vector<double> data;
  data.reserve(shape_size(out_shape));
  for (const Var& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat", Tensor(out_shape, std::move(data)), parts,
                                [inputs](Tape& t, std::size_t, const Tensor& g) {
                                  std::size_t offset = 0;
                                  for (const Var& p : inputs) {
                                    const std::size_t n = p.value().size();
                                    if (p.requires_grad()) {
                                      Tensor& acc = t.grad_accumulator(p.id());
                                      for (std::size_t i = 0; i < n; ++i) acc[i] += g[offset + i];
                                    }
                                    offset += n;
                                  }
                                });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  require_rank(a, 1, "slice_rows");
  if (begin >= end || end > a.shape()[0]) {
    throw ValidationError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") invalid for " + shape_string(a.shape()));
  }
  const std::size_t row = a.value().size() / a.shape()[0];
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  std::vector<double> data(a.value().data() + begin * row, a.value().data() + end * row);
  return a.tape().record("slice_rows", Tensor(out_shape, std::move(data)), {a},
                         [a, begin, row](Tape& t, std::size_t, const Tensor& g) {
                           Tensor& acc = t.grad_accumulator(a.id());
                           for (std::size_t i = 0; i < g.size(); ++i) acc[begin * row + i] += g[i];
                         });
}

Var diagonal(Var a) {
  if (a.shape().size() != 2 || a.shape()[0] != a.shape()[1]) {
    throw ValidationError("diagonal: expected a square matrix, got " + shape_string(a.shape()));
  }
  const std::size_t n = a.shape()[0];
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  return a.tape().record("diagonal", std::move(out), {a}, [a, n](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < n; ++i) acc[i * n + i] += g[i];
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  if (a.shape().size() != 2 || a.shape()[0] != index.size()) {
    throw ValidationError("gather_rows: " + std::to_string(index.size()) + " indices for " + shape_string(a.shape()));
  }
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out({rows});
  std::vector<int> idx(index.begin(), index.end());
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= cols) {
      throw ValidationError("gather_rows: index " + std::to_string(idx[r]) + " out of range for row " + std::to_string(r));
    }
    out[r] = a.value()[r * cols + static_cast<std::size_t>(idx[r])];
  }
  return a.tape().record("gather_rows", std::move(out), {a}, [a, idx = std::move(idx), cols](Tape& t, std::size_t, const Tensor& g) {
    Tensor& acc = t.grad_accumulator(a.id());
    for (std::size_t r = 0; r < idx.size(); ++r) acc[r * cols + static_cast<std::size_t>(idx[r])] += g[r];
  });
}

Var argmax_rows(Var a) {
  require_rank(a, 1, "argmax_rows");
  const auto [rows, cols] = row_split(a.shape());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * cols;
    out[r] = static_cast<double>(std::max_element(x, x + cols) - x);
  }
  return a.tape().record_nondifferentiable("argmax_rows", std::move(out), {a});
}

}  // namespace metsk
