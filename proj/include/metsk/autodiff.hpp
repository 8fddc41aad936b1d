#pragma once

// Eager reverse-mode differentiation.
//
// A Tape records every primitive as it executes. Values live on the tape and
// are referenced through Var handles; gradient() replays the records in
// reverse. A tape belongs to one thread for its whole lifetime.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "metsk/tensor.hpp"

namespace metsk {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Adds grad_out's contribution to the accumulators of the node's inputs.
  // `self` is the id of the node being differentiated.
  using Backward = std::function<void(Tape&, std::size_t self, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records a differentiable primitive. The backward closure is dropped when
  // no input requires a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);

  // Records a primitive with no derivative. Reaching it during gradient()
  // raises an error naming the op.
  Var record_nondifferentiable(const char* op, Tensor value, std::initializer_list<Var> inputs);

  // One gradient per entry of wrt, shape-matched; zero where the loss does
  // not depend on the variable. The loss must hold a single element.
  std::vector<Tensor> gradient(Var loss, std::span<const Var> wrt);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Zero-initialized on first use; only meaningful inside gradient().
  Tensor& grad_accumulator(std::size_t id);

  // ReLU kink bookkeeping for finite-difference checks: a hash of every
  // recorded ReLU sign pattern plus the smallest |preactivation| seen.
  void track_relu_kinks(bool on) { track_kinks_ = on; }
  void note_relu_input(std::span<const double> pre);
  std::uint64_t relu_signature() const { return relu_signature_; }
  double min_relu_margin() const { return min_relu_margin_; }
  bool relu_at_kink() const { return relu_at_kink_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool differentiable = true;
    const char* op = "leaf";
    Backward backward;
  };

  std::deque<Node> nodes_;
  std::vector<Tensor>* grads_ = nullptr;

  bool track_kinks_ = false;
  std::uint64_t relu_signature_ = 1469598103934665603ULL;
  double min_relu_margin_ = 0.0;
  bool relu_seen_ = false;
  bool relu_at_kink_ = false;
};

// ---- primitives -----------------------------------------------------------
// Shapes are checked at every boundary; mismatches raise ValidationError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// a[..., K] x b[K, N] -> [..., N]
Var matmul(Var a, Var b);
// a[M, K] x b[N, K]^T -> [M, N]
Var matmul_nt(Var a, Var b);
// a[..., C] + bias[C]
Var add_bias(Var a, Var bias);

// graphs[G, P, P] (constant) mixes nodes of a[G, P, ...].
Var node_mix(const Tensor& graphs, Var a);
// a[..., L, Cin] convolved along L with kernel[Cout, Cin, K] (K odd, zero "same" padding).
Var conv_time(Var a, Var kernel);

Var sum(Var a);
Var mean(Var a);
// Averages axes [first, last) away: [A..., M..., B...] -> [A..., B...].
Var mean_axes(Var a, std::size_t first, std::size_t last);
// [M, N] -> [M]
Var sum_rows(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// log sum_j mask[i,j] exp(a[i,j]) for a[M, N]; each row needs one unmasked entry.
Var logsumexp_rows(Var a, const Tensor& mask);
// Rows scaled to unit Euclidean norm; zero rows are rejected.
Var normalize_rows(Var a);
// Euclidean norm of all elements.
Var norm(Var a);

// Concatenation along axis 0.
Var concat(std::span<const Var> parts);
// Rows [begin, end) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// [N, N] -> [N]
Var diagonal(Var a);
// out[i] = a[i, index[i]]
Var gather_rows(Var a, std::span<const int> index);
// Row-wise argmax as doubles; has no derivative.
Var argmax_rows(Var a);

}  // namespace metsk
