#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metsk/autodiff.hpp"
#include "metsk/tensor.hpp"

namespace metsk {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used by optimizers, hashing, and serialization.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<NamedTensor> entries);

  void add(std::string name, Tensor value);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  std::vector<Tensor> tensors() const;
  std::uint64_t hash() const;
  bool bitwise_equal(const ParamSet& other) const;

 private:
  std::vector<NamedTensor> entries_;
};

// Throws ValidationError unless names and shapes agree entry by entry.
void require_matching(const ParamSet& params, const ParamSet& grads, const char* what);

/// p <- p - lr * g for every entry. lr = 0 returns the inputs bitwise.
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamSet first_moment;   // empty until the first step
  ParamSet second_moment;
};

struct AdamResult {
  AdamState state;
  ParamSet params;
};

/// One bias-corrected Adam update. Moments are created on the first call and
/// must afterwards match params by name and shape.
AdamResult adam_step(AdamState state, const ParamSet& params, const ParamSet& grads, double lr);

// Builds a scalar loss on the tape from parameter handles bound in order.
using LossFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Reverse-mode gradient of loss_fn at params. Params are left untouched.
std::vector<Tensor> grad(const LossFunction& loss_fn, std::span<const Tensor> params);
ParamSet grad(const LossFunction& loss_fn, const ParamSet& params);

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because a perturbation changed some ReLU's sign pattern.
  std::size_t skipped_at_kinks = 0;
  // Some preactivation at the base point was exactly 0.
  bool base_point_at_kink = false;
};

/// Compares analytic gradients with central differences coordinate by
/// coordinate: |analytic - numeric| / max(1, |analytic|), maximized.
FiniteDiffReport finite_diff_check(const LossFunction& loss_fn, std::span<const Tensor> params, double eps);

}  // namespace metsk
