#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metsk {

using Shape = std::vector<std::size_t>;

// Raised for malformed inputs: shape mismatches, out-of-range hyperparameters,
// bad files. The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }
  double* data() noexcept { return values_.data(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double item() const;
  bool all_finite() const noexcept;

  // Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  // Bitwise comparison of shape and every stored byte.
  bool bitwise_equal(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// FNV-1a over shape and raw value bytes.
std::uint64_t hash_bytes(const Tensor& tensor, std::uint64_t seed = 1469598103934665603ULL);

void require_shape(const Tensor& tensor, const Shape& expected, const char* what);

}  // namespace metsk
