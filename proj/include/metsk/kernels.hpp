#pragma once

// Raw compute kernels behind the autodiff ops.
//
// Every kernel accumulates into its output (`out += ...`). Two implementations
// share each signature:
//   serial::   plain loops in the order the math is written; the reference.
//   parallel:: reordered loops with OpenMP over independent output rows.
//
// Parallel reductions split rows into a fixed number of chunks and combine the
// partial sums in chunk order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace metsk::kernels {

struct ConvDims {
  std::size_t rows;          // independent sequences (batch * nodes)
  std::size_t length;        // time points per sequence
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t taps;          // odd; zero "same" padding of taps / 2 on each side
};

struct MixDims {
  std::size_t groups;  // one graph per group
  std::size_t nodes;
  std::size_t width;   // features per node (length * channels)
};

#define METSK_KERNEL_SET                                                                          \
  /* c(m x n) += a(m x k) * b(k x n) */                                                           \
  void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,         \
               std::size_t m, std::size_t k, std::size_t n);                                      \
  /* c(m x n) += a(m x k) * b(n x k)^T */                                                         \
  void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,         \
               std::size_t m, std::size_t k, std::size_t n);                                      \
  /* c(m x n) += a(k x m)^T * b(k x n) */                                                         \
  void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,         \
               std::size_t m, std::size_t k, std::size_t n);                                      \
  /* y[g,p,:] += sum_q A[g,p,q] x[g,q,:]   (A[g,q,p] when transpose) */                           \
  void node_mix(std::span<const double> graphs, std::span<const double> x, std::span<double> y,   \
                const MixDims& d, bool transpose);                                                \
  /* y[r,l,o] += sum_{i,t} x[r, l + t - taps/2, i] * w[o,i,t] */                                  \
  void conv_time(std::span<const double> x, std::span<const double> w, std::span<double> y,       \
                 const ConvDims& d);                                                              \
  void conv_time_grad_input(std::span<const double> dy, std::span<const double> w,                \
                            std::span<double> dx, const ConvDims& d);                             \
  void conv_time_grad_kernel(std::span<const double> x, std::span<const double> dy,               \
                             std::span<double> dw, const ConvDims& d);                            \
  /* out[c] += sum_r x[r,c] */                                                                    \
  void column_sum(std::span<const double> x, std::span<double> out, std::size_t rows,             \
                  std::size_t cols);

namespace serial {
METSK_KERNEL_SET
}  // namespace serial

namespace parallel {
METSK_KERNEL_SET

// Threads available to parallel kernels (1 when built without OpenMP).
int max_threads();
}  // namespace parallel

#undef METSK_KERNEL_SET

}  // namespace metsk::kernels
