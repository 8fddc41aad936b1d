#include "metsk/kernels.hpp"

namespace metsk::kernels::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void node_mix(std::span<const double> graphs, std::span<const double> x, std::span<double> y,
              const MixDims& d, bool transpose) {
  const std::size_t pp = d.nodes * d.nodes;
  const std::size_t block = d.nodes * d.width;
  for (std::size_t g = 0; g < d.groups; ++g) {
    for (std::size_t p = 0; p < d.nodes; ++p) {
      for (std::size_t w = 0; w < d.width; ++w) {
        double acc = 0.0;
        for (std::size_t q = 0; q < d.nodes; ++q) {
          const double a = transpose ? graphs[g * pp + q * d.nodes + p] : graphs[g * pp + p * d.nodes + q];
          acc += a * x[g * block + q * d.width + w];
        }
        y[g * block + p * d.width + w] += acc;
      }
    }
  }
}

void conv_time(std::span<const double> x, std::span<const double> w, std::span<double> y,
               const ConvDims& d) {
  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (long l = 0; l < len; ++l) {
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d.in_channels; ++i) {
          for (std::size_t t = 0; t < d.taps; ++t) {
            const long src = l + static_cast<long>(t) - half;
            if (src < 0 || src >= len) continue;
            acc += x[(r * d.length + static_cast<std::size_t>(src)) * d.in_channels + i] *
                   w[(o * d.in_channels + i) * d.taps + t];
          }
        }
        y[(r * d.length + static_cast<std::size_t>(l)) * d.out_channels + o] += acc;
      }
    }
  }
}

void conv_time_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          const ConvDims& d) {
  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (long src = 0; src < len; ++src) {
      for (std::size_t i = 0; i < d.in_channels; ++i) {
        double acc = 0.0;
        for (std::size_t o = 0; o < d.out_channels; ++o) {
          for (std::size_t t = 0; t < d.taps; ++t) {
            const long l = src - static_cast<long>(t) + half;
            if (l < 0 || l >= len) continue;
            acc += dy[(r * d.length + static_cast<std::size_t>(l)) * d.out_channels + o] *
                   w[(o * d.in_channels + i) * d.taps + t];
          }
        }
        dx[(r * d.length + static_cast<std::size_t>(src)) * d.in_channels + i] += acc;
      }
    }
  }
}

void conv_time_grad_kernel(std::span<const double> x, std::span<const double> dy, std::span<double> dw,
                           const ConvDims& d) {
  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    for (std::size_t i = 0; i < d.in_channels; ++i) {
      for (std::size_t t = 0; t < d.taps; ++t) {
        double acc = 0.0;
        for (std::size_t r = 0; r < d.rows; ++r) {
          for (long l = 0; l < len; ++l) {
            const long src = l + static_cast<long>(t) - half;
            if (src < 0 || src >= len) continue;
            acc += dy[(r * d.length + static_cast<std::size_t>(l)) * d.out_channels + o] *
                   x[(r * d.length + static_cast<std::size_t>(src)) * d.in_channels + i];
          }
        }
        dw[(o * d.in_channels + i) * d.taps + t] += acc;
      }
    }
  }
}

void column_sum(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += x[r * cols + c];
    out[c] += acc;
  }
}

}  // namespace metsk::kernels::serial
