#include <algorithm>
#include <vector>

#include "metsk/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace metsk::kernels::parallel {

namespace {

// Fixed split for reductions; partials are combined in chunk order.
constexpr std::size_t kChunks = 32;

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 14;

std::size_t chunk_begin(std::size_t chunk, std::size_t chunks, std::size_t total) {
  return total * chunk / chunks;
}

// Runs body(lo, hi, partial) for each chunk of [0, total) and sums the
// partials of `width` doubles into out in chunk order.
template <class Body>
void chunked_reduce(std::size_t total, std::size_t width, std::size_t work, std::span<double> out,
                    Body&& body) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min(kChunks, total));
  std::vector<double> partial(chunks * width, 0.0);
  const auto n = static_cast<long>(chunks);
#pragma omp parallel for schedule(static) if (work >= kMinParallelWork)
  for (long c = 0; c < n; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    body(chunk_begin(cu, chunks, total), chunk_begin(cu + 1, chunks, total),
         std::span<double>(partial.data() + cu * width, width));
  }
  for (std::size_t c = 0; c < chunks; ++c) {
    const double* p = partial.data() + c * width;
    for (std::size_t j = 0; j < width; ++j) out[j] += p[j];
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kMinParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kMinParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  chunked_reduce(k, m * n, m * k * n, c, [&](std::size_t lo, std::size_t hi, std::span<double> part) {
    for (std::size_t p = lo; p < hi; ++p) {
      const double* arow = a.data() + p * m;
      const double* brow = b.data() + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* prow = part.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) prow[j] += av * brow[j];
      }
    }
  });
}

void node_mix(std::span<const double> graphs, std::span<const double> x, std::span<double> y,
              const MixDims& d, bool transpose) {
  const std::size_t pp = d.nodes * d.nodes;
  const std::size_t block = d.nodes * d.width;
  const auto total = static_cast<long>(d.groups * d.nodes);
#pragma omp parallel for schedule(static) if (d.groups * pp * d.width >= kMinParallelWork)
  for (long gp = 0; gp < total; ++gp) {
    const auto g = static_cast<std::size_t>(gp) / d.nodes;
    const auto p = static_cast<std::size_t>(gp) % d.nodes;
    double* yrow = y.data() + g * block + p * d.width;
    for (std::size_t q = 0; q < d.nodes; ++q) {
      const double av = transpose ? graphs[g * pp + q * d.nodes + p] : graphs[g * pp + p * d.nodes + q];
      if (av == 0.0) continue;
      const double* xrow = x.data() + g * block + q * d.width;
      for (std::size_t w = 0; w < d.width; ++w) yrow[w] += av * xrow[w];
    }
  }
}

void conv_time(std::span<const double> x, std::span<const double> w, std::span<double> y,
               const ConvDims& d) {
  const std::size_t ci = d.in_channels;
  const std::size_t co = d.out_channels;
  // wt[t][i][o] so the innermost loop runs over contiguous output channels.
  std::vector<double> wt(d.taps * ci * co);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < d.taps; ++t) wt[(t * ci + i) * co + o] = w[(o * ci + i) * d.taps + t];

  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  const auto rows = static_cast<long>(d.rows);
#pragma omp parallel for schedule(static) if (d.rows * d.length * ci * co * d.taps >= kMinParallelWork)
  for (long r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<std::size_t>(r) * d.length * ci;
    double* yr = y.data() + static_cast<std::size_t>(r) * d.length * co;
    for (long l = 0; l < len; ++l) {
      double* yrow = yr + static_cast<std::size_t>(l) * co;
      const long t_lo = std::max(0L, half - l);
      const long t_hi = std::min(static_cast<long>(d.taps), len - l + half);
      for (long t = t_lo; t < t_hi; ++t) {
        const double* xrow = xr + static_cast<std::size_t>(l + t - half) * ci;
        const double* wrow = wt.data() + static_cast<std::size_t>(t) * ci * co;
        for (std::size_t i = 0; i < ci; ++i) {
          const double xv = xrow[i];
          const double* wv = wrow + i * co;
          for (std::size_t o = 0; o < co; ++o) yrow[o] += xv * wv[o];
        }
      }
    }
  }
}

void conv_time_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          const ConvDims& d) {
  const std::size_t ci = d.in_channels;
  const std::size_t co = d.out_channels;
  // wt[t][o][i]
  std::vector<double> wt(d.taps * co * ci);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < d.taps; ++t) wt[(t * co + o) * ci + i] = w[(o * ci + i) * d.taps + t];

  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  const auto rows = static_cast<long>(d.rows);
#pragma omp parallel for schedule(static) if (d.rows * d.length * ci * co * d.taps >= kMinParallelWork)
  for (long r = 0; r < rows; ++r) {
    const double* dyr = dy.data() + static_cast<std::size_t>(r) * d.length * co;
    double* dxr = dx.data() + static_cast<std::size_t>(r) * d.length * ci;
    for (long src = 0; src < len; ++src) {
      double* dxrow = dxr + static_cast<std::size_t>(src) * ci;
      // output positions l = src - t + half that read this input position
      const long t_lo = std::max(0L, src + half - len + 1);
      const long t_hi = std::min(static_cast<long>(d.taps), src + half + 1);
      for (long t = t_lo; t < t_hi; ++t) {
        const double* dyrow = dyr + static_cast<std::size_t>(src - t + half) * co;
        const double* wrow = wt.data() + static_cast<std::size_t>(t) * co * ci;
        for (std::size_t o = 0; o < co; ++o) {
          const double g = dyrow[o];
          const double* wv = wrow + o * ci;
          for (std::size_t i = 0; i < ci; ++i) dxrow[i] += g * wv[i];
        }
      }
    }
  }
}

void conv_time_grad_kernel(std::span<const double> x, std::span<const double> dy, std::span<double> dw,
                           const ConvDims& d) {
  const std::size_t ci = d.in_channels;
  const std::size_t co = d.out_channels;
  const std::size_t width = d.taps * ci * co;  // partial layout [t][i][o]
  std::vector<double> acc(width, 0.0);
  const auto half = static_cast<long>(d.taps / 2);
  const auto len = static_cast<long>(d.length);
  chunked_reduce(d.rows, width, d.rows * d.length * width, acc,
                 [&](std::size_t lo, std::size_t hi, std::span<double> part) {
                   for (std::size_t r = lo; r < hi; ++r) {
                     const double* xr = x.data() + r * d.length * ci;
                     const double* dyr = dy.data() + r * d.length * co;
                     for (long l = 0; l < len; ++l) {
                       const double* dyrow = dyr + static_cast<std::size_t>(l) * co;
                       const long t_lo = std::max(0L, half - l);
                       const long t_hi = std::min(static_cast<long>(d.taps), len - l + half);
                       for (long t = t_lo; t < t_hi; ++t) {
                         const double* xrow = xr + static_cast<std::size_t>(l + t - half) * ci;
                         double* prow = part.data() + static_cast<std::size_t>(t) * ci * co;
                         for (std::size_t i = 0; i < ci; ++i) {
                           const double xv = xrow[i];
                           double* pv = prow + i * co;
                           for (std::size_t o = 0; o < co; ++o) pv[o] += xv * dyrow[o];
                         }
                       }
                     }
                   }
                 });
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < d.taps; ++t) dw[(o * ci + i) * d.taps + t] += acc[(t * ci + i) * co + o];
}

void column_sum(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  chunked_reduce(rows, cols, rows * cols, out, [&](std::size_t lo, std::size_t hi, std::span<double> part) {
    for (std::size_t r = lo; r < hi; ++r) {
      const double* xr = x.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) part[c] += xr[c];
    }
  });
}

}  // namespace metsk::kernels::parallel
