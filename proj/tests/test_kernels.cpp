#include "doctest.h"

#include <omp.h>

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "metsk/kernels.hpp"

using namespace metsk::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("parallel gemm variants match the serial loops") {
  std::mt19937_64 rng(3);
  for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 4, 5}, {70, 90, 65}}) {
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), bt = random_vec(n * k, rng);
    auto at = random_vec(k * m, rng);
    std::vector<double> c1(m * n, 1.0), c2(m * n, 1.0);
    serial::gemm_nn(a, b, c1, m, k, n);
    parallel::gemm_nn(a, b, c2, m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-12);

    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    serial::gemm_nt(a, bt, c1, m, k, n);
    parallel::gemm_nt(a, bt, c2, m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-12);

    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    serial::gemm_tn(at, b, c1, m, k, n);
    parallel::gemm_tn(at, b, c2, m, k, n);
    CHECK(max_abs_diff(c1, c2) < 1e-12);
  }
}

TEST_CASE("node mixing and temporal convolution match the serial loops") {
  std::mt19937_64 rng(5);
  const MixDims md{3, 7, 40};
  auto graphs = random_vec(md.groups * md.nodes * md.nodes, rng);
  auto x = random_vec(md.groups * md.nodes * md.width, rng);
  for (bool transpose : {false, true}) {
    std::vector<double> y1(x.size()), y2(x.size());
    serial::node_mix(graphs, x, y1, md, transpose);
    parallel::node_mix(graphs, x, y2, md, transpose);
    CHECK(max_abs_diff(y1, y2) < 1e-12);
  }

  const ConvDims cd{12, 33, 3, 4, 5};
  auto cx = random_vec(cd.rows * cd.length * cd.in_channels, rng);
  auto w = random_vec(cd.out_channels * cd.in_channels * cd.taps, rng);
  auto dy = random_vec(cd.rows * cd.length * cd.out_channels, rng);
  std::vector<double> y1(dy.size()), y2(dy.size());
  serial::conv_time(cx, w, y1, cd);
  parallel::conv_time(cx, w, y2, cd);
  CHECK(max_abs_diff(y1, y2) < 1e-12);

  std::vector<double> dx1(cx.size()), dx2(cx.size());
  serial::conv_time_grad_input(dy, w, dx1, cd);
  parallel::conv_time_grad_input(dy, w, dx2, cd);
  CHECK(max_abs_diff(dx1, dx2) < 1e-12);

  std::vector<double> dw1(w.size()), dw2(w.size());
  serial::conv_time_grad_kernel(cx, dy, dw1, cd);
  parallel::conv_time_grad_kernel(cx, dy, dw2, cd);
  CHECK(max_abs_diff(dw1, dw2) < 1e-11);
}

TEST_CASE("convolution gradients are the adjoints of the forward map") {
  // <conv(x, w), dy> = <x, grad_input(dy, w)> = <w, grad_kernel(x, dy)>
  std::mt19937_64 rng(9);
  const ConvDims cd{4, 11, 2, 3, 3};
  auto x = random_vec(cd.rows * cd.length * cd.in_channels, rng);
  auto w = random_vec(cd.out_channels * cd.in_channels * cd.taps, rng);
  auto dy = random_vec(cd.rows * cd.length * cd.out_channels, rng);
  std::vector<double> y(dy.size()), dx(x.size()), dw(w.size());
  serial::conv_time(x, w, y, cd);
  serial::conv_time_grad_input(dy, w, dx, cd);
  serial::conv_time_grad_kernel(x, dy, dw, cd);
  const double lhs = dot(y, dy);
  CHECK(lhs == doctest::Approx(dot(x, dx)).epsilon(1e-12));
  CHECK(lhs == doctest::Approx(dot(w, dw)).epsilon(1e-12));
}

TEST_CASE("centered delta kernel is the identity") {
  const ConvDims cd{2, 6, 1, 1, 5};
  std::vector<double> x{1, 2, 3, 4, 5, 6, -1, -2, -3, -4, -5, -6};
  std::vector<double> w{0, 0, 1, 0, 0};
  std::vector<double> y(x.size());
  parallel::conv_time(x, w, y, cd);
  CHECK(y == x);
}

TEST_CASE("parallel reductions do not depend on the thread count") {
  std::mt19937_64 rng(11);
  const std::size_t rows = 5000, cols = 7;
  auto x = random_vec(rows * cols, rng);
  auto b = random_vec(rows * 3, rng);
  std::vector<double> s1(cols), s4(cols), g1(cols * 3), g4(cols * 3);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  parallel::column_sum(x, s1, rows, cols);
  parallel::gemm_tn(x, b, g1, cols, rows, 3);
  omp_set_num_threads(4);
  parallel::column_sum(x, s4, rows, cols);
  parallel::gemm_tn(x, b, g4, cols, rows, 3);
  omp_set_num_threads(saved);
  CHECK(s1 == s4);
  CHECK(g1 == g4);
}
