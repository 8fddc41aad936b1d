#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "metsk/domsim.hpp"
#include "metsk/tensor.hpp"

namespace oracle {

using metsk::FeatureHistogram;
using metsk::Tensor;

// Minimum over all vertices of the transportation polytope. A vertex is a
// spanning tree of m + n - 1 cells on the supports; its flows follow by
// peeling leaves.
inline double lp_vertex_oracle(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& cost) {
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0) rows.push_back(i);
  for (std::size_t j = 0; j < b.size(); ++j)
    if (b[j] > 0) cols.push_back(j);
  const std::size_t m = rows.size(), n = cols.size(), cells = m * n, need = m + n - 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> pick(cells, 0);
  std::fill(pick.begin(), pick.begin() + need, 1);
  std::sort(pick.begin(), pick.end());
  do {
    std::vector<std::pair<std::size_t, std::size_t>> tree;
    for (std::size_t c = 0; c < cells; ++c)
      if (pick[c]) tree.push_back({c / n, c % n});
    std::vector<double> ra(m), rb(n);
    for (std::size_t i = 0; i < m; ++i) ra[i] = a[rows[i]];
    for (std::size_t j = 0; j < n; ++j) rb[j] = b[cols[j]];
    std::vector<double> flow(tree.size(), 0.0);
    std::vector<char> done(tree.size(), 0);
    bool progress = true;
    std::size_t solved = 0;
    while (progress && solved < tree.size()) {
      progress = false;
      for (std::size_t node = 0; node < m + n; ++node) {
        std::size_t open = 0, last = 0;
        for (std::size_t e = 0; e < tree.size(); ++e)
          if (!done[e] && (node < m ? tree[e].first == node : tree[e].second == node - m)) {
            ++open;
            last = e;
          }
        if (open != 1) continue;
        const double f = node < m ? ra[node] : rb[node - m];
        flow[last] = f;
        done[last] = 1;
        ra[tree[last].first] -= f;
        rb[tree[last].second] -= f;
        ++solved;
        progress = true;
      }
    }
    if (solved < tree.size()) continue;  // contains a cycle: not a basis
    bool feasible = std::all_of(flow.begin(), flow.end(), [](double f) { return f >= -1e-12; });
    for (double r : ra) feasible = feasible && std::abs(r) < 1e-12;
    for (double r : rb) feasible = feasible && std::abs(r) < 1e-12;
    if (!feasible) continue;
    double total = 0;
    for (std::size_t e = 0; e < tree.size(); ++e)
      total += flow[e] * cost[rows[tree[e].first] * b.size() + cols[tree[e].second]];
    best = std::min(best, total);
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best;
}

// Wasserstein-1 between two point-mass distributions on the line.
inline double w1_closed_form(const FeatureHistogram& s, const FeatureHistogram& t) {
  std::vector<std::pair<double, double>> events;  // (position, +mass for s, -mass for t)
  for (std::size_t i = 0; i < s.masses.size(); ++i) events.push_back({s.bin_means[i], s.masses[i]});
  for (std::size_t j = 0; j < t.masses.size(); ++j) events.push_back({t.bin_means[j], -t.masses[j]});
  std::sort(events.begin(), events.end());
  double cdf_gap = 0, total = 0;
  for (std::size_t k = 0; k + 1 < events.size(); ++k) {
    cdf_gap += events[k].second;
    total += std::abs(cdf_gap) * (events[k + 1].first - events[k].first);
  }
  return total;
}

// Transportation cost by enumerating every integer flow when all masses are
// multiples of 1/units. Integral margins give an integral optimum, so the
// minimum over integer flows is the LP optimum. Costs must be nonnegative
// (partial sums prune the search).
inline double integer_flow_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  const std::vector<double>& cost, int units) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> row(m), col(n);
  for (std::size_t i = 0; i < m; ++i) row[i] = static_cast<int>(std::lround(a[i] * units));
  for (std::size_t j = 0; j < n; ++j) col[j] = static_cast<int>(std::lround(b[j] * units));
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, double)> fill = [&](std::size_t cell, double acc) {
    if (acc >= best) return;
    if (cell == m * n) {
      best = acc;
      return;
    }
    const std::size_t i = cell / n, j = cell % n;
    // the last cell of a row takes whatever the row has left
    const int lo = j + 1 == n ? row[i] : 0;
    const int hi = std::min(row[i], col[j]);
    for (int f = lo; f <= hi; ++f) {
      row[i] -= f;
      col[j] -= f;
      fill(cell + 1, acc + f * cost[cell] / units);
      row[i] += f;
      col[j] += f;
    }
  };
  fill(0, 0.0);
  return best;
}

// Cyclic Jacobi rotations on a symmetric matrix: eigenvalues on the diagonal,
// eigenvectors in the columns of v.
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& values, std::vector<double>& v) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p * n + q]) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * a[p * n + q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
}

inline std::vector<double> covariance_of(const Tensor& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> mu(d, 0.0), cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j] / n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += (x[i * d + a] - mu[a]) * (x[i * d + b] - mu[b]) / (n - 1);
  return cov;
}

}  // namespace oracle
