#include "metsk/domsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace metsk {

std::vector<double> mean_flatten_features(const Tensor& features) {
  if (features.rank() < 2 || features.dim(0) == 0) throw ValidationError("features must be [N, ...] with N >= 1");
  const std::size_t n = features.dim(0), d = features.size() / n;
  std::vector<double> out(d, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < d; ++i) out[i] += features[s * d + i];
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

namespace {

FeatureHistogram fill(const std::vector<double>& x, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  FeatureHistogram h;
  h.edges = edges;
  h.masses.assign(bins, 0.0);
  h.bin_means.assign(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  const double lo = edges.front(), width = edges.back() - edges.front();
  for (double v : x) {
    std::size_t b = 0;
    if (bins > 1) {
      const double pos = (v - lo) / width * static_cast<double>(bins);
      b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
    }
    ++count[b];
    h.bin_means[b] += v;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    h.masses[b] = static_cast<double>(count[b]) / static_cast<double>(x.size());
    h.bin_means[b] = std::clamp(h.bin_means[b] / static_cast<double>(count[b]), edges[b], edges[b + 1]);
  }
  return h;
}

}  // namespace

std::pair<FeatureHistogram, FeatureHistogram> build_histograms(const std::vector<double>& xs,
                                                               const std::vector<double>& xt, std::size_t bins) {
  if (bins == 0) throw ValidationError("bin count must be >= 1");
  if (xs.empty() || xt.empty()) throw ValidationError("histogram inputs must be non-empty");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* x : {&xs, &xt})
    for (double v : *x) {
      if (!std::isfinite(v)) throw ValidationError("histogram input is not finite");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  std::vector<double> edges;
  const bool degenerate = !(hi > lo);
  if (degenerate) {
    edges = {lo, hi};
  } else {
    edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
      edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    edges.back() = hi;
  }
  auto hs = fill(xs, edges);
  auto ht = fill(xt, edges);
  hs.degenerate = ht.degenerate = degenerate;
  return {std::move(hs), std::move(ht)};
}

namespace {

void check_marginal(const std::vector<double>& m, const char* what) {
  if (m.empty()) throw ValidationError(std::string(what) + " is empty");
  double total = 0.0;
  for (double v : m) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " has a negative or non-finite mass");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError(std::string(what) + " masses do not sum to 1");
}

// Normalized copy of the non-zero entries and their original indices.
std::pair<std::vector<double>, std::vector<std::size_t>> support(const std::vector<double>& m) {
  std::vector<double> mass;
  std::vector<std::size_t> index;
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] > 0.0) {
      mass.push_back(m[i]);
      index.push_back(i);
      total += m[i];
    }
  for (auto& v : mass) v /= total;
  return {mass, index};
}

}  // namespace

Transport solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                          const std::vector<double>& cost) {
  check_marginal(supply, "supply");
  check_marginal(demand, "demand");
  if (cost.size() != supply.size() * demand.size()) throw ValidationError("cost matrix shape mismatch");
  for (double c : cost)
    if (!std::isfinite(c)) throw ValidationError("cost is not finite");

  auto [a, rows] = support(supply);
  auto [b, cols] = support(demand);
  const std::size_t m = a.size(), n = b.size();
  auto c = [&](std::size_t i, std::size_t j) { return cost[rows[i] * demand.size() + cols[j]]; };

  // x holds flows of the basic cells; basic marks the spanning tree.
  std::vector<double> x(m * n, 0.0);
  std::vector<char> basic(m * n, 0);
  {
    std::vector<double> ra = a, rb = b;
    std::size_t i = 0, j = 0;
    while (true) {
      const double f = std::min(ra[i], rb[j]);
      x[i * n + j] = f;
      basic[i * n + j] = 1;
      ra[i] -= f;
      rb[j] -= f;
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1) ++j;
      else if (j == n - 1) ++i;
      else if (ra[i] <= rb[j]) ++i;  // a tie leaves a zero-flow basic cell next
      else ++j;
    }
  }

  double cmax = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) cmax = std::max(cmax, std::abs(c(i, j)));
  const double tol = 1e-13 * (1.0 + cmax);

  // Tree nodes: rows 0..m-1, columns m..m+n-1.
  const std::size_t nodes = m + n;
  std::vector<std::vector<std::size_t>> adj(nodes);
  auto rebuild = [&] {
    for (auto& v : adj) v.clear();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (basic[i * n + j]) {
          adj[i].push_back(m + j);
          adj[m + j].push_back(i);
        }
  };

  std::vector<double> u(m), v(n);
  std::vector<std::size_t> parent(nodes), queue;
  std::vector<char> seen(nodes);
  const std::size_t max_pivots = 100 * nodes * nodes + 1000;
  std::size_t pivots = 0;
  for (;; ++pivots) {
    if (pivots > max_pivots) throw std::runtime_error("transportation solver did not converge");
    rebuild();
    // Potentials: u_i + v_j = c_ij on basic cells, u_0 = 0.
    std::fill(seen.begin(), seen.end(), 0);
    queue.assign(1, 0);
    seen[0] = 1;
    u[0] = 0.0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t p = queue[q];
      for (std::size_t r : adj[p]) {
        if (seen[r]) continue;
        seen[r] = 1;
        if (p < m) v[r - m] = c(p, r - m) - u[p];
        else u[r] = c(r, p - m) - v[p - m];
        queue.push_back(r);
      }
    }
    std::size_t ei = m, ej = n;
    double best = -tol;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (basic[i * n + j]) continue;
        const double reduced = c(i, j) - u[i] - v[j];
        if (reduced < best) {
          best = reduced;
          ei = i;
          ej = j;
        }
      }
    if (ei == m) break;

    // Tree path from column ej to row ei closes the cycle with the entering cell.
    std::fill(seen.begin(), seen.end(), 0);
    queue.assign(1, m + ej);
    seen[m + ej] = 1;
    for (std::size_t q = 0; q < queue.size() && !seen[ei]; ++q) {
      const std::size_t p = queue[q];
      for (std::size_t r : adj[p])
        if (!seen[r]) {
          seen[r] = 1;
          parent[r] = p;
          queue.push_back(r);
        }
    }
    // Walk back from row ei; cells alternate +, - starting with - at the cell
    // touching column ej, so collect the path then assign signs from that end.
    std::vector<std::size_t> cells;
    for (std::size_t p = ei; p != m + ej; p = parent[p]) {
      const std::size_t q = parent[p];
      const std::size_t i = p < m ? p : q, j = (p < m ? q : p) - m;
      cells.push_back(i * n + j);
    }
    std::reverse(cells.begin(), cells.end());
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = cells.front();
    for (std::size_t s = 0; s < cells.size(); s += 2)
      if (x[cells[s]] < theta) {
        theta = x[cells[s]];
        leaving = cells[s];
      }
    x[ei * n + ej] = theta;
    basic[ei * n + ej] = 1;
    for (std::size_t s = 0; s < cells.size(); ++s) x[cells[s]] += (s % 2 == 0) ? -theta : theta;
    x[leaving] = 0.0;
    basic[leaving] = 0;
  }

  Transport out;
  out.rows = supply.size();
  out.cols = demand.size();
  out.flow.assign(out.rows * out.cols, 0.0);
  out.pivots = pivots;
  double moved = 0.0, work = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double f = std::max(0.0, x[i * n + j]);
      out.flow[rows[i] * out.cols + cols[j]] = f;
      moved += f;
      work += f * c(i, j);
    }
  out.cost = work / moved;
  return out;
}

Transport emd_flow(const FeatureHistogram& hs, const FeatureHistogram& ht) {
  if (hs.bin_means.size() != hs.masses.size() || ht.bin_means.size() != ht.masses.size())
    throw ValidationError("histogram bin means and masses differ in length");
  std::vector<double> cost(hs.bins() * ht.bins());
  for (std::size_t i = 0; i < hs.bins(); ++i)
    for (std::size_t j = 0; j < ht.bins(); ++j)
      cost[i * ht.bins() + j] = std::abs(hs.bin_means[i] - ht.bin_means[j]);
  return solve_transport(hs.masses, ht.masses, cost);
}

double emd(const FeatureHistogram& hs, const FeatureHistogram& ht) { return emd_flow(hs, ht).cost; }

double domain_similarity(double emd_value, double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (!(emd_value >= 0.0)) throw ValidationError("EMD must be non-negative");
  return std::exp(-gamma * emd_value);
}

double domain_similarity(const FeatureHistogram& hs, const FeatureHistogram& ht, double gamma) {
  return domain_similarity(emd(hs, ht), gamma);
}

std::string DomsimReport::json() const {
  nlohmann::ordered_json j;
  j["emd"] = emd;
  j["ds"] = ds;
  j["gamma"] = gamma;
  j["bins"] = bins;
  j["degenerate"] = degenerate;
  if (!flow.empty()) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < flow_rows; ++i)
      rows.push_back(std::vector<double>(flow.begin() + i * flow_cols, flow.begin() + (i + 1) * flow_cols));
    j["flow"] = rows;
  }
  return j.dump(2) + "\n";
}

DomsimReport domain_similarity_report(const Tensor& source_features, const Tensor& target_features, std::size_t bins,
                                      double gamma, bool with_flow) {
  if (source_features.rank() < 2 || target_features.rank() < 2 ||
      source_features.size() / source_features.dim(0) != target_features.size() / target_features.dim(0))
    throw ValidationError("source and target features differ in per-subject shape: " +
                          shape_string(source_features.shape()) + " vs " + shape_string(target_features.shape()));
  const auto [hs, ht] = build_histograms(mean_flatten_features(source_features), mean_flatten_features(target_features),
                                         bins);
  const auto t = emd_flow(hs, ht);
  DomsimReport r;
  r.emd = t.cost;
  r.ds = domain_similarity(t.cost, gamma);
  r.gamma = gamma;
  r.bins = hs.bins();
  r.degenerate = hs.degenerate;
  if (with_flow) {
    r.flow = t.flow;
    r.flow_rows = t.rows;
    r.flow_cols = t.cols;
  }
  return r;
}

}  // namespace metsk
