#pragma once

// Domain similarity between two feature sets: histogram the cohort-mean
// features on shared bins, move one histogram onto the other with an exact
// transportation solver, DS = exp(-gamma * EMD).

#include <string>
#include <vector>

#include "metsk/tensor.hpp"

namespace metsk {

/// Mean over the leading (subject) axis, flattened row-major.
std::vector<double> mean_flatten_features(const Tensor& features);

struct FeatureHistogram {
  std::vector<double> edges;      // B + 1, ascending
  std::vector<double> masses;     // B, sums to 1
  std::vector<double> bin_means;  // B; 0 for empty bins
  bool degenerate = false;        // zero value range: one bin holding everything

  std::size_t bins() const { return masses.size(); }
};

/// B equal-width bins over [min, max] of both vectors together; masses are
/// counts over vector length.
std::pair<FeatureHistogram, FeatureHistogram> build_histograms(const std::vector<double>& xs,
                                                               const std::vector<double>& xt, std::size_t bins = 32);

struct Transport {
  double cost = 0.0;       // sum f_ij d_ij / sum f_ij
  std::vector<double> flow;  // rows x cols, row-major
  std::size_t rows = 0, cols = 0;
  std::size_t pivots = 0;
};

/// Balanced transportation problem solved exactly: north-west corner start,
/// then MODI pivots until no reduced cost is negative. supply and demand must
/// each sum to 1 within 1e-9; zero entries are left out of the program and
/// get zero flow.
Transport solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                          const std::vector<double>& cost);

// Ground cost |bin_mean_s[i] - bin_mean_t[j]|.
Transport emd_flow(const FeatureHistogram& hs, const FeatureHistogram& ht);
double emd(const FeatureHistogram& hs, const FeatureHistogram& ht);

double domain_similarity(double emd_value, double gamma = 0.01);
double domain_similarity(const FeatureHistogram& hs, const FeatureHistogram& ht, double gamma = 0.01);

struct DomsimReport {
  double emd = 0.0;
  double ds = 0.0;
  double gamma = 0.01;
  std::size_t bins = 0;
  bool degenerate = false;
  std::vector<double> flow;  // empty unless requested
  std::size_t flow_rows = 0, flow_cols = 0;
  std::string json() const;
};

/// Whole diagnostic on two feature tensors [N, ...] with matching trailing shape.
DomsimReport domain_similarity_report(const Tensor& source_features, const Tensor& target_features,
                                      std::size_t bins = 32, double gamma = 0.01, bool with_flow = false);

}  // namespace metsk
