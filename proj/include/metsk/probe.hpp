#pragma once

// Downstream probing: zero-shot features from a frozen extractor, PCA, a
// linear SVM and an MLP, stratified cross-validation, SVM importance map.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metsk/data.hpp"
#include "metsk/optim.hpp"
#include "metsk/stgcn.hpp"

namespace metsk {

// ---- metrics and folds ------------------------------------------------------

/// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
/// ties counted one half.
double auc(std::span<const double> scores, std::span<const int> labels);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

// fold[i] in [0, folds); each class is dealt round-robin after a shuffle.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, Rng& rng);

double mean_of(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double std_of(std::span<const double> v);

// ---- zero-shot features -----------------------------------------------------

struct ZeroShotFeatures {
  std::vector<std::string> subject_ids;
  Tensor values;  // [N, P, C]
  std::size_t parcels() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
  // [N, P * C], row-major per subject
  Tensor flat() const;
};

/// Per subject: R windows with seeded starts, extractor output averaged over
/// windows and time. The model is only read.
ZeroShotFeatures extract_zero_shot(const Model& model, const Dataset& data, std::size_t window,
                                   std::size_t windows_per_subject, std::uint64_t seed);

// CSV: header subject_id,roi0_c0,roi0_c1,...; one row per subject.
std::string features_csv(const ZeroShotFeatures& f);
ZeroShotFeatures parse_features_csv(const std::string& text, const std::string& where);

// ---- PCA --------------------------------------------------------------------

struct Pca {
  Tensor mean;        // [D]
  Tensor components;  // [n, D], unit rows, largest-magnitude loading positive
  std::vector<double> explained_ratio;
};

Pca pca_fit(const Tensor& x, std::size_t n_components);
Tensor pca_transform(const Pca& pca, const Tensor& x);
// Fit and transform in one go.
Tensor pca_reduce(const Tensor& x, std::size_t n_components, Pca* fitted = nullptr);

// ---- classifiers ------------------------------------------------------------

struct LinearSvm {
  Tensor w;  // [D]
  double b = 0.0;
  std::vector<double> decision(const Tensor& x) const;
};

/// Minimizes 0.5 |w|^2 + C sum_i hinge(1 - y_i (w.x_i + b)) by full-batch
/// subgradient descent; w moves with step 1/t, b with step 1/(C n t).
LinearSvm train_linear_svm(const Tensor& x, std::span<const int> labels, double c = 1.0, std::size_t iters = 2000);

struct Mlp {
  ParamSet params;  // layer<i>.W [in, out], layer<i>.b [out]; last layer emits 2 logits
  Tensor logits(const Tensor& x) const;
  std::vector<double> probability(const Tensor& x) const;  // of class 1
};

Mlp train_mlp(const Tensor& x, std::span<const int> labels, const std::vector<std::size_t>& hidden = {32, 16, 16},
              std::size_t iters = 500, double lr = 0.001, std::uint64_t seed = 0);

/// importance(roi) = sum of max(0, w_i) over that ROI's features, with
/// feature i belonging to ROI i / features_per_roi.
std::vector<double> svm_feature_importance(const Tensor& w, std::size_t rois);
std::string importance_csv(const std::vector<double>& importance);

// SVM on z-scored, unreduced per-ROI features of every subject, then the
// positive-coefficient map. PCA would mix ROIs, so it is never applied here.
std::vector<double> roi_importance(const ZeroShotFeatures& features, std::span<const int> labels, double c = 1.0,
                                   std::size_t iters = 2000);

// ---- cross-validation -------------------------------------------------------

struct ProbeSpec {
  std::string classifier = "svm";  // svm | mlp
  double c = 1.0;
  std::size_t svm_iters = 2000;
  std::vector<std::size_t> hidden{32, 16, 16};
  std::size_t mlp_iters = 500;
  double mlp_lr = 0.001;
  // 0 disables PCA; otherwise min(pca_components, n_train - 1) components
  std::size_t pca_components = 16;
  bool standardize = true;  // z-score with training-fold statistics
  void validate() const;
};

struct FoldResult {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  double auc = 0.0;
  double acc = 0.0;
};

struct CvReport {
  std::string classifier;
  std::size_t folds = 0;
  std::size_t repeats = 0;
  double auc_mean = 0.0, auc_std = 0.0, acc_mean = 0.0, acc_std = 0.0;
  std::vector<FoldResult> per_fold;
  std::string json() const;
};

// Fits on the training rows and scores the test rows: P(class 1) per test row.
std::vector<double> fit_and_score(const Tensor& x, std::span<const int> labels, const std::vector<std::size_t>& train,
                                  const std::vector<std::size_t>& test, const ProbeSpec& spec, std::uint64_t seed);

CvReport evaluate_cv(const Tensor& x, std::span<const int> labels, const ProbeSpec& spec, std::size_t folds,
                     std::size_t repeats, std::uint64_t seed);

// Rows of x in the given order.
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows);

}  // namespace metsk
