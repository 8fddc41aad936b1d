#include "metsk/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "metsk/io.hpp"
#include "metsk/objectives.hpp"

namespace metsk {

namespace {

void require_binary(std::span<const int> labels, std::size_t rows, const char* what) {
  if (labels.size() != rows) throw ValidationError(std::string(what) + ": label count does not match rows");
  bool seen[2] = {false, false};
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError(std::string(what) + ": labels must be 0 or 1");
    seen[y] = true;
  }
  if (!seen[0] || !seen[1]) throw ValidationError(std::string(what) + ": both classes must be present");
}

void require_matrix(const Tensor& x, const char* what) {
  if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) == 0)
    throw ValidationError(std::string(what) + ": expected a non-empty [N, D] matrix, got " + shape_string(x.shape()));
  if (!x.all_finite()) throw ValidationError(std::string(what) + ": features are not finite");
}

}  // namespace

// ---- metrics and folds ------------------------------------------------------

double auc(std::span<const double> scores, std::span<const int> labels) {
  require_binary(labels, scores.size(), "auc");
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  neg = scores.size() - pos;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw ValidationError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, Rng& rng) {
  if (folds < 2) throw ValidationError("need at least 2 folds");
  std::vector<std::size_t> out(labels.size(), 0);
  std::size_t next = 0;  // continue the deal across classes so fold sizes stay within one
  for (int c : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.size() < folds)
      throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " subjects, fewer than " + std::to_string(folds) + " folds");
    std::shuffle(members.begin(), members.end(), rng);
    for (auto i : members) out[i] = next++ % folds;
  }
  return out;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// ---- zero-shot features -----------------------------------------------------

Tensor ZeroShotFeatures::flat() const {
  return values.reshaped({values.dim(0), values.dim(1) * values.dim(2)});
}

ZeroShotFeatures extract_zero_shot(const Model& model, const Dataset& data, std::size_t window,
                                   std::size_t windows_per_subject, std::uint64_t seed) {
  data.validate();
  model.config.validate();
  const std::size_t n = data.size(), p = data.parcels(), c = model.config.feature_channels();
  ZeroShotFeatures out;
  out.values = Tensor({n, p, c});
  out.subject_ids.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& rec = data.records[s];
    out.subject_ids[s] = rec.subject_id;
    const BrainGraph graph = build_graph(rec.timeseries);
    Rng rng = make_rng(seed, {kStreamExtract, s});
    const auto windows = sample_subsequences(rec, 0, window, windows_per_subject, rng);
    const Tensor f = extract_features(model, make_batch(windows, std::span(&graph, 1)));  // [R, P, L, C]
    const std::size_t r = f.dim(0), l = f.dim(2);
    double* dst = out.values.data() + s * p * c;
    for (std::size_t w = 0; w < r; ++w)
      for (std::size_t node = 0; node < p; ++node)
        for (std::size_t t = 0; t < l; ++t)
          for (std::size_t ch = 0; ch < c; ++ch) dst[node * c + ch] += f[((w * p + node) * l + t) * c + ch];
    for (std::size_t i = 0; i < p * c; ++i) dst[i] /= static_cast<double>(r * l);
  }
  if (!out.values.all_finite()) throw std::runtime_error("zero-shot features are not finite");
  return out;
}

std::string features_csv(const ZeroShotFeatures& f) {
  std::string out = "subject_id";
  const std::size_t p = f.parcels(), c = f.channels();
  for (std::size_t node = 0; node < p; ++node)
    for (std::size_t ch = 0; ch < c; ++ch) out += ",roi" + std::to_string(node) + "_c" + std::to_string(ch);
  out += '\n';
  for (std::size_t s = 0; s < f.subject_ids.size(); ++s) {
    out += f.subject_ids[s];
    for (std::size_t i = 0; i < p * c; ++i) {
      out += ',';
      out += format_double(f.values[s * p * c + i]);
    }
    out += '\n';
  }
  return out;
}

ZeroShotFeatures parse_features_csv(const std::string& text, const std::string& where) {
  std::vector<std::string_view> lines;
  for (auto line : split(text, '\n'))
    if (!trim(line).empty()) lines.push_back(line);
  if (lines.empty()) throw ValidationError(where + ": empty feature file");
  const auto header = split(lines[0], ',');
  if (header.empty() || trim(header[0]) != "subject_id") throw ValidationError(where + ":1: header must start with subject_id");
  std::size_t p = 0, c = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    unsigned long node = 0, ch = 0;
    const std::string name(trim(header[i]));
    char tail = 0;
    if (std::sscanf(name.c_str(), "roi%lu_c%lu%c", &node, &ch, &tail) != 2)
      throw ValidationError(where + ":1: bad column name '" + name + "'");
    p = std::max<std::size_t>(p, node + 1);
    c = std::max<std::size_t>(c, ch + 1);
  }
  if (p * c != header.size() - 1 || p == 0) throw ValidationError(where + ":1: columns do not form a full roi x channel grid");
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string expect = "roi" + std::to_string((i - 1) / c) + "_c" + std::to_string((i - 1) % c);
    if (trim(header[i]) != expect) throw ValidationError(where + ":1: expected column " + expect);
  }
  ZeroShotFeatures f;
  const std::size_t n = lines.size() - 1;
  f.values = Tensor({n, p, c});
  for (std::size_t s = 0; s < n; ++s) {
    const std::string at = where + ":" + std::to_string(s + 2);
    const auto cells = split(lines[s + 1], ',');
    if (cells.size() != p * c + 1) throw ValidationError(at + ": expected " + std::to_string(p * c + 1) + " fields");
    f.subject_ids.emplace_back(trim(cells[0]));
    for (std::size_t i = 0; i < p * c; ++i) f.values[s * p * c + i] = parse_double(cells[i + 1], at);
  }
  return f;
}

// ---- PCA --------------------------------------------------------------------

Pca pca_fit(const Tensor& x, std::size_t n_components) {
  require_matrix(x, "pca");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n_components == 0 || n_components > std::min(n, d))
    throw ValidationError("pca: n_components " + std::to_string(n_components) + " must be in [1, min(N, D)] = [1, " +
                          std::to_string(std::min(n, d)) + "]");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data(), n, d);
  const Eigen::RowVectorXd mu = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - mu;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<std::size_t>(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");

  Pca out;
  out.mean = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) out.mean[j] = mu(j);
  out.components = Tensor({n_components, d});
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) total += std::max(0.0, eig.eigenvalues()(i));
  for (std::size_t k = 0; k < n_components; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);  // eigenvalues ascend
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) out.components[k * d + j] = v(static_cast<Eigen::Index>(j));
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    out.explained_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }
  return out;
}

Tensor pca_transform(const Pca& pca, const Tensor& x) {
  require_matrix(x, "pca");
  const std::size_t n = x.dim(0), d = x.dim(1), k = pca.components.dim(0);
  if (d != pca.mean.size()) throw ValidationError("pca: feature count differs from the fitted data");
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (x[i * d + j] - pca.mean[j]) * pca.components[c * d + j];
      out[i * k + c] = acc;
    }
  return out;
}

Tensor pca_reduce(const Tensor& x, std::size_t n_components, Pca* fitted) {
  Pca p = pca_fit(x, n_components);
  Tensor out = pca_transform(p, x);
  if (fitted) *fitted = std::move(p);
  return out;
}

// ---- classifiers ------------------------------------------------------------

std::vector<double> LinearSvm::decision(const Tensor& x) const {
  require_matrix(x, "svm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (d != w.size()) throw ValidationError("svm: feature count differs from the trained weights");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b;
    for (std::size_t j = 0; j < d; ++j) acc += w[j] * x[i * d + j];
    out[i] = acc;
  }
  return out;
}

LinearSvm train_linear_svm(const Tensor& x, std::span<const int> labels, double c, std::size_t iters) {
  require_matrix(x, "svm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  require_binary(labels, n, "svm");
  if (!(c > 0.0)) throw ValidationError("svm: C must be positive");
  if (iters == 0) throw ValidationError("svm: iterations must be >= 1");
  bool varied = false;
  for (std::size_t i = 1; i < n && !varied; ++i)
    varied = !std::equal(x.data() + i * d, x.data() + (i + 1) * d, x.data());
  if (!varied) throw ValidationError("svm: all samples have identical features");

  LinearSvm m;
  m.w = Tensor({d});
  std::vector<double> y(n), pull(d);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == 1 ? 1.0 : -1.0;
  for (std::size_t t = 1; t <= iters; ++t) {
    std::fill(pull.begin(), pull.end(), 0.0);
    double pull_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double f = m.b;
      for (std::size_t j = 0; j < d; ++j) f += m.w[j] * x[i * d + j];
      if (y[i] * f < 1.0) {
        for (std::size_t j = 0; j < d; ++j) pull[j] += y[i] * x[i * d + j];
        pull_b += y[i];
      }
    }
    // Gradient of the objective: w - C * pull for w, -C * pull_b for b.
    const double step = 1.0 / static_cast<double>(t);
    for (std::size_t j = 0; j < d; ++j) m.w[j] -= step * (m.w[j] - c * pull[j]);
    m.b += pull_b / (static_cast<double>(n) * static_cast<double>(t));
  }
  return m;
}

namespace {

Var mlp_forward(Tape& tape, const Tensor& x, std::span<const Var> params) {
  Var h = tape.constant(x);
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_bias(matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = relu(h);
  }
  return h;
}

}  // namespace

Tensor Mlp::logits(const Tensor& x) const {
  require_matrix(x, "mlp");
  Tape tape;
  std::vector<Var> p;
  for (const auto& e : params) p.push_back(tape.constant(e.value));
  return mlp_forward(tape, x, p).value();
}

std::vector<double> Mlp::probability(const Tensor& x) const {
  const Tensor z = logits(x);
  std::vector<double> out(z.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(z[2 * i] - z[2 * i + 1]));
  return out;
}

Mlp train_mlp(const Tensor& x, std::span<const int> labels, const std::vector<std::size_t>& hidden, std::size_t iters,
              double lr, std::uint64_t seed) {
  require_matrix(x, "mlp");
  require_binary(labels, x.dim(0), "mlp");
  if (!(lr > 0.0)) throw ValidationError("mlp: learning rate must be positive");
  Rng rng = make_rng(seed, {kStreamProbe});
  Mlp m;
  std::size_t in = x.dim(1);
  std::vector<std::size_t> widths = hidden;
  widths.push_back(2);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] == 0) throw ValidationError("mlp: hidden widths must be positive");
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({in, widths[l]});
    for (auto& v : w.values()) v = u(rng);
    m.params.add("layer" + std::to_string(l) + ".W", std::move(w));
    m.params.add("layer" + std::to_string(l) + ".b", Tensor({widths[l]}));
    in = widths[l];
  }
  const std::vector<int> y(labels.begin(), labels.end());
  const LossFunction loss = [&](Tape& tape, std::span<const Var> p) {
    return cross_entropy(mlp_forward(tape, x, p), y);
  };
  AdamState adam;
  for (std::size_t t = 0; t < iters; ++t) {
    auto r = adam_step(std::move(adam), m.params, grad(loss, m.params), lr);
    adam = std::move(r.state);
    m.params = std::move(r.params);
  }
  return m;
}

std::vector<double> svm_feature_importance(const Tensor& w, std::size_t rois) {
  if (w.rank() != 1 || rois == 0 || w.size() % rois != 0)
    throw ValidationError("importance: " + std::to_string(w.size()) + " weights do not split evenly over " +
                          std::to_string(rois) + " ROIs");
  const std::size_t per = w.size() / rois;
  std::vector<double> out(rois, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) out[i / per] += std::max(0.0, w[i]);
  return out;
}

std::string importance_csv(const std::vector<double>& importance) {
  std::string out = "roi_index,importance\n";
  for (std::size_t r = 0; r < importance.size(); ++r) out += std::to_string(r) + "," + format_double(importance[r]) + "\n";
  return out;
}

// ---- cross-validation -------------------------------------------------------

void ProbeSpec::validate() const {
  if (classifier != "svm" && classifier != "mlp") throw ValidationError("classifier must be svm or mlp, got " + classifier);
  if (!(c > 0.0)) throw ValidationError("svm C must be positive");
  if (svm_iters == 0 || mlp_iters == 0) throw ValidationError("probe iterations must be >= 1");
  if (!(mlp_lr > 0.0)) throw ValidationError("mlp learning rate must be positive");
  for (auto h : hidden)
    if (h == 0) throw ValidationError("mlp hidden widths must be positive");
}

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) throw ValidationError("row index out of range");
    std::copy_n(x.data() + rows[r] * d, d, out.data() + r * d);
  }
  return out;
}

namespace {

// Column z-scores with training statistics; constant columns are only centered.
void standardize(Tensor& train, Tensor& test) {
  const std::size_t n = train.dim(0), d = train.dim(1);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += train[i * d + j];
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (train[i * d + j] - mu) * (train[i * d + j] - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < n; ++i) train[i * d + j] = (train[i * d + j] - mu) * scale;
    for (std::size_t i = 0; i < test.dim(0); ++i) test[i * d + j] = (test[i * d + j] - mu) * scale;
  }
}

struct Scored {
  std::vector<double> score;
  std::vector<int> predicted;
};

Scored score_fold(const Tensor& x, std::span<const int> labels, const std::vector<std::size_t>& train,
                  const std::vector<std::size_t>& test, const ProbeSpec& spec, std::uint64_t seed) {
  Tensor xtr = take_rows(x, train), xte = take_rows(x, test);
  std::vector<int> ytr;
  for (auto i : train) ytr.push_back(labels[i]);
  if (spec.standardize) standardize(xtr, xte);
  if (spec.pca_components > 0) {
    const std::size_t k = std::min({spec.pca_components, train.size() - 1, xtr.dim(1)});
    if (k == 0) throw ValidationError("too few training subjects for PCA");
    Pca p;
    xtr = pca_reduce(xtr, k, &p);
    xte = pca_transform(p, xte);
  }
  Scored s;
  if (spec.classifier == "svm") {
    const auto m = train_linear_svm(xtr, ytr, spec.c, spec.svm_iters);
    s.score = m.decision(xte);
    for (double v : s.score) s.predicted.push_back(v > 0.0 ? 1 : 0);
  } else {
    const auto m = train_mlp(xtr, ytr, spec.hidden, spec.mlp_iters, spec.mlp_lr, seed);
    s.score = m.probability(xte);
    for (double v : s.score) s.predicted.push_back(v > 0.5 ? 1 : 0);
  }
  return s;
}

}  // namespace

std::vector<double> roi_importance(const ZeroShotFeatures& features, std::span<const int> labels, double c,
                                   std::size_t iters) {
  Tensor x = features.flat();
  Tensor none({1, x.dim(1)});
  standardize(x, none);
  return svm_feature_importance(train_linear_svm(x, labels, c, iters).w, features.parcels());
}

std::vector<double> fit_and_score(const Tensor& x, std::span<const int> labels, const std::vector<std::size_t>& train,
                                  const std::vector<std::size_t>& test, const ProbeSpec& spec, std::uint64_t seed) {
  spec.validate();
  require_matrix(x, "probe");
  return score_fold(x, labels, train, test, spec, seed).score;
}

std::string CvReport::json() const {
  nlohmann::ordered_json j;
  j["classifier"] = classifier;
  j["folds"] = folds;
  j["repeats"] = repeats;
  j["auc_mean"] = auc_mean;
  j["auc_std"] = auc_std;
  j["acc_mean"] = acc_mean;
  j["acc_std"] = acc_std;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& f : per_fold)
    rows.push_back({{"repeat", f.repeat}, {"fold", f.fold}, {"auc", f.auc}, {"acc", f.acc}});
  j["per_fold"] = rows;
  return j.dump(2) + "\n";
}

CvReport evaluate_cv(const Tensor& x, std::span<const int> labels, const ProbeSpec& spec, std::size_t folds,
                     std::size_t repeats, std::uint64_t seed) {
  spec.validate();
  require_matrix(x, "probe");
  require_binary(labels, x.dim(0), "probe");
  if (repeats == 0) throw ValidationError("repeats must be >= 1");

  std::vector<std::vector<std::size_t>> assignment(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng rng = make_rng(seed, {kStreamFolds, r});
    assignment[r] = stratified_folds(labels, folds, rng);
  }
  CvReport rep;
  rep.classifier = spec.classifier;
  rep.folds = folds;
  rep.repeats = repeats;
  rep.per_fold.resize(repeats * folds);
  // Every task writes its own slot, so the result does not depend on scheduling.
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t task = 0; task < repeats * folds; ++task) {
    const std::size_t r = task / folds, f = task % folds;
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i) (assignment[r][i] == f ? test : train).push_back(i);
    std::vector<int> yte;
    for (auto i : test) yte.push_back(labels[i]);
    try {
      const auto s = score_fold(x, labels, train, test, spec, derive_seed(seed, {kStreamProbe, r, f}));
      rep.per_fold[task] = {r, f, auc(s.score, yte), accuracy(s.predicted, yte)};
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw ValidationError(failure);
  std::vector<double> a, c;
  for (const auto& f : rep.per_fold) {
    a.push_back(f.auc);
    c.push_back(f.acc);
  }
  rep.auc_mean = mean_of(a);
  rep.auc_std = std_of(a);
  rep.acc_mean = mean_of(c);
  rep.acc_std = std_of(c);
  return rep;
}

}  // namespace metsk
