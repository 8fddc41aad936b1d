#include "metsk/stgcn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "metsk/io.hpp"

namespace metsk {

void ModelConfig::validate() const {
  if (channels.size() != 4) throw ValidationError("channel plan must list 4 widths [1, c1, c2, c3]");
  if (channels[0] != 1) throw ValidationError("channel plan must start with 1 input channel");
  for (auto c : channels)
    if (c == 0) throw ValidationError("channel widths must be positive");
  if (temporal_kernel % 2 == 0) throw ValidationError("temporal kernel size must be odd");
  if (embedding == 0) throw ValidationError("embedding dimension must be positive");
}

namespace {

Tensor uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

void add_block(ParamSet& ps, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t kt,
               Rng& rng) {
  ps.add(prefix + ".W", uniform({cin, cout}, cin, rng));
  ps.add(prefix + ".kernel", uniform({cout, cout, kt}, cout * kt, rng));
  ps.add(prefix + ".bias", Tensor({cout}, 0.0));
}

}  // namespace

ParamSet init_extractor(const ModelConfig& config, Rng& rng) {
  config.validate();
  ParamSet ps;
  for (std::size_t i = 0; i < 3; ++i)
    add_block(ps, "block" + std::to_string(i), config.channels[i], config.channels[i + 1], config.temporal_kernel,
              rng);
  return ps;
}

ParamSet init_head(const ModelConfig& config, std::size_t out_dim, Rng& rng) {
  config.validate();
  const std::size_t c = config.feature_channels();
  ParamSet ps;
  add_block(ps, "head", c, c, config.temporal_kernel, rng);
  ps.add("dense.W", uniform({c, out_dim}, c, rng));
  ps.add("dense.b", Tensor({out_dim}, 0.0));
  return ps;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.config = config;
  Rng phi_rng = make_rng(seed, {kStreamInit, 0});
  Rng src_rng = make_rng(seed, {kStreamInit, 1});
  m.phi = init_extractor(config, phi_rng);
  m.theta_s = init_head(config, config.source_out(), src_rng);
  reinit_target_head(m, derive_seed(seed, {kStreamInit, 2}));
  return m;
}

void reinit_target_head(Model& model, std::uint64_t seed) {
  Rng rng = make_rng(seed, {kStreamHeadInit});
  model.theta_t = init_head(model.config, 2, rng);
}

std::vector<Var> bind(Tape& tape, const ParamSet& params, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& e : params) out.push_back(tape.leaf(e.value, requires_grad));
  return out;
}

Var block_forward(const Tensor& graphs, Var x, Var w, Var kernel, Var bias) {
  if (x.shape().size() != 4) throw ValidationError("block input must be [G, P, L, C], got " + shape_string(x.shape()));
  if (w.shape().size() != 2 || w.shape()[0] != x.shape()[3]) {
    throw ValidationError("channel mismatch: input has " + std::to_string(x.shape()[3]) + " channels, W is " +
                          shape_string(w.shape()));
  }
  // Narrow side first: mixing nodes commutes with the channel map.
  Var h = w.shape()[0] <= w.shape()[1] ? matmul(node_mix(graphs, x), w) : node_mix(graphs, matmul(x, w));
  return relu(add_bias(conv_time(h, kernel), bias));
}

Var extractor_forward(const Tensor& graphs, Var x, std::span<const Var> phi) {
  if (phi.size() != 9) throw ValidationError("extractor expects 9 parameter tensors");
  Var h = x;
  for (std::size_t i = 0; i < 3; ++i) h = block_forward(graphs, h, phi[3 * i], phi[3 * i + 1], phi[3 * i + 2]);
  return h;
}

Var head_forward(const Tensor& graphs, Var features, std::span<const Var> head) {
  if (head.size() != 5) throw ValidationError("head expects 5 parameter tensors");
  Var h = block_forward(graphs, features, head[0], head[1], head[2]);
  Var pooled = mean_axes(h, 1, 3);  // [G, C]
  if (pooled.shape()[1] != head[3].shape()[0]) {
    throw ValidationError("dense layer expects " + std::to_string(head[3].shape()[0]) + " inputs, got " +
                          std::to_string(pooled.shape()[1]));
  }
  return add_bias(matmul(pooled, head[3]), head[4]);
}

Batch make_batch(std::span<const SubSequence> windows, std::span<const BrainGraph> graphs,
                 std::span<const int> subject_labels) {
  if (windows.empty()) throw ValidationError("empty batch");
  const Shape& ws = windows.front().values.shape();
  const std::size_t p = ws[0], l = ws[1], g = windows.size();
  Batch b;
  b.graphs = Tensor({g, p, p});
  b.x = Tensor({g, p, l, 1});
  for (std::size_t i = 0; i < g; ++i) {
    const auto& w = windows[i];
    if (w.values.shape() != ws) throw ValidationError("batch windows differ in shape");
    if (w.subject_index >= graphs.size()) throw ValidationError("window refers to a subject without a graph");
    const Tensor& a = graphs[w.subject_index].normalized;
    if (a.dim(0) != p) throw ValidationError("graph size does not match the window's parcels");
    std::copy_n(a.data(), p * p, b.graphs.data() + i * p * p);
    std::copy_n(w.values.data(), p * l, b.x.data() + i * p * l);
    b.subjects.push_back(w.subject_index);
    if (!subject_labels.empty()) b.labels.push_back(subject_labels[w.subject_index]);
  }
  return b;
}

Tensor extract_features(const Model& model, const Batch& batch) {
  Tape tape;
  auto phi = bind(tape, model.phi, false);
  return extractor_forward(batch.graphs, tape.constant(batch.x), phi).value();
}

Tensor target_logits(const Model& model, const Batch& batch) {
  Tape tape;
  auto phi = bind(tape, model.phi, false);
  auto th = bind(tape, model.theta_t, false);
  return head_forward(batch.graphs, extractor_forward(batch.graphs, tape.constant(batch.x), phi), th).value();
}

Tensor source_outputs(const Model& model, const Batch& batch) {
  if (model.theta_s.empty()) throw ValidationError("model has no source head");
  Tape tape;
  auto phi = bind(tape, model.phi, false);
  auto th = bind(tape, model.theta_s, false);
  return head_forward(batch.graphs, extractor_forward(batch.graphs, tape.constant(batch.x), phi), th).value();
}

namespace {

void softmax2(const double* z, double* out) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  out[0] = e0 / (e0 + e1);
  out[1] = e1 / (e0 + e1);
}

Vote finish_vote(std::vector<double>& p0, std::vector<double>& p1) {
  std::sort(p0.begin(), p0.end());
  std::sort(p1.begin(), p1.end());
  double s0 = 0.0, s1 = 0.0;
  for (double v : p0) s0 += v;
  for (double v : p1) s1 += v;
  const double n = static_cast<double>(p0.size());
  Vote v;
  v.probabilities = Tensor::vector({s0 / n, s1 / n});
  v.predicted = v.probabilities[1] > v.probabilities[0] ? 1 : 0;
  return v;
}

}  // namespace

Vote vote(std::span<const Tensor> logits) {
  if (logits.empty()) throw ValidationError("vote needs at least one logit vector");
  std::vector<double> p0, p1;
  for (const auto& z : logits) {
    if (z.size() != 2) throw ValidationError("vote expects 2-class logits, got " + shape_string(z.shape()));
    double p[2];
    softmax2(z.data(), p);
    p0.push_back(p[0]);
    p1.push_back(p[1]);
  }
  return finish_vote(p0, p1);
}

Vote vote_rows(const Tensor& logits, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("vote needs at least one logit vector");
  if (logits.rank() != 2 || logits.dim(1) != 2) throw ValidationError("vote_rows expects [N, 2] logits");
  std::vector<double> p0, p1;
  for (auto r : rows) {
    if (r >= logits.dim(0)) throw ValidationError("vote row out of range");
    double p[2];
    softmax2(logits.data() + 2 * r, p);
    p0.push_back(p[0]);
    p1.push_back(p[1]);
  }
  return finish_vote(p0, p1);
}

std::string serialize_model(const Model& model) {
  std::string out = "METSK-MODEL v1\n";
  auto emit = [&](const char* prefix, const ParamSet& ps) {
    for (const auto& e : ps) {
      out += std::string(prefix) + e.name + " " + std::to_string(e.value.rank());
      for (auto d : e.value.shape()) out += " " + std::to_string(d);
      out += '\n';
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        if (i) out += ' ';
        out += format_double(e.value[i]);
      }
      out += '\n';
    }
  };
  emit("phi.", model.phi);
  emit("theta_s.", model.theta_s);
  emit("theta_t.", model.theta_t);
  return out;
}

Model deserialize_model(const std::string& text, const std::string& where) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "METSK-MODEL v1") throw ValidationError(where + ": missing METSK-MODEL v1 header");
  if (lines.size() % 2 != 1) throw ValidationError(where + ": truncated model file");
  Model m;
  for (std::size_t i = 1; i < lines.size(); i += 2) {
    const std::string loc = where + ":" + std::to_string(i + 1);
    auto head = split(lines[i], ' ');
    if (head.size() < 2) throw ValidationError(loc + ": expected '<name> <ndims> <dims...>'");
    const std::string name(head[0]);
    const auto ndims = parse_integer(head[1], loc);
    if (ndims < 1 || static_cast<std::size_t>(ndims) + 2 != head.size())
      throw ValidationError(loc + ": dimension count does not match");
    Shape shape;
    for (std::size_t d = 0; d < static_cast<std::size_t>(ndims); ++d) {
      const auto v = parse_integer(head[2 + d], loc);
      if (v < 1) throw ValidationError(loc + ": dimensions must be positive");
      shape.push_back(static_cast<std::size_t>(v));
    }
    auto cells = split(lines[i + 1], ' ');
    if (cells.size() != shape_size(shape)) throw ValidationError(where + ":" + std::to_string(i + 2) + ": value count does not match shape");
    std::vector<double> values;
    values.reserve(cells.size());
    for (auto c : cells) values.push_back(parse_double(c, where + ":" + std::to_string(i + 2)));
    Tensor t(shape, std::move(values));
    auto strip = [&](const std::string& prefix) { return name.substr(prefix.size()); };
    if (name.starts_with("phi.")) m.phi.add(strip("phi."), std::move(t));
    else if (name.starts_with("theta_s.")) m.theta_s.add(strip("theta_s."), std::move(t));
    else if (name.starts_with("theta_t.")) m.theta_t.add(strip("theta_t."), std::move(t));
    else throw ValidationError(loc + ": unknown parameter group in '" + name + "'");
  }

  ModelConfig& c = m.config;
  try {
    c.channels = {m.phi.at("block0.W").dim(0), m.phi.at("block0.W").dim(1), m.phi.at("block1.W").dim(1),
                  m.phi.at("block2.W").dim(1)};
    c.temporal_kernel = m.phi.at("block0.kernel").dim(2);
    if (!m.theta_s.empty()) c.embedding = m.theta_s.at("dense.W").dim(1);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": incomplete model: " + e.what());
  }
  c.validate();
  // shape check against a freshly built model of the recovered configuration
  Rng rng(0);
  const ParamSet ref_phi = init_extractor(c, rng);
  const ParamSet ref_head = init_head(c, 2, rng);
  auto check = [&](const ParamSet& got, const ParamSet& ref, std::size_t out_dim, const char* group) {
    if (got.size() != ref.size()) throw ValidationError(where + ": " + group + " has the wrong number of tensors");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      Shape want = ref[i].value.shape();
      if (ref[i].name.starts_with("dense")) want.back() = out_dim;
      if (got[i].name != ref[i].name || got[i].value.shape() != want)
        throw ValidationError(where + ": unexpected tensor " + group + "." + got[i].name);
    }
  };
  check(m.phi, ref_phi, 0, "phi");
  if (!m.theta_s.empty()) check(m.theta_s, ref_head, c.embedding, "theta_s");
  check(m.theta_t, ref_head, 2, "theta_t");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path), path.string()); }

}  // namespace metsk
