#pragma once

// Spatio-temporal graph convolution backbone.
//
// Parameters live in three ParamSets: phi (the three-block feature
// extractor), theta_s (source head) and theta_t (target head). Names are
//   block<i>.W       [Cin, Cout]       node-wise channel map
//   block<i>.kernel  [Cout, Cout, Kt]  temporal convolution
//   block<i>.bias    [Cout]
// for the extractor, and head.W / head.kernel / head.bias plus dense.W
// [C, out] / dense.b [out] for a head.
//
// Every forward takes a batch: x is [G, P, L, C] and graphs is [G, P, P],
// one normalized adjacency per sample.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metsk/autodiff.hpp"
#include "metsk/data.hpp"
#include "metsk/optim.hpp"
#include "metsk/rng.hpp"

namespace metsk {

struct ModelConfig {
  std::vector<std::size_t> channels{1, 16, 16, 16};
  std::size_t temporal_kernel = 9;
  std::size_t embedding = 32;
  // Source head emits 2 logits instead of an embedding.
  bool supervised_source = false;

  std::size_t source_out() const { return supervised_source ? 2 : embedding; }
  std::size_t feature_channels() const { return channels.back(); }
  void validate() const;
};

struct Model {
  ModelConfig config;
  ParamSet phi;
  ParamSet theta_s;  // empty for strategies without a source head
  ParamSet theta_t;
};

ParamSet init_extractor(const ModelConfig& config, Rng& rng);
ParamSet init_head(const ModelConfig& config, std::size_t out_dim, Rng& rng);

// Weights uniform on +-sqrt(1 / fan_in), biases zero. Each part draws from its
// own stream derived from seed.
Model init_model(const ModelConfig& config, std::uint64_t seed);
// Fresh theta_t from `seed`; phi and theta_s untouched.
void reinit_target_head(Model& model, std::uint64_t seed);

// Parameters bound as tape leaves, in ParamSet order.
std::vector<Var> bind(Tape& tape, const ParamSet& params, bool requires_grad);

// One block: ReLU(conv_time(graphs . x . W, kernel) + bias).
Var block_forward(const Tensor& graphs, Var x, Var w, Var kernel, Var bias);
// [G, P, L, 1] -> [G, P, L, c3]
Var extractor_forward(const Tensor& graphs, Var x, std::span<const Var> phi);
// [G, P, L, c3] -> [G, out]; block, mean over nodes and time, dense, no activation.
Var head_forward(const Tensor& graphs, Var features, std::span<const Var> head);

// A batch of sub-sequences with the graph of the subject each came from.
struct Batch {
  Tensor graphs;  // [G, P, P]
  Tensor x;       // [G, P, L, 1]
  std::vector<std::size_t> subjects;
  std::vector<int> labels;  // empty when unlabeled

  std::size_t size() const { return subjects.size(); }
};

Batch make_batch(std::span<const SubSequence> windows, std::span<const BrainGraph> graphs,
                 std::span<const int> subject_labels = {});

// Forward passes without gradients.
Tensor extract_features(const Model& model, const Batch& batch);
Tensor target_logits(const Model& model, const Batch& batch);
Tensor source_outputs(const Model& model, const Batch& batch);

struct Vote {
  Tensor probabilities;  // [2]
  int predicted = 0;
};

/// Softmax each logit pair, average, argmax with ties to class 0. The sum runs
/// over sorted values so any permutation of the input gives the same bits.
Vote vote(std::span<const Tensor> logits);
// Rows of a [N, 2] logit matrix.
Vote vote_rows(const Tensor& logits, std::span<const std::size_t> rows);

// Text format: "METSK-MODEL v1", then per tensor a line "<name> <ndims>
// <dims...>" and a line of values with 17 significant digits. Names carry
// the phi. / theta_s. / theta_t. prefix; the configuration is recovered
// from the shapes.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& text, const std::string& where);

}  // namespace metsk
