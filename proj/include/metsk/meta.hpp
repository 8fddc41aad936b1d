#pragma once

// Bi-level trainer and the comparison strategies.
//
//   metsk     warm-up on the source contrastive loss, then per outer
//             iteration: fresh theta_t and meta split, k SGD steps of theta_t
//             on a meta-train batch, one Adam step of (phi, theta_s) on
//             L_S + lambda * L_T(meta-validation batch) with theta_t fixed.
//   baseline  cross-entropy on the target only, (phi, theta_t).
//   ft        source contrastive pre-training, then target fine-tuning.
//   mtl       metsk without the inner loop: one Adam step of all parameters
//             on L_S + lambda * L_T over the whole target training set.
//   mel       metsk without source head and source loss.
//   ssl       source contrastive loss only (optionally target windows too).

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "metsk/data.hpp"
#include "metsk/optim.hpp"
#include "metsk/stgcn.hpp"

namespace metsk {

enum class Strategy { metsk, baseline, ft, mtl, mel, ssl };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

// How metsk and mel produce the target head used after training.
enum class FinalHead {
  last,   // theta_t^k of the final outer iteration
  adapt,  // fresh theta_t trained by the inner loop on the whole target set
};

struct MetaConfig {
  double alpha = 0.01;
  double beta = 0.001;
  std::size_t k = 25;
  double lambda = 30.0;
  double tau = 30.0;
  std::size_t outer_iterations = 100;  // M
  std::size_t batch_size = 32;
  double warmup_fraction = 0.5;
  // Meta split sizes; when both are zero, meta_fraction of the target set
  // (rounded, at least one subject per class on each side) goes to training.
  std::size_t meta_train = 0;
  std::size_t meta_val = 0;
  double meta_fraction = 0.8;
  std::size_t window = 64;              // L
  std::size_t windows_per_subject = 8;  // R, used for voting at evaluation
  ModelConfig model;
  bool ssl_with_target = false;  // ssl also contrasts target subjects
  bool ft_freeze_extractor = false;
  FinalHead final_head = FinalHead::adapt;
  std::uint64_t seed = 0;

  std::size_t warmup_iterations() const;
  void validate() const;
};

struct HistoryEntry {
  std::size_t iteration = 0;
  std::string phase;  // warmup, meta, train, pretrain, finetune
  double source_loss = std::numeric_limits<double>::quiet_NaN();
  double target_inner_last = std::numeric_limits<double>::quiet_NaN();
  double target_val = std::numeric_limits<double>::quiet_NaN();
};

struct MetaSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

struct TrainState {
  Model model;
  AdamState adam;         // (phi, theta_s) or (phi, theta_t) depending on strategy
  AdamState adam_target;  // theta_t under mtl
  std::size_t iteration = 0;
  std::vector<HistoryEntry> history;
  // Target batches assembled while still in warm-up; stays 0 by construction.
  std::size_t target_batches_in_warmup = 0;
  MetaSplit split;  // split of the current meta iteration (metsk, mel)
};

/// Stratified random split of a labeled target set into n_tr / n_val subjects.
/// Each side must receive at least one subject of each class.
MetaSplit split_meta(const Dataset& target, std::size_t n_tr, std::size_t n_val, Rng& rng);
// Resolves the configured split sizes for a target set of the given size.
std::pair<std::size_t, std::size_t> meta_split_sizes(const MetaConfig& config, const Dataset& target);

// A cohort prepared for training: subjects plus one graph per subject.
struct Cohort {
  const Dataset* data = nullptr;
  std::vector<BrainGraph> graphs;
  std::vector<int> labels;  // empty when unlabeled

  explicit Cohort(const Dataset& dataset);
  std::size_t size() const { return graphs.size(); }
};

// Two windows per subject for batch_size subjects drawn without replacement
// (all subjects when fewer): returns (view1, view2) batches.
std::pair<Batch, Batch> contrastive_batches(const Cohort& cohort, std::size_t batch_size, std::size_t window,
                                            Rng& rng);
// Equal numbers of windows from each class among the given subjects, one
// random window per draw; subjects cycle through shuffled class lists.
Batch balanced_batch(const Cohort& cohort, const std::vector<std::size_t>& subjects, std::size_t batch_size,
                     std::size_t window, Rng& rng);

struct InnerResult {
  ParamSet theta_t;
  std::vector<double> losses;  // loss before each step
};

/// k SGD steps at rate alpha on theta_t only; phi is read, never written.
InnerResult inner_loop(const Model& model, const Batch& batch, const MetaConfig& config);

struct OuterResult {
  ParamSet phi;
  ParamSet theta_s;
  AdamState adam;
  double source_loss = 0.0;
  double target_loss = 0.0;
};

/// One Adam step of (phi, theta_s) on L_S(source views) + lambda L_T(val
/// batch) with theta_t held fixed. Without a source head (mel) the source
/// term is dropped; without a target batch the step is source-only.
OuterResult outer_step(const Model& model, const AdamState& adam, const std::pair<Batch, Batch>* source_views,
                       const Batch* target_val, const MetaConfig& config);

// Source loss: contrastive between the two views, or cross-entropy on both
// views when the model's source head is supervised.
Var source_loss(Tape& tape, const std::vector<Var>& phi, const std::vector<Var>& theta_s,
                const std::pair<Batch, Batch>& views, const MetaConfig& config);

// Called after every phase with the current state; phase is one of
// warmup, step1, inner, outer, train, pretrain, finetune, final.
using TrainObserver = std::function<void(const std::string& phase, const TrainState& state)>;

struct TrainResult {
  TrainState state;
  std::string model_text;
};

/// Runs a strategy end to end. source may be null for baseline and mel;
/// target may be null for ssl.
TrainResult train(Strategy strategy, const Dataset* source, const Dataset* target, const MetaConfig& config,
                  const TrainObserver& observer = {});

// Tab-separated "iter phase L_S L_T_inner_last L_T_val", 17 significant digits.
std::string format_history(const std::vector<HistoryEntry>& history);

// Windows at evenly spaced starts over [0, T - L]; the evaluation inputs.
std::vector<SubSequence> evaluation_windows(const SubjectRecord& record, std::size_t subject_index,
                                            std::size_t window, std::size_t count);

struct Prediction {
  std::vector<double> probability;  // of class 1, per subject
  std::vector<int> predicted;
};

// Votes the target head over evaluation windows of every subject.
Prediction predict(const Model& model, const Dataset& data, const MetaConfig& config);

}  // namespace metsk
