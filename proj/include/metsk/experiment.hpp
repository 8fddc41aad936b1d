#pragma once

// Strategy comparison on synthetic cohorts: per seed, generate data, run
// stratified k-fold over the target subjects, train every strategy on the
// training folds and score the held-out fold by AUC of the voted probability.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metsk/data.hpp"
#include "metsk/meta.hpp"

namespace metsk {

struct EvalSpec {
  SynthSpec synth;
  MetaConfig config;
  std::vector<Strategy> strategies{Strategy::baseline, Strategy::metsk};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t folds = 5;
};

struct FoldScore {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  double auc = 0.0;
  double acc = 0.0;
};

struct StrategyRow {
  Strategy strategy = Strategy::baseline;
  std::vector<FoldScore> folds;
  std::vector<double> seed_auc;  // mean over folds, one per seed
  double auc_mean = 0.0, auc_std = 0.0;  // over all folds of all seeds
  double acc_mean = 0.0, acc_std = 0.0;
  double seconds = 0.0;
};

struct EvalTable {
  std::vector<StrategyRow> rows;
  const StrategyRow& row(Strategy s) const;
  std::string json() const;
};

// Called after every trained fold.
using EvalProgress = std::function<void(Strategy, std::uint64_t seed, std::size_t fold, const FoldScore&)>;

EvalTable run_eval(const EvalSpec& spec, const EvalProgress& progress = {});

// AUC and accuracy of one strategy on one train/test split of a target cohort.
FoldScore score_split(Strategy strategy, const Dataset& source, const Dataset& target_train,
                      const Dataset& target_test, const MetaConfig& config);

}  // namespace metsk
