#include "metsk/experiment.hpp"

#include <chrono>

#include <json.hpp>

#include "metsk/probe.hpp"

namespace metsk {

const StrategyRow& EvalTable::row(Strategy s) const {
  for (const auto& r : rows)
    if (r.strategy == s) return r;
  throw ValidationError("strategy " + strategy_name(s) + " was not evaluated");
}

std::string EvalTable::json() const {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["strategy"] = strategy_name(r.strategy);
    j["auc_mean"] = r.auc_mean;
    j["auc_std"] = r.auc_std;
    j["acc_mean"] = r.acc_mean;
    j["acc_std"] = r.acc_std;
    j["seed_auc"] = r.seed_auc;
    auto folds = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) folds.push_back({{"seed", f.seed}, {"fold", f.fold}, {"auc", f.auc}, {"acc", f.acc}});
    j["folds"] = folds;
    out.push_back(j);
  }
  return out.dump(2) + "\n";
}

FoldScore score_split(Strategy strategy, const Dataset& source, const Dataset& target_train,
                      const Dataset& target_test, const MetaConfig& config) {
  const bool uses_source = strategy != Strategy::baseline && strategy != Strategy::mel;
  const auto result = train(strategy, uses_source ? &source : nullptr, &target_train, config);
  const auto pred = predict(result.state.model, target_test, config);
  const auto labels = target_test.labels();
  FoldScore s;
  s.auc = auc(pred.probability, labels);
  s.acc = accuracy(pred.predicted, labels);
  return s;
}

EvalTable run_eval(const EvalSpec& spec, const EvalProgress& progress) {
  spec.synth.validate();
  spec.config.validate();
  if (spec.strategies.empty()) throw ValidationError("no strategies to evaluate");
  if (spec.seeds.empty()) throw ValidationError("no seeds to evaluate");
  for (auto s : spec.strategies)
    if (s == Strategy::ssl) throw ValidationError("ssl has no target head to evaluate");

  EvalTable table;
  for (auto s : spec.strategies) {
    table.rows.emplace_back();
    table.rows.back().strategy = s;
  }
  for (auto seed : spec.seeds) {
    const auto data = generate_synthetic(spec.synth, seed);
    const auto labels = data.target.labels();
    Rng rng = make_rng(seed, {kStreamFolds});
    const auto fold_of = stratified_folds(labels, spec.folds, rng);
    std::vector<double> seed_sum(table.rows.size(), 0.0);
    for (std::size_t f = 0; f < spec.folds; ++f) {
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < labels.size(); ++i) (fold_of[i] == f ? te : tr).push_back(i);
      const Dataset train_set = data.target.subset(tr), test_set = data.target.subset(te);
      MetaConfig cfg = spec.config;
      cfg.seed = derive_seed(seed, {kStreamFolds, f});
      for (std::size_t r = 0; r < table.rows.size(); ++r) {
        auto& row = table.rows[r];
        const auto t0 = std::chrono::steady_clock::now();
        FoldScore score = score_split(row.strategy, data.source, train_set, test_set, cfg);
        row.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        score.seed = seed;
        score.fold = f;
        row.folds.push_back(score);
        seed_sum[r] += score.auc;
        if (progress) progress(row.strategy, seed, f, score);
      }
    }
    for (std::size_t r = 0; r < table.rows.size(); ++r)
      table.rows[r].seed_auc.push_back(seed_sum[r] / static_cast<double>(spec.folds));
  }
  for (auto& row : table.rows) {
    std::vector<double> a, c;
    for (const auto& f : row.folds) {
      a.push_back(f.auc);
      c.push_back(f.acc);
    }
    row.auc_mean = mean_of(a);
    row.auc_std = std_of(a);
    row.acc_mean = mean_of(c);
    row.acc_std = std_of(c);
  }
  return table;
}

}  // namespace metsk
