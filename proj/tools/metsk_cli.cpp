// metsk command-line entry point: train, extract, probe, domsim, synth, eval.
// Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "metsk/config.hpp"
#include "metsk/domsim.hpp"
#include "metsk/experiment.hpp"
#include "metsk/io.hpp"
#include "metsk/meta.hpp"
#include "metsk/probe.hpp"

namespace fs = std::filesystem;
using namespace metsk;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--config", c.config, "Run configuration file (key = value)");
  cmd->add_option("--out", c.out, "Output directory")->required();
}

RunConfig load_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  if (c.seed_given) cfg.meta.seed = c.seed;
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

std::vector<int> labels_for(const std::vector<std::string>& ids, const fs::path& labels_file) {
  const auto table = read_labels(labels_file);
  std::vector<int> out;
  for (const auto& id : ids) {
    const auto it = table.find(id);
    if (it == table.end()) throw ValidationError(labels_file.string() + ": no label for subject " + id);
    out.push_back(it->second);
  }
  return out;
}

ZeroShotFeatures read_features(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("feature file not found: " + path);
  return parse_features_csv(read_file(path), path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned transfer of fMRI graph features"};
  app.require_subcommand(1);

  Common train_c, extract_c, probe_c, domsim_c, synth_c, eval_c;

  auto* train_cmd = app.add_subcommand("train", "Train a model with one strategy");
  add_common(train_cmd, train_c);
  std::string strategy, source, target;
  train_cmd->add_option("--strategy", strategy, "metsk | baseline | ft | mtl | mel | ssl");
  train_cmd->add_option("--source", source, "Source dataset directory");
  train_cmd->add_option("--target", target, "Target dataset directory");

  auto* extract_cmd = app.add_subcommand("extract", "Zero-shot features from a frozen extractor");
  add_common(extract_cmd, extract_c);
  std::string model_path, data_dir;
  extract_cmd->add_option("--model", model_path, "Model file")->required();
  extract_cmd->add_option("--data", data_dir, "Dataset directory")->required();

  auto* probe_cmd = app.add_subcommand("probe", "Cross-validated classifier on extracted features");
  add_common(probe_cmd, probe_c);
  std::string features_path, labels_path;
  bool importance = false;
  probe_cmd->add_option("--features", features_path, "Feature CSV")->required();
  probe_cmd->add_option("--labels", labels_path, "labels.csv with subject_id,label")->required();
  probe_cmd->add_flag("--importance", importance, "Also write the per-ROI SVM importance map");

  auto* domsim_cmd = app.add_subcommand("domsim", "Domain similarity between two feature sets");
  add_common(domsim_cmd, domsim_c);
  std::string source_features, target_features;
  bool with_flow = false;
  domsim_cmd->add_option("--source-features", source_features, "Feature CSV")->required();
  domsim_cmd->add_option("--target-features", target_features, "Feature CSV")->required();
  domsim_cmd->add_flag("--flow", with_flow, "Include the optimal flow matrix");

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic source/target cohort");
  add_common(synth_cmd, synth_c);
  std::string spec_path;
  synth_cmd->add_option("--spec", spec_path, "Generator spec (key = value)");

  auto* eval_cmd = app.add_subcommand("eval", "Strategy comparison on synthetic cohorts");
  add_common(eval_cmd, eval_c);
  std::string eval_spec, strategies = "baseline,metsk", seeds = "1,2,3";
  eval_cmd->add_option("--spec", eval_spec, "Generator spec (key = value)");
  eval_cmd->add_option("--strategies", strategies, "Comma-separated strategies");
  eval_cmd->add_option("--seeds", seeds, "Comma-separated data seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      RunConfig cfg = load_config(train_c);
      if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
      if (!source.empty()) cfg.source = source;
      if (!target.empty()) cfg.target = target;
      const Strategy s = cfg.strategy;
      const bool wants_source = s != Strategy::baseline && s != Strategy::mel;
      const bool wants_target = s != Strategy::ssl || cfg.meta.ssl_with_target;
      if (wants_source && cfg.source.empty()) throw ValidationError("strategy " + strategy_name(s) + " needs --source");
      if (wants_target && cfg.target.empty()) throw ValidationError("strategy " + strategy_name(s) + " needs --target");
      std::optional<Dataset> src, tgt;
      if (wants_source) src = load_dataset(cfg.source, Domain::source);
      if (wants_target) tgt = load_dataset(cfg.target, Domain::target);
      const auto result = train(s, src ? &*src : nullptr, tgt ? &*tgt : nullptr, cfg.meta,
                                [](const std::string& phase, const TrainState& st) {
                                  if (phase == "final") std::cerr << "finished after " << st.iteration << " iterations\n";
                                });
      const fs::path dir = out_dir(train_c);
      write_file(dir / "model.txt", result.model_text);
      write_file(dir / "train_log.tsv", format_history(result.state.history));
    } else if (*extract_cmd) {
      const RunConfig cfg = load_config(extract_c);
      if (!fs::is_regular_file(model_path)) throw ValidationError("model file not found: " + model_path);
      const Model model = load_model(model_path);
      const Dataset data = load_dataset(data_dir, Domain::target);
      const auto f = extract_zero_shot(model, data, cfg.meta.window, cfg.meta.windows_per_subject, cfg.meta.seed);
      write_file(out_dir(extract_c) / "features.csv", features_csv(f));
    } else if (*probe_cmd) {
      const RunConfig cfg = load_config(probe_c);
      const auto f = read_features(features_path);
      const auto labels = labels_for(f.subject_ids, labels_path);
      const auto report = evaluate_cv(f.flat(), labels, cfg.probe, cfg.folds, cfg.repeats, cfg.meta.seed);
      const fs::path dir = out_dir(probe_c);
      write_file(dir / "report.json", report.json());
      if (importance)
        write_file(dir / "importance.csv", importance_csv(roi_importance(f, labels, cfg.probe.c, cfg.probe.svm_iters)));
      std::cerr << cfg.probe.classifier << " AUC " << report.auc_mean << " +- " << report.auc_std << "\n";
    } else if (*domsim_cmd) {
      const RunConfig cfg = load_config(domsim_c);
      const auto s = read_features(source_features), t = read_features(target_features);
      const auto report = domain_similarity_report(s.values, t.values, cfg.bins, cfg.gamma, with_flow);
      write_file(out_dir(domsim_c) / "domsim.json", report.json());
      std::cerr << "EMD " << report.emd << " DS " << report.ds << "\n";
    } else if (*synth_cmd) {
      const SynthSpec spec = spec_path.empty() ? SynthSpec{} : parse_synth_spec(spec_path);
      spec.validate();
      const auto data = generate_synthetic(spec, synth_c.seed);
      const fs::path dir = out_dir(synth_c);
      save_dataset(data.source, dir / "source");
      save_dataset(data.target, dir / "target");
    } else if (*eval_cmd) {
      const RunConfig cfg = load_config(eval_c);
      EvalSpec spec;
      if (!eval_spec.empty()) spec.synth = parse_synth_spec(eval_spec);
      spec.config = cfg.meta;
      spec.folds = cfg.folds;
      spec.strategies.clear();
      for (auto name : split(strategies, ',')) spec.strategies.push_back(parse_strategy(std::string(trim(name))));
      spec.seeds = parse_seed_list(seeds, "--seeds");
      const auto table = run_eval(spec, [](Strategy s, std::uint64_t seed, std::size_t fold, const FoldScore& f) {
        std::cerr << strategy_name(s) << " seed " << seed << " fold " << fold << " AUC " << f.auc << "\n";
      });
      write_file(out_dir(eval_c) / "eval.json", table.json());
      for (const auto& r : table.rows)
        std::cerr << strategy_name(r.strategy) << " mean AUC " << r.auc_mean << " +- " << r.auc_std << "\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
