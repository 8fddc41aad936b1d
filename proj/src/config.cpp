#include "metsk/config.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "metsk/io.hpp"

namespace metsk {

namespace {

using Setter = std::function<void(RunConfig&, const std::string& value, const std::string& where)>;

std::size_t count_at_least(const std::string& v, const std::string& where, const std::string& key, long long lo) {
  const long long n = parse_integer(v, where);
  if (n < lo) throw ValidationError(where + ": " + key + " must be at least " + std::to_string(lo));
  return static_cast<std::size_t>(n);
}

double positive(const std::string& v, const std::string& where, const std::string& key) {
  const double x = parse_double(v, where);
  if (!(x > 0.0) || !std::isfinite(x)) throw ValidationError(where + ": " + key + " must be positive");
  return x;
}

double in_range(const std::string& v, const std::string& where, const std::string& key, double lo, double hi,
                bool hi_open) {
  const double x = parse_double(v, where);
  if (!(x >= lo) || (hi_open ? !(x < hi) : !(x <= hi)))
    throw ValidationError(where + ": " + key + " must lie in [" + format_double(lo) + ", " + format_double(hi) +
                          (hi_open ? ")" : "]"));
  return x;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["alpha"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.meta.alpha = positive(v, w, "alpha"); };
    t["beta"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.meta.beta = positive(v, w, "beta"); };
    t["k"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.meta.k = count_at_least(v, w, "k", 0); };
    t["lambda"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.lambda = parse_double(v, w);
      if (!(c.meta.lambda >= 0.0) || !std::isfinite(c.meta.lambda))
        throw ValidationError(w + ": lambda must be nonnegative");
    };
    t["tau"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.meta.tau = positive(v, w, "tau"); };
    t["outer_iterations"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.outer_iterations = count_at_least(v, w, "outer_iterations", 1);
    };
    t["batch_size"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.batch_size = count_at_least(v, w, "batch_size", 2);
    };
    t["warmup_fraction"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.warmup_fraction = in_range(v, w, "warmup_fraction", 0.0, 1.0, true);
    };
    t["meta_train"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.meta_train = count_at_least(v, w, "meta_train", 0);
    };
    t["meta_val"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.meta_val = count_at_least(v, w, "meta_val", 0);
    };
    t["meta_fraction"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.meta_fraction = in_range(v, w, "meta_fraction", 0.0, 1.0, true);
      if (c.meta.meta_fraction == 0.0) throw ValidationError(w + ": meta_fraction must be positive");
    };
    t["window"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.window = count_at_least(v, w, "window", 1);
    };
    t["windows_per_subject"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.windows_per_subject = count_at_least(v, w, "windows_per_subject", 1);
    };
    t["channels"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      ModelConfig m = c.meta.model;
      m.channels = parse_size_list(v, w);
      try {
        m.validate();
      } catch (const ValidationError& e) {
        throw ValidationError(w + ": " + e.what());
      }
      c.meta.model = m;
    };
    t["temporal_kernel"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      const std::size_t kt = count_at_least(v, w, "temporal_kernel", 1);
      if (kt % 2 == 0) throw ValidationError(w + ": temporal_kernel must be odd");
      c.meta.model.temporal_kernel = kt;
    };
    t["embedding"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.model.embedding = count_at_least(v, w, "embedding", 1);
    };
    t["supervised_source"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.model.supervised_source = parse_bool(v, w);
    };
    t["ssl_with_target"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.ssl_with_target = parse_bool(v, w);
    };
    t["ft_freeze_extractor"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.ft_freeze_extractor = parse_bool(v, w);
    };
    t["final_head"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      if (v == "adapt") c.meta.final_head = FinalHead::adapt;
      else if (v == "last") c.meta.final_head = FinalHead::last;
      else throw ValidationError(w + ": final_head must be adapt or last");
    };
    t["seed"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.meta.seed = static_cast<std::uint64_t>(count_at_least(v, w, "seed", 0));
    };
    t["strategy"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      try {
        c.strategy = parse_strategy(v);
      } catch (const ValidationError& e) {
        throw ValidationError(w + ": " + e.what());
      }
    };
    t["source"] = [](RunConfig& c, const std::string& v, const std::string&) { c.source = v; };
    t["target"] = [](RunConfig& c, const std::string& v, const std::string&) { c.target = v; };
    t["classifier"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      if (v != "svm" && v != "mlp") throw ValidationError(w + ": classifier must be svm or mlp");
      c.probe.classifier = v;
    };
    t["svm_c"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.probe.c = positive(v, w, "svm_c"); };
    t["svm_iters"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.probe.svm_iters = count_at_least(v, w, "svm_iters", 1);
    };
    t["mlp_hidden"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.probe.hidden = trim(v).empty() ? std::vector<std::size_t>{} : parse_size_list(v, w);
      for (auto h : c.probe.hidden)
        if (h == 0) throw ValidationError(w + ": mlp_hidden widths must be positive");
    };
    t["mlp_iters"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.probe.mlp_iters = count_at_least(v, w, "mlp_iters", 1);
    };
    t["mlp_lr"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.probe.mlp_lr = positive(v, w, "mlp_lr"); };
    t["pca_components"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.probe.pca_components = count_at_least(v, w, "pca_components", 0);
    };
    t["standardize"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.probe.standardize = parse_bool(v, w);
    };
    t["folds"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.folds = count_at_least(v, w, "folds", 2); };
    t["repeats"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.repeats = count_at_least(v, w, "repeats", 1);
    };
    t["bins"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.bins = count_at_least(v, w, "bins", 1); };
    t["gamma"] = [](RunConfig& c, const std::string& v, const std::string& w) { c.gamma = positive(v, w, "gamma"); };
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  meta.validate();
  probe.validate();
  if (folds < 2) throw ValidationError("folds must be at least 2");
  if (repeats < 1) throw ValidationError("repeats must be at least 1");
  if (bins < 1) throw ValidationError("bins must be at least 1");
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value, const std::string& where) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ValidationError(where + ": unknown key '" + key + "'");
  it->second(config, value, where);
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  for (const auto& kv : read_key_values(path))
    apply_setting(config, kv.key, kv.value, path.string() + ":" + std::to_string(kv.line));
  config.validate();
}

RunConfig parse_config(const std::filesystem::path& path) {
  RunConfig c;
  apply_config_file(c, path);
  return c;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, unused] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& where) {
  std::vector<std::size_t> out;
  for (auto part : split(text, ',')) {
    const long long v = parse_integer(part, where);
    if (v < 0) throw ValidationError(where + ": list entries must be nonnegative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& where) {
  std::vector<std::uint64_t> out;
  for (auto v : parse_size_list(text, where)) out.push_back(v);
  if (out.empty()) throw ValidationError(where + ": empty seed list");
  return out;
}

}  // namespace metsk
