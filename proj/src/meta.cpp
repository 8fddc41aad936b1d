#include "metsk/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metsk/io.hpp"
#include "metsk/objectives.hpp"

namespace metsk {

Strategy parse_strategy(const std::string& name) {
  if (name == "metsk") return Strategy::metsk;
  if (name == "baseline") return Strategy::baseline;
  if (name == "ft") return Strategy::ft;
  if (name == "mtl") return Strategy::mtl;
  if (name == "mel") return Strategy::mel;
  if (name == "ssl") return Strategy::ssl;
  throw ValidationError("unknown strategy '" + name + "' (expected metsk, baseline, ft, mtl, mel or ssl)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::metsk: return "metsk";
    case Strategy::baseline: return "baseline";
    case Strategy::ft: return "ft";
    case Strategy::mtl: return "mtl";
    case Strategy::mel: return "mel";
    case Strategy::ssl: return "ssl";
  }
  return "?";
}

std::size_t MetaConfig::warmup_iterations() const {
  return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(outer_iterations)));
}

void MetaConfig::validate() const {
  model.validate();
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be nonnegative");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("tau must be positive");
  if (outer_iterations < 1) throw ValidationError("outer_iterations must be at least 1");
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ValidationError("warmup_fraction must lie in [0, 1)");
  if (!(meta_fraction > 0.0 && meta_fraction < 1.0)) throw ValidationError("meta_fraction must lie in (0, 1)");
  if ((meta_train == 0) != (meta_val == 0)) throw ValidationError("meta_train and meta_val must be given together");
  if (window < 1) throw ValidationError("window must be at least 1");
  if (windows_per_subject < 1) throw ValidationError("windows_per_subject must be at least 1");
}

// ---- splits and batches ----------------------------------------------------

std::pair<std::size_t, std::size_t> meta_split_sizes(const MetaConfig& config, const Dataset& target) {
  const std::size_t n = target.size();
  if (config.meta_train != 0) {
    if (config.meta_train + config.meta_val != n) {
      throw ValidationError("meta split " + std::to_string(config.meta_train) + " + " +
                            std::to_string(config.meta_val) + " does not cover " + std::to_string(n) +
                            " target subjects");
    }
    return {config.meta_train, config.meta_val};
  }
  if (n < 4) throw ValidationError("meta split needs at least 4 target subjects");
  auto tr = static_cast<std::size_t>(std::llround(config.meta_fraction * static_cast<double>(n)));
  tr = std::clamp<std::size_t>(tr, 2, n - 2);
  return {tr, n - tr};
}

MetaSplit split_meta(const Dataset& target, std::size_t n_tr, std::size_t n_val, Rng& rng) {
  const std::size_t n = target.size();
  if (n_tr + n_val != n) {
    throw ValidationError("meta split " + std::to_string(n_tr) + " + " + std::to_string(n_val) +
                          " must equal the " + std::to_string(n) + " target subjects");
  }
  const auto labels = target.labels();
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw ValidationError("meta split: class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                            " subjects; each side needs one");
    }
  }
  // proportional allocation, then repair so both sides see both classes
  std::size_t take[2];
  const double share = static_cast<double>(n_tr) / static_cast<double>(n);
  take[0] = static_cast<std::size_t>(std::llround(share * static_cast<double>(by_class[0].size())));
  take[0] = std::min(take[0], n_tr);
  take[1] = n_tr - take[0];
  for (int c = 0; c < 2; ++c) {
    const int o = 1 - c;
    while (take[c] > by_class[c].size() - 1 && take[o] < by_class[o].size() - 1) --take[c], ++take[o];
    while (take[c] < 1 && take[o] > 1) ++take[c], --take[o];
  }
  for (int c = 0; c < 2; ++c) {
    if (take[c] < 1 || take[c] > by_class[c].size() - 1 || take[1 - c] > by_class[1 - c].size()) {
      throw ValidationError("meta split " + std::to_string(n_tr) + "/" + std::to_string(n_val) +
                            " starves a class on one side");
    }
  }
  MetaSplit split;
  for (int c = 0; c < 2; ++c) {
    auto ids = by_class[c];
    std::shuffle(ids.begin(), ids.end(), rng);
    split.train.insert(split.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take[c]));
    split.val.insert(split.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(take[c]), ids.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

Cohort::Cohort(const Dataset& dataset) : data(&dataset) {
  dataset.validate();
  graphs.resize(dataset.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < dataset.size(); ++i) graphs[i] = build_graph(dataset.records[i].timeseries);
  if (dataset.labeled()) labels = dataset.labels();
}

namespace {

std::size_t draw_start(std::size_t t, std::size_t window, Rng& rng) {
  if (window > t) {
    throw ValidationError("window length " + std::to_string(window) + " exceeds " + std::to_string(t) +
                          " time points");
  }
  return std::uniform_int_distribution<std::size_t>(0, t - window)(rng);
}

SubSequence window_at(const Cohort& cohort, std::size_t subject, std::size_t start, std::size_t window) {
  SubSequence s;
  s.subject_index = subject;
  s.start = start;
  s.values = slice_window(cohort.data->records[subject].timeseries, start, window);
  return s;
}

}  // namespace

std::pair<Batch, Batch> contrastive_batches(const Cohort& cohort, std::size_t batch_size, std::size_t window,
                                            Rng& rng) {
  const std::size_t n = cohort.size();
  if (n < 2) throw ValidationError("contrastive batches need at least 2 subjects");
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  const std::size_t take = std::min(batch_size, n);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(take);

  std::vector<SubSequence> v1, v2;
  for (auto s : ids) {
    const std::size_t t = cohort.data->records[s].length();
    const std::size_t a = draw_start(t, window, rng);
    std::size_t b = a;
    // two different sub-sequences whenever the series allows it
    if (t > window) {
      b = std::uniform_int_distribution<std::size_t>(0, t - window - 1)(rng);
      if (b >= a) ++b;
    }
    v1.push_back(window_at(cohort, s, a, window));
    v2.push_back(window_at(cohort, s, b, window));
  }
  return {make_batch(v1, cohort.graphs, cohort.labels), make_batch(v2, cohort.graphs, cohort.labels)};
}

Batch balanced_batch(const Cohort& cohort, const std::vector<std::size_t>& subjects, std::size_t batch_size,
                     std::size_t window, Rng& rng) {
  if (cohort.labels.empty()) throw ValidationError("balanced batch needs a labeled cohort");
  std::vector<std::size_t> by_class[2];
  for (auto s : subjects) by_class[cohort.labels.at(s)].push_back(s);
  if (by_class[0].empty() || by_class[1].empty()) throw ValidationError("balanced batch needs both classes");
  const std::size_t half = std::max<std::size_t>(1, batch_size / 2);
  std::vector<SubSequence> windows;
  for (auto& ids : by_class) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < half; ++j) {
      if (j % ids.size() == 0) {
        order = ids;
        std::shuffle(order.begin(), order.end(), rng);
      }
      const std::size_t s = order[j % ids.size()];
      windows.push_back(window_at(cohort, s, draw_start(cohort.data->records[s].length(), window, rng), window));
    }
  }
  return make_batch(windows, cohort.graphs, cohort.labels);
}

// ---- loops -------------------------------------------------------------------

namespace {

ParamSet gradient_set(const ParamSet& like, const std::vector<Tensor>& grads, std::size_t offset) {
  ParamSet out;
  for (std::size_t i = 0; i < like.size(); ++i) out.add(like[i].name, grads[offset + i]);
  return out;
}

ParamSet join(const ParamSet& a, const char* pa, const ParamSet& b, const char* pb) {
  ParamSet out;
  for (const auto& e : a) out.add(pa + e.name, e.value);
  for (const auto& e : b) out.add(pb + e.name, e.value);
  return out;
}

ParamSet part(const ParamSet& joined, const std::string& prefix) {
  ParamSet out;
  for (const auto& e : joined)
    if (e.name.starts_with(prefix)) out.add(e.name.substr(prefix.size()), e.value);
  return out;
}

std::vector<Var> concat_vars(const std::vector<Var>& a, const std::vector<Var>& b) {
  std::vector<Var> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Var target_loss(Tape& tape, const std::vector<Var>& phi, const std::vector<Var>& theta_t, const Batch& batch) {
  Var f = extractor_forward(batch.graphs, tape.constant(batch.x), phi);
  return cross_entropy(head_forward(batch.graphs, f, theta_t), batch.labels);
}

}  // namespace

Var source_loss(Tape& tape, const std::vector<Var>& phi, const std::vector<Var>& theta_s,
                const std::pair<Batch, Batch>& views, const MetaConfig& config) {
  auto embed = [&](const Batch& b) {
    return head_forward(b.graphs, extractor_forward(b.graphs, tape.constant(b.x), phi), theta_s);
  };
  Var e1 = embed(views.first), e2 = embed(views.second);
  if (config.model.supervised_source) {
    if (views.first.labels.empty()) throw ValidationError("supervised source task needs a labeled source cohort");
    return scale(add(cross_entropy(e1, views.first.labels), cross_entropy(e2, views.second.labels)), 0.5);
  }
  return contrastive_loss(e1, e2, config.tau);
}

InnerResult inner_loop(const Model& model, const Batch& batch, const MetaConfig& config) {
  InnerResult r;
  r.theta_t = model.theta_t;
  if (config.k == 0) return r;
  if (batch.labels.empty()) throw ValidationError("inner loop needs a labeled batch");
  // phi is frozen here, so the extractor output is computed once
  const Tensor features = extract_features(model, batch);
  for (std::size_t j = 0; j < config.k; ++j) {
    Tape tape;
    auto th = bind(tape, r.theta_t, true);
    Var loss = cross_entropy(head_forward(batch.graphs, tape.constant(features), th), batch.labels);
    auto g = tape.gradient(loss, th);
    r.losses.push_back(loss.value().item());
    r.theta_t = sgd_step(r.theta_t, gradient_set(r.theta_t, g, 0), config.alpha);
  }
  return r;
}

OuterResult outer_step(const Model& model, const AdamState& adam, const std::pair<Batch, Batch>* source_views,
                       const Batch* target_val, const MetaConfig& config) {
  const bool use_source = source_views != nullptr && !model.theta_s.empty();
  if (!use_source && target_val == nullptr) throw ValidationError("outer step has neither a source nor a target term");
  Tape tape;
  auto phi = bind(tape, model.phi, true);
  std::vector<Var> ths;
  if (use_source) ths = bind(tape, model.theta_s, true);

  OuterResult r;
  std::optional<Var> total;
  if (use_source) {
    Var ls = source_loss(tape, phi, ths, *source_views, config);
    r.source_loss = ls.value().item();
    total = ls;
  }
  if (target_val != nullptr) {
    auto tht = bind(tape, model.theta_t, false);
    Var lt = target_loss(tape, phi, tht, *target_val);
    r.target_loss = lt.value().item();
    total = total ? meta_loss(*total, lt, config.lambda) : scale(lt, config.lambda);
  }
  const auto wrt = concat_vars(phi, ths);
  auto g = tape.gradient(*total, wrt);
  const ParamSet theta_s = use_source ? model.theta_s : ParamSet{};
  ParamSet grads = join(gradient_set(model.phi, g, 0), "phi.", gradient_set(theta_s, g, phi.size()), "theta_s.");
  auto step = adam_step(adam, join(model.phi, "phi.", theta_s, "theta_s."), grads, config.beta);
  r.phi = part(step.params, "phi.");
  r.theta_s = use_source ? part(step.params, "theta_s.") : model.theta_s;
  r.adam = std::move(step.state);
  return r;
}

namespace {

struct Trainer {
  Strategy strategy;
  const MetaConfig& cfg;
  const TrainObserver& observer;
  std::optional<Cohort> source;
  std::optional<Cohort> target;
  std::optional<Dataset> pooled;  // ssl over source and target together
  std::optional<Cohort> pooled_cohort;
  TrainState st;
  Rng source_rng, target_rng, split_rng;
  bool in_warmup = false;

  Trainer(Strategy s, const MetaConfig& c, const TrainObserver& o, std::uint64_t seed)
      : strategy(s),
        cfg(c),
        observer(o),
        source_rng(make_rng(seed, {kStreamSource})),
        target_rng(make_rng(seed, {kStreamTarget})),
        split_rng(make_rng(seed, {kStreamSplit})) {}

  void notify(const std::string& phase) {
    if (observer) observer(phase, st);
  }

  std::vector<std::size_t> all_target() const {
    std::vector<std::size_t> ids(target->size());
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
  }

  Batch target_batch(const std::vector<std::size_t>& ids) {
    if (in_warmup) ++st.target_batches_in_warmup;
    return balanced_batch(*target, ids, cfg.batch_size, cfg.window, target_rng);
  }

  std::pair<Batch, Batch> source_views() {
    const Cohort& c = pooled_cohort ? *pooled_cohort : *source;
    return contrastive_batches(c, cfg.batch_size, cfg.window, source_rng);
  }

  void apply_outer(const OuterResult& r) {
    st.model.phi = r.phi;
    st.model.theta_s = r.theta_s;
    st.adam = r.adam;
  }

  void warmup(std::size_t iterations) {
    in_warmup = true;
    for (std::size_t i = 0; i < iterations; ++i) {
      auto views = source_views();
      auto r = outer_step(st.model, st.adam, &views, nullptr, cfg);
      apply_outer(r);
      st.history.push_back({st.iteration++, "warmup", r.source_loss});
      notify("warmup");
    }
    in_warmup = false;
  }

  void meta_iterations(std::size_t iterations) {
    const auto [n_tr, n_val] = meta_split_sizes(cfg, *target->data);
    for (std::size_t i = 0; i < iterations; ++i) {
      // Step 1: fresh target head and meta split
      reinit_target_head(st.model, derive_seed(cfg.seed, {kStreamHeadInit, st.iteration}));
      st.split = split_meta(*target->data, n_tr, n_val, split_rng);
      notify("step1");
      // Step 2: adapt theta_t on one meta-train batch
      const Batch tr = target_batch(st.split.train);
      auto inner = inner_loop(st.model, tr, cfg);
      st.model.theta_t = std::move(inner.theta_t);
      notify("inner");
      // Step 3: update phi (and theta_s) against the adapted head
      std::optional<std::pair<Batch, Batch>> views;
      if (!st.model.theta_s.empty()) views = source_views();
      const Batch val = target_batch(st.split.val);
      auto r = outer_step(st.model, st.adam, views ? &*views : nullptr, &val, cfg);
      apply_outer(r);
      HistoryEntry h{st.iteration++, "meta"};
      if (views) h.source_loss = r.source_loss;
      if (!inner.losses.empty()) h.target_inner_last = inner.losses.back();
      h.target_val = r.target_loss;
      st.history.push_back(h);
      notify("outer");
    }
  }

  // Supervised target training of (phi, theta_t), or theta_t alone.
  void supervised(std::size_t iterations, const char* phase, bool freeze_phi) {
    AdamState adam;
    const auto ids = all_target();
    for (std::size_t i = 0; i < iterations; ++i) {
      const Batch b = target_batch(ids);
      Tape tape;
      auto phi = bind(tape, st.model.phi, !freeze_phi);
      auto th = bind(tape, st.model.theta_t, true);
      Var loss = target_loss(tape, phi, th, b);
      if (freeze_phi) {
        auto g = tape.gradient(loss, th);
        auto step = adam_step(adam, st.model.theta_t, gradient_set(st.model.theta_t, g, 0), cfg.beta);
        st.model.theta_t = std::move(step.params);
        adam = std::move(step.state);
      } else {
        auto g = tape.gradient(loss, concat_vars(phi, th));
        ParamSet grads = join(gradient_set(st.model.phi, g, 0), "phi.", gradient_set(st.model.theta_t, g, phi.size()),
                              "theta_t.");
        auto step = adam_step(adam, join(st.model.phi, "phi.", st.model.theta_t, "theta_t."), grads, cfg.beta);
        st.model.phi = part(step.params, "phi.");
        st.model.theta_t = part(step.params, "theta_t.");
        adam = std::move(step.state);
      }
      HistoryEntry h{st.iteration++, phase};
      h.target_val = loss.value().item();
      st.history.push_back(h);
      notify(phase);
    }
    st.adam = std::move(adam);
  }

  void joint(std::size_t iterations) {
    const auto ids = all_target();
    for (std::size_t i = 0; i < iterations; ++i) {
      auto views = source_views();
      const Batch b = target_batch(ids);
      Tape tape;
      auto phi = bind(tape, st.model.phi, true);
      auto ths = bind(tape, st.model.theta_s, true);
      auto tht = bind(tape, st.model.theta_t, true);
      Var ls = source_loss(tape, phi, ths, views, cfg);
      Var lt = target_loss(tape, phi, tht, b);
      auto wrt = concat_vars(concat_vars(phi, ths), tht);
      auto g = tape.gradient(meta_loss(ls, lt, cfg.lambda), wrt);
      ParamSet grads = join(gradient_set(st.model.phi, g, 0), "phi.", gradient_set(st.model.theta_s, g, phi.size()),
                            "theta_s.");
      auto step = adam_step(st.adam, join(st.model.phi, "phi.", st.model.theta_s, "theta_s."), grads, cfg.beta);
      st.model.phi = part(step.params, "phi.");
      st.model.theta_s = part(step.params, "theta_s.");
      st.adam = std::move(step.state);
      auto tstep = adam_step(st.adam_target, st.model.theta_t,
                             gradient_set(st.model.theta_t, g, phi.size() + ths.size()), cfg.beta);
      st.model.theta_t = std::move(tstep.params);
      st.adam_target = std::move(tstep.state);
      HistoryEntry h{st.iteration++, "train"};
      h.source_loss = ls.value().item();
      h.target_val = lt.value().item();
      st.history.push_back(h);
      notify("train");
    }
  }

  void final_head() {
    if (cfg.final_head == FinalHead::last) return;
    reinit_target_head(st.model, derive_seed(cfg.seed, {kStreamHeadInit, st.iteration, 1}));
    const Batch b = target_batch(all_target());
    st.model.theta_t = inner_loop(st.model, b, cfg).theta_t;
  }
};

}  // namespace

TrainResult train(Strategy strategy, const Dataset* source, const Dataset* target, const MetaConfig& config,
                  const TrainObserver& observer) {
  config.validate();
  const bool needs_source = strategy == Strategy::metsk || strategy == Strategy::ft || strategy == Strategy::mtl ||
                            strategy == Strategy::ssl;
  const bool needs_target = strategy != Strategy::ssl;
  if (needs_source && source == nullptr)
    throw ValidationError("strategy " + strategy_name(strategy) + " needs a source dataset");
  if (needs_target && target == nullptr)
    throw ValidationError("strategy " + strategy_name(strategy) + " needs a labeled target dataset");
  if (needs_target && !target->labeled())
    throw ValidationError("strategy " + strategy_name(strategy) + " needs target labels");
  if (strategy == Strategy::ssl && config.ssl_with_target && target == nullptr)
    throw ValidationError("ssl_with_target needs a target dataset");
  if (config.model.supervised_source && needs_source && !source->labeled())
    throw ValidationError("supervised source task needs source labels");
  if (source && target && source->parcels() != target->parcels())
    throw ValidationError("source and target parcel counts differ");

  Trainer tr(strategy, config, observer, config.seed);
  tr.st.model = init_model(config.model, config.seed);
  if (strategy == Strategy::mel || strategy == Strategy::baseline) tr.st.model.theta_s = ParamSet{};
  if (needs_source) tr.source.emplace(*source);
  if (needs_target) tr.target.emplace(*target);

  const std::size_t m = config.outer_iterations;
  const std::size_t w = config.warmup_iterations();
  switch (strategy) {
    case Strategy::metsk:
      tr.warmup(w);
      tr.meta_iterations(m - w);
      tr.final_head();
      break;
    case Strategy::mel:
      tr.meta_iterations(m);
      tr.final_head();
      break;
    case Strategy::mtl:
      tr.warmup(w);
      tr.joint(m - w);
      break;
    case Strategy::baseline:
      tr.supervised(m, "train", false);
      break;
    case Strategy::ft:
      tr.warmup(w);
      for (auto& h : tr.st.history) h.phase = "pretrain";
      tr.supervised(m - w, "finetune", config.ft_freeze_extractor);
      break;
    case Strategy::ssl:
      if (config.ssl_with_target) {
        Dataset pooled;
        pooled.domain = Domain::source;
        for (const auto* d : {source, target}) {
          if (!d) continue;
          for (auto r : d->records) {
            r.label.reset();
            pooled.records.push_back(std::move(r));
          }
        }
        tr.pooled.emplace(std::move(pooled));
        tr.pooled_cohort.emplace(*tr.pooled);
      }
      tr.warmup(m);
      for (auto& h : tr.st.history) h.phase = "train";
      break;
  }
  tr.notify("final");
  TrainResult out;
  out.model_text = serialize_model(tr.st.model);
  out.state = std::move(tr.st);
  return out;
}

std::string format_history(const std::vector<HistoryEntry>& history) {
  std::string out;
  for (const auto& h : history) {
    out += std::to_string(h.iteration) + '\t' + h.phase + '\t' + format_double(h.source_loss) + '\t' +
           format_double(h.target_inner_last) + '\t' + format_double(h.target_val) + '\n';
  }
  return out;
}

std::vector<SubSequence> evaluation_windows(const SubjectRecord& record, std::size_t subject_index,
                                            std::size_t window, std::size_t count) {
  if (window > record.length()) {
    throw ValidationError("window length " + std::to_string(window) + " exceeds " +
                          std::to_string(record.length()) + " time points");
  }
  const std::size_t span = record.length() - window;
  std::vector<SubSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    SubSequence s;
    s.subject_index = subject_index;
    s.start = count == 1 ? span / 2 : (i * span + (count - 1) / 2) / (count - 1);
    s.values = slice_window(record.timeseries, s.start, window);
    out.push_back(std::move(s));
  }
  return out;
}

Prediction predict(const Model& model, const Dataset& data, const MetaConfig& config) {
  Prediction p;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto windows = evaluation_windows(data.records[i], 0, config.window, config.windows_per_subject);
    const BrainGraph g = build_graph(data.records[i].timeseries);
    const Batch b = make_batch(windows, std::span<const BrainGraph>(&g, 1));
    const Tensor logits = target_logits(model, b);
    std::vector<std::size_t> rows(windows.size());
    std::iota(rows.begin(), rows.end(), 0);
    const Vote v = vote_rows(logits, rows);
    p.probability.push_back(v.probabilities[1]);
    p.predicted.push_back(v.predicted);
  }
  return p;
}

}  // namespace metsk
