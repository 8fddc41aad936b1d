#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "metsk/meta.hpp"
#include "metsk/objectives.hpp"

using namespace metsk;

namespace {

MetaConfig tiny_config() {
  MetaConfig c;
  c.model.channels = {1, 3, 3, 3};
  c.model.temporal_kernel = 3;
  c.model.embedding = 4;
  c.batch_size = 8;
  c.window = 12;
  c.windows_per_subject = 3;
  c.outer_iterations = 4;
  c.k = 3;
  c.seed = 21;
  return c;
}

SyntheticData tiny_data(std::uint64_t seed, bool source_labels = false) {
  SynthSpec s;
  s.parcels = 6;
  s.timepoints = 24;
  s.n_source = 12;
  s.n_target_per_class = 5;
  s.effect_size = 1.5;
  s.source_labels = source_labels;
  return generate_synthetic(s, seed);
}

Dataset labeled_stub(const std::vector<int>& labels) {
  Dataset d;
  d.domain = Domain::target;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    SubjectRecord r;
    r.subject_id = "s" + std::to_string(i);
    r.timeseries = Tensor({2, 8}, 0.0);
    r.timeseries[i % 8] = 1.0;
    r.label = labels[i];
    d.records.push_back(std::move(r));
  }
  return d;
}

std::uint64_t shared_hash(const Model& m) { return m.phi.hash() ^ (m.theta_s.hash() * 31); }

}  // namespace

TEST_CASE("meta split is stratified, disjoint and exhaustive") {
  const auto ds = labeled_stub({0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  Rng rng(1);
  auto s = split_meta(ds, 8, 2, rng);
  REQUIRE(s.val.size() == 2);
  CHECK(ds.records[s.val[0]].label != ds.records[s.val[1]].label);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  CHECK(all.size() == 10);

  CHECK_THROWS_AS(split_meta(ds, 8, 1, rng), ValidationError);
  CHECK_THROWS_AS(split_meta(labeled_stub({0, 0, 0, 1}), 2, 2, rng), ValidationError);

  Rng a(5), b(5);
  CHECK(split_meta(ds, 6, 4, a).train == split_meta(ds, 6, 4, b).train);
  std::set<std::vector<std::size_t>> distinct;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    distinct.insert(split_meta(ds, 6, 4, r).train);
  }
  CHECK(distinct.size() > 10);
}

TEST_CASE("meta split sizes") {
  MetaConfig c;
  const auto ds = labeled_stub({0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  CHECK(meta_split_sizes(c, ds) == std::pair<std::size_t, std::size_t>{8, 2});
  c.meta_train = 7;
  c.meta_val = 3;
  CHECK(meta_split_sizes(c, ds) == std::pair<std::size_t, std::size_t>{7, 3});
  c.meta_val = 4;
  CHECK_THROWS_AS(meta_split_sizes(c, ds), ValidationError);
}

TEST_CASE("batches") {
  auto data = tiny_data(2);
  Cohort src(data.source), tgt(data.target);
  Rng rng(3);
  auto [v1, v2] = contrastive_batches(src, 8, 12, rng);
  CHECK(v1.size() == 8);
  CHECK(v1.subjects == v2.subjects);
  CHECK(std::set<std::size_t>(v1.subjects.begin(), v1.subjects.end()).size() == 8);
  CHECK(v1.x.shape() == Shape{8, 6, 12, 1});
  CHECK_FALSE(v1.x.bitwise_equal(v2.x));

  std::vector<std::size_t> ids(tgt.size());
  std::iota(ids.begin(), ids.end(), 0);
  auto b = balanced_batch(tgt, ids, 8, 12, rng);
  CHECK(std::count(b.labels.begin(), b.labels.end(), 1) == 4);
  CHECK(std::count(b.labels.begin(), b.labels.end(), 0) == 4);
}

TEST_CASE("inner loop touches theta_t only and descends") {
  auto cfg = tiny_config();
  cfg.k = 25;
  auto data = tiny_data(4);
  Cohort tgt(data.target);
  auto model = init_model(cfg.model, 4);
  std::vector<std::size_t> ids(tgt.size());
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(4);
  const Batch b = balanced_batch(tgt, ids, 8, 12, rng);

  const auto phi = model.phi.hash(), src = model.theta_s.hash();
  auto r = inner_loop(model, b, cfg);
  CHECK(model.phi.hash() == phi);
  CHECK(model.theta_s.hash() == src);
  REQUIRE(r.losses.size() == 25);
  Model adapted = model;
  adapted.theta_t = r.theta_t;
  const double final_loss = cross_entropy(target_logits(adapted, b), b.labels);
  CHECK(final_loss < r.losses.front());

  cfg.k = 0;
  CHECK(inner_loop(model, b, cfg).theta_t.bitwise_equal(model.theta_t));
}

TEST_CASE("outer step") {
  auto cfg = tiny_config();
  auto data = tiny_data(5);
  Cohort src(data.source), tgt(data.target);
  auto model = init_model(cfg.model, 5);
  Rng rng(5);
  auto views = contrastive_batches(src, 8, 12, rng);
  std::vector<std::size_t> ids(tgt.size());
  std::iota(ids.begin(), ids.end(), 0);
  const Batch val = balanced_batch(tgt, ids, 8, 12, rng);

  const auto tt = model.theta_t.hash();
  auto with_target = outer_step(model, {}, &views, &val, cfg);
  CHECK(model.theta_t.hash() == tt);
  CHECK_FALSE(with_target.phi.bitwise_equal(model.phi));

  // lambda = 0: the meta gradient is the source gradient
  cfg.lambda = 0.0;
  auto zero = outer_step(model, {}, &views, &val, cfg);
  auto ssl = outer_step(model, {}, &views, nullptr, cfg);
  CHECK(zero.phi.bitwise_equal(ssl.phi));
  CHECK(zero.theta_s.bitwise_equal(ssl.theta_s));
  for (std::size_t i = 0; i < ssl.adam.first_moment.size(); ++i) {
    const auto& a = zero.adam.first_moment[i].value;
    const auto& b = ssl.adam.first_moment[i].value;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-12);
  }
}

TEST_CASE("combined meta loss gradient passes the finite-difference check") {
  auto cfg = tiny_config();
  cfg.lambda = 30.0;
  cfg.tau = 0.5;
  SynthSpec s{.parcels = 4, .timepoints = 16, .n_source = 4, .n_target_per_class = 2, .effect_size = 1.0};
  auto data = generate_synthetic(s, 6);
  Cohort src(data.source), tgt(data.target);
  auto model = init_model(cfg.model, 6);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : model.theta_s.at("dense.b").values()) v = u(rng);
  Rng brng(6);
  auto views = contrastive_batches(src, 4, 8, brng);
  const Batch val = balanced_batch(tgt, {0, 1, 2, 3}, 4, 8, brng);

  auto params = model.phi.tensors();
  for (const auto& t : model.theta_s.tensors()) params.push_back(t);
  LossFunction fn = [&](Tape& tape, std::span<const Var> v) {
    std::vector<Var> phi(v.begin(), v.begin() + 9), ths(v.begin() + 9, v.end());
    auto tht = bind(tape, model.theta_t, false);
    Var ls = source_loss(tape, phi, ths, views, cfg);
    Var lt = cross_entropy(head_forward(val.graphs, extractor_forward(val.graphs, tape.constant(val.x), phi), tht),
                           val.labels);
    return meta_loss(ls, lt, cfg.lambda);
  };
  auto rep = finite_diff_check(fn, params, 1e-6);
  CHECK(rep.max_relative_error < 1e-4);
  CHECK(rep.checked > 100);
}

TEST_CASE("metsk smoke run with phase isolation") {
  auto cfg = tiny_config();
  cfg.outer_iterations = 2;
  cfg.k = 1;
  auto data = tiny_data(7);

  struct Snap {
    std::uint64_t phi, ths, tht;
  };
  std::vector<std::pair<std::string, Snap>> log;
  std::size_t warmup_target_batches = 99;
  TrainObserver obs = [&](const std::string& phase, const TrainState& st) {
    log.push_back({phase, {st.model.phi.hash(), st.model.theta_s.hash(), st.model.theta_t.hash()}});
    if (phase == "warmup") warmup_target_batches = st.target_batches_in_warmup;
  };
  auto r = train(Strategy::metsk, &data.source, &data.target, cfg, obs);
  REQUIRE(r.state.history.size() == 2);
  CHECK(r.state.history[0].phase == "warmup");
  CHECK(r.state.history[1].phase == "meta");
  CHECK(warmup_target_batches == 0);
  CHECK(r.state.target_batches_in_warmup == 0);

  std::vector<std::string> phases;
  for (auto& [p, s] : log) phases.push_back(p);
  CHECK(phases == std::vector<std::string>{"warmup", "step1", "inner", "outer", "final"});
  // warmup -> step1: only theta_t (re-initialized)
  CHECK(log[1].second.phi == log[0].second.phi);
  CHECK(log[1].second.ths == log[0].second.ths);
  CHECK(log[1].second.tht != log[0].second.tht);
  // step1 -> inner: only theta_t
  CHECK(log[2].second.phi == log[1].second.phi);
  CHECK(log[2].second.ths == log[1].second.ths);
  CHECK(log[2].second.tht != log[1].second.tht);
  // inner -> outer: only phi and theta_s
  CHECK(log[3].second.phi != log[2].second.phi);
  CHECK(log[3].second.ths != log[2].second.ths);
  CHECK(log[3].second.tht == log[2].second.tht);
}

TEST_CASE("every outer iteration starts from a fresh target head") {
  auto cfg = tiny_config();
  cfg.outer_iterations = 6;
  auto data = tiny_data(8);
  std::vector<std::uint64_t> fresh, adapted;
  TrainObserver obs = [&](const std::string& phase, const TrainState& st) {
    if (phase == "step1") fresh.push_back(st.model.theta_t.hash());
    if (phase == "inner") adapted.push_back(st.model.theta_t.hash());
  };
  train(Strategy::metsk, &data.source, &data.target, cfg, obs);
  REQUIRE(fresh.size() == 3);
  CHECK(std::set<std::uint64_t>(fresh.begin(), fresh.end()).size() == 3);
  for (std::size_t i = 0; i + 1 < fresh.size(); ++i) CHECK(fresh[i + 1] != adapted[i]);
}

TEST_CASE("metsk with lambda 0 and k 0 follows the ssl trajectory bitwise") {
  for (bool supervised : {false, true}) {
    auto cfg = tiny_config();
    cfg.outer_iterations = 6;
    cfg.lambda = 0.0;
    cfg.k = 0;
    cfg.final_head = FinalHead::last;
    cfg.model.supervised_source = supervised;
    auto data = tiny_data(9, supervised);
    std::vector<std::uint64_t> meta, ssl;
    train(Strategy::metsk, &data.source, &data.target, cfg, [&](const std::string& p, const TrainState& st) {
      if (p == "warmup" || p == "outer") meta.push_back(shared_hash(st.model));
    });
    train(Strategy::ssl, &data.source, nullptr, cfg, [&](const std::string& p, const TrainState& st) {
      if (p == "warmup") ssl.push_back(shared_hash(st.model));
    });
    CHECK(meta.size() == 6);
    CHECK(meta == ssl);
  }
}

TEST_CASE("strategy contracts") {
  auto cfg = tiny_config();
  auto data = tiny_data(10);

  auto with_src = train(Strategy::baseline, &data.source, &data.target, cfg);
  auto without = train(Strategy::baseline, nullptr, &data.target, cfg);
  CHECK(with_src.model_text == without.model_text);

  auto s1 = train(Strategy::ssl, &data.source, nullptr, cfg);
  auto s2 = train(Strategy::ssl, &data.source, nullptr, cfg);
  CHECK(s1.model_text == s2.model_text);

  CHECK_THROWS_AS(train(Strategy::metsk, nullptr, &data.target, cfg), ValidationError);
  CHECK_THROWS_AS(train(Strategy::baseline, &data.source, nullptr, cfg), ValidationError);
  CHECK_THROWS_AS(train(Strategy::ssl, nullptr, &data.target, cfg), ValidationError);
  CHECK_THROWS_AS(train(Strategy::mtl, &data.source, &data.source, cfg), ValidationError);
  CHECK_THROWS_AS(parse_strategy("maml"), ValidationError);

  for (auto s : {Strategy::metsk, Strategy::ft, Strategy::mtl, Strategy::mel}) {
    auto r = train(s, &data.source, &data.target, cfg);
    CHECK(r.state.history.size() == cfg.outer_iterations);
    auto m = deserialize_model(r.model_text, "mem");
    CHECK(m.theta_s.empty() == (s == Strategy::mel));
    auto p = predict(m, data.target, cfg);
    CHECK(p.probability.size() == data.target.size());
  }
}

TEST_CASE("supervised source task") {
  auto cfg = tiny_config();
  cfg.model.supervised_source = true;
  cfg.model.channels = {1, 4, 4, 4};
  cfg.outer_iterations = 50;
  cfg.batch_size = 16;
  cfg.window = 32;
  cfg.beta = 0.01;
  SynthSpec spec{.parcels = 8, .timepoints = 64, .n_source = 40, .n_target_per_class = 2, .source_labels = true};
  auto data = generate_synthetic(spec, 11);
  auto m = init_model(cfg.model, 1);
  CHECK(m.theta_s.at("dense.W").dim(1) == 2);
  auto r = train(Strategy::ssl, &data.source, nullptr, cfg);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += r.state.history[i].source_loss;
    last += r.state.history[40 + i].source_loss;
  }
  MESSAGE("source loss, first 10: " << first / 10 << ", last 10: " << last / 10);
  CHECK(last < first);
  const auto unlabeled = tiny_data(11);
  CHECK_THROWS_AS(train(Strategy::ssl, &unlabeled.source, nullptr, cfg), ValidationError);
}

TEST_CASE("training log format") {
  std::vector<HistoryEntry> h{{0, "warmup", 1.5}, {1, "meta", -0.25, 0.5, 0.75}};
  CHECK(format_history(h) == "0\twarmup\t1.5\tnan\tnan\n1\tmeta\t-0.25\t0.5\t0.75\n");
}

TEST_CASE("evaluation windows are evenly spaced") {
  SubjectRecord r;
  r.timeseries = Tensor({2, 20}, 1.0);
  auto w = evaluation_windows(r, 0, 8, 4);
  CHECK(w[0].start == 0);
  CHECK(w[3].start == 12);
  CHECK(w[1].start == 4);
  CHECK(evaluation_windows(r, 0, 20, 3)[2].start == 0);
}
