#include <algorithm>
#include <cmath>
#include <cstdio>

#include "metsk/data.hpp"
#include "metsk/io.hpp"

namespace metsk {

void SynthSpec::validate() const {
  if (parcels < 2) throw ValidationError("synth: parcels must be >= 2");
  if (timepoints < 8) throw ValidationError("synth: timepoints must be >= 8");
  if (n_source < 1) throw ValidationError("synth: n_source must be >= 1");
  if (n_target_per_class < 1) throw ValidationError("synth: n_target_per_class must be >= 1");
  if (!(effect_size >= 0.0) || !std::isfinite(effect_size)) throw ValidationError("synth: effect_size must be >= 0");
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) throw ValidationError("synth: noise_sd must be > 0");
}

std::vector<std::size_t> planted_parcels(std::size_t parcels) {
  std::vector<std::size_t> out(std::min(parcels, std::max<std::size_t>(2, parcels / 4)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

namespace {

constexpr double kGlobalLoading = 0.3;
constexpr double kStrengthSpread = 0.35;
constexpr double kAttributeShift = 1.0;

// Cohort layout shared by every subject of both domains.
struct Layout {
  std::vector<std::size_t> mode_of;  // per parcel
  std::vector<double> loading;       // per parcel
  std::vector<double> rho;           // per mode
  std::size_t modes = 0;
};

Layout make_layout(const SynthSpec& spec, std::uint64_t seed) {
  Layout lay;
  const std::size_t p = spec.parcels;
  const std::size_t planted = planted_parcels(p).size();
  const std::size_t rest = p - planted;
  const std::size_t groups = rest == 0 ? 0 : std::max<std::size_t>(1, rest / 4);
  lay.modes = 1 + groups;
  lay.mode_of.resize(p);
  for (std::size_t i = 0; i < p; ++i) lay.mode_of[i] = i < planted ? 0 : 1 + (i - planted) * groups / rest;

  Rng rng = make_rng(seed, {kStreamSynth, 0});
  std::uniform_real_distribution<double> load(0.7, 1.3), rho(0.3, 0.8);
  lay.loading.resize(p);
  for (auto& l : lay.loading) l = load(rng);
  lay.rho.resize(lay.modes);
  lay.rho[0] = 0.9;
  for (std::size_t m = 1; m < lay.modes; ++m) lay.rho[m] = rho(rng);
  return lay;
}

// Stationary unit-variance AR(1) series.
std::vector<double> ar1(double rho, std::size_t t, Rng& rng) {
  std::normal_distribution<double> n01;
  std::vector<double> f(t);
  const double innov = std::sqrt(1.0 - rho * rho);
  f[0] = n01(rng);
  for (std::size_t i = 1; i < t; ++i) f[i] = rho * f[i - 1] + innov * n01(rng);
  return f;
}

// `shift` adds to the strength of the given mode for this subject.
Tensor simulate_subject(const SynthSpec& spec, const Layout& lay, std::uint64_t subject_seed,
                        std::size_t shifted_mode, double shift) {
  Rng rng(subject_seed);
  std::normal_distribution<double> n01;
  const std::size_t p = spec.parcels, t = spec.timepoints;
  std::vector<double> strength(lay.modes);
  for (auto& s : strength) s = std::exp(kStrengthSpread * n01(rng));
  if (shifted_mode < lay.modes) strength[shifted_mode] += shift;

  std::vector<std::vector<double>> factors;
  factors.reserve(lay.modes);
  for (std::size_t m = 0; m < lay.modes; ++m) factors.push_back(ar1(lay.rho[m], t, rng));
  const auto global = ar1(0.5, t, rng);

  Tensor ts({p, t});
  for (std::size_t i = 0; i < p; ++i) {
    const auto& f = factors[lay.mode_of[i]];
    const double a = strength[lay.mode_of[i]] * lay.loading[i];
    for (std::size_t k = 0; k < t; ++k)
      ts[i * t + k] = a * f[k] + kGlobalLoading * global[k] + spec.noise_sd * n01(rng);
  }
  return ts;
}

std::string subject_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", prefix, i + 1);
  return buf;
}

std::vector<int> balanced_labels(std::size_t per_class, Rng& rng) {
  std::vector<int> labels(2 * per_class);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < per_class ? 0 : 1;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

}  // namespace

SyntheticData generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Layout lay = make_layout(spec, seed);
  SyntheticData out;

  out.source.domain = Domain::source;
  // the source attribute lives on mode 1 when there is one
  const std::size_t attribute_mode = lay.modes > 1 ? 1 : 0;
  std::vector<int> attribute;
  if (spec.source_labels) {
    Rng rng = make_rng(seed, {kStreamSynth, 1});
    attribute = balanced_labels((spec.n_source + 1) / 2, rng);
    attribute.resize(spec.n_source);
  }
  out.source.records.resize(spec.n_source);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < spec.n_source; ++i) {
    auto& r = out.source.records[i];
    r.subject_id = subject_name("src", i);
    const double shift = spec.source_labels && attribute[i] == 1 ? kAttributeShift : 0.0;
    r.timeseries = simulate_subject(spec, lay, derive_seed(seed, {kStreamSynth, 2, i}), attribute_mode, shift);
    if (spec.source_labels) r.label = attribute[i];
  }

  out.target.domain = Domain::target;
  out.target.class_names = {"control", "case"};
  Rng label_rng = make_rng(seed, {kStreamSynth, 3});
  const auto labels = balanced_labels(spec.n_target_per_class, label_rng);
  out.target.records.resize(labels.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& r = out.target.records[i];
    r.subject_id = subject_name("tgt", i);
    const double shift = labels[i] == 1 ? spec.effect_size : 0.0;
    r.timeseries = simulate_subject(spec, lay, derive_seed(seed, {kStreamSynth, 4, i}), 0, shift);
    r.label = labels[i];
  }
  return out;
}

SynthSpec parse_synth_spec(const std::filesystem::path& path) {
  SynthSpec spec;
  for (const auto& kv : read_key_values(path)) {
    const std::string where = path.string() + ":" + std::to_string(kv.line);
    auto count = [&] {
      const auto v = parse_integer(kv.value, where);
      if (v < 0) throw ValidationError(where + ": " + kv.key + " must be nonnegative");
      return static_cast<std::size_t>(v);
    };
    if (kv.key == "parcels") spec.parcels = count();
    else if (kv.key == "timepoints") spec.timepoints = count();
    else if (kv.key == "n_source") spec.n_source = count();
    else if (kv.key == "n_target_per_class") spec.n_target_per_class = count();
    else if (kv.key == "effect_size") spec.effect_size = parse_double(kv.value, where);
    else if (kv.key == "noise_sd") spec.noise_sd = parse_double(kv.value, where);
    else if (kv.key == "source_labels") spec.source_labels = parse_bool(kv.value, where);
    else throw ValidationError(where + ": unknown key '" + kv.key + "'");
  }
  spec.validate();
  return spec;
}

}  // namespace metsk
