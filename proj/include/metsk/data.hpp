#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metsk/rng.hpp"
#include "metsk/tensor.hpp"

namespace metsk {

/// One subject: a parcels x time matrix of regional signals.
struct SubjectRecord {
  std::string subject_id;
  Tensor timeseries;  // P x T
  std::optional<int> label;

  std::size_t parcels() const { return timeseries.dim(0); }
  std::size_t length() const { return timeseries.dim(1); }
};

enum class Domain { source, target };

struct Dataset {
  std::vector<SubjectRecord> records;
  Domain domain = Domain::source;
  std::vector<std::string> class_names;

  std::size_t size() const { return records.size(); }
  std::size_t parcels() const;
  bool labeled() const;
  std::vector<int> labels() const;
  // Subset in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
  // Checks the record invariants: P >= 2, T >= 8, uniform P, finite values,
  // labels all-or-none and in {0, 1}.
  void validate() const;
};

/// Reads `<dir>/ts/<subject_id>.csv` (P lines of T comma-separated floats)
/// and the optional `<dir>/labels.csv` (`subject_id,label`). Records come
/// back sorted by subject id.
Dataset load_dataset(const std::filesystem::path& dir, Domain domain);

// `subject_id,label` rows after a header; duplicate ids rejected.
std::map<std::string, int> read_labels(const std::filesystem::path& file);

/// Writes the same layout load_dataset reads; values with 17 significant digits.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct Adjacency {
  Tensor matrix;                             // P x P, |Pearson r|, zero diagonal
  std::vector<std::size_t> degenerate_rows;  // zero-variance parcels
};

Adjacency pearson_adjacency(const Tensor& timeseries);

/// D^-1/2 (A + I) D^-1/2 with D_ii = sum_j A_ij + 1.
Tensor normalize_adjacency(const Tensor& adjacency);

struct BrainGraph {
  Tensor adjacency;
  Tensor normalized;
  std::vector<std::size_t> degenerate_rows;
};

BrainGraph build_graph(const Tensor& timeseries);

struct SubSequence {
  std::size_t subject_index = 0;
  std::size_t start = 0;
  Tensor values;  // P x L x 1
};

// Window [start, start + length) of every parcel as a P x L x 1 tensor.
Tensor slice_window(const Tensor& timeseries, std::size_t start, std::size_t length);

/// `count` windows of `length` with starts uniform on [0, T - length].
std::vector<SubSequence> sample_subsequences(const SubjectRecord& record, std::size_t subject_index,
                                             std::size_t length, std::size_t count, Rng& rng);

struct SynthSpec {
  std::size_t parcels = 16;
  std::size_t timepoints = 128;
  std::size_t n_source = 200;
  std::size_t n_target_per_class = 20;
  double effect_size = 1.0;
  double noise_sd = 1.0;
  // Plant a binary attribute in the source cohort and label it, for the
  // supervised source task.
  bool source_labels = false;

  void validate() const;
};

struct SyntheticData {
  Dataset source;
  Dataset target;
};

/// Latent-factor cohort generator. Parcels are grouped into modes, each
/// driven by its own AR(1) factor; subjects draw log-normal mode strengths.
/// Target class 1 adds effect_size to the strength of mode 0, which raises
/// the correlation among mode-0 parcels.
SyntheticData generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

// Parcels of the mode whose strength carries the target class effect.
std::vector<std::size_t> planted_parcels(std::size_t parcels);

// Reads `key = value` lines into a SynthSpec (keys: parcels, timepoints,
// n_source, n_target_per_class, effect_size, noise_sd, source_labels).
SynthSpec parse_synth_spec(const std::filesystem::path& path);

}  // namespace metsk
