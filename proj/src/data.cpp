#include "metsk/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "metsk/io.hpp"

namespace metsk {

namespace fs = std::filesystem;

std::size_t Dataset::parcels() const {
  if (records.empty()) throw ValidationError("dataset is empty");
  return records.front().parcels();
}

bool Dataset::labeled() const {
  return !records.empty() && std::all_of(records.begin(), records.end(),
                                         [](const SubjectRecord& r) { return r.label.has_value(); });
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw ValidationError("subject " + r.subject_id + " has no label");
    out.push_back(*r.label);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.domain = domain;
  out.class_names = class_names;
  out.records.reserve(indices.size());
  for (auto i : indices) {
    if (i >= records.size()) throw ValidationError("subset index out of range");
    out.records.push_back(records[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (records.empty()) throw ValidationError("dataset has no subjects");
  const std::size_t p = records.front().timeseries.rank() == 2 ? records.front().parcels() : 0;
  std::size_t labeled_count = 0;
  for (const auto& r : records) {
    if (r.timeseries.rank() != 2) throw ValidationError("subject " + r.subject_id + ": time-series must be P x T");
    if (r.parcels() < 2) throw ValidationError("subject " + r.subject_id + ": needs at least 2 parcels");
    if (r.length() < 8) throw ValidationError("subject " + r.subject_id + ": needs at least 8 time points");
    if (r.parcels() != p) {
      throw ValidationError("inconsistent parcel count: subject " + r.subject_id + " has " +
                            std::to_string(r.parcels()) + ", expected " + std::to_string(p));
    }
    if (!r.timeseries.all_finite()) throw ValidationError("subject " + r.subject_id + ": non-finite values");
    if (r.label) {
      ++labeled_count;
      if (*r.label != 0 && *r.label != 1) {
        throw ValidationError("subject " + r.subject_id + ": label must be 0 or 1");
      }
    }
  }
  if (labeled_count != 0 && labeled_count != records.size()) {
    throw ValidationError("dataset mixes labeled and unlabeled subjects");
  }
}

namespace {

Tensor read_timeseries(const fs::path& file) {
  const std::string text = read_file(file);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (rows == 0) {
      cols = cells.size();
    } else if (cells.size() != cols) {
      throw ValidationError(file.string() + ":" + std::to_string(line_no) + ": row has " +
                            std::to_string(cells.size()) + " values, expected " + std::to_string(cols));
    }
    const std::string where = file.string() + ":" + std::to_string(line_no);
    for (auto cell : cells) values.push_back(parse_double(cell, where));
    ++rows;
  }
  if (rows == 0) throw ValidationError(file.string() + ": empty time-series file");
  return Tensor({rows, cols}, std::move(values));
}


}  // namespace

std::map<std::string, int> read_labels(const fs::path& file) {
  const std::string text = read_file(file);
  std::map<std::string, int> labels;
  std::size_t line_no = 0;
  bool header = true;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const std::string where = file.string() + ":" + std::to_string(line_no);
    const auto cells = split(line, ',');
    if (header) {
      if (cells.size() != 2 || trim(cells[0]) != "subject_id" || trim(cells[1]) != "label") {
        throw ValidationError(where + ": expected header 'subject_id,label'");
      }
      header = false;
      continue;
    }
    if (cells.size() != 2) throw ValidationError(where + ": expected 'subject_id,label'");
    const auto label = parse_integer(cells[1], where);
    if (label != 0 && label != 1) throw ValidationError(where + ": label must be 0 or 1");
    const std::string id(trim(cells[0]));
    if (!labels.emplace(id, static_cast<int>(label)).second) {
      throw ValidationError(where + ": duplicate subject '" + id + "'");
    }
  }
  if (header) throw ValidationError(file.string() + ": missing header");
  return labels;
}

Dataset load_dataset(const fs::path& dir, Domain domain) {
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory not found: " + dir.string());
  const fs::path ts_dir = dir / "ts";
  if (!fs::is_directory(ts_dir)) throw ValidationError("missing time-series directory: " + ts_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ts_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  Dataset ds;
  ds.domain = domain;
  for (const auto& f : files) {
    SubjectRecord r;
    r.subject_id = f.stem().string();
    r.timeseries = read_timeseries(f);
    if (!ds.records.empty() && r.parcels() != ds.records.front().parcels()) {
      throw ValidationError(f.string() + ": inconsistent parcel count " + std::to_string(r.parcels()) +
                            ", expected " + std::to_string(ds.records.front().parcels()));
    }
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw ValidationError("no subject files in " + ts_dir.string());

  const fs::path labels_file = dir / "labels.csv";
  if (fs::exists(labels_file)) {
    auto labels = read_labels(labels_file);
    for (auto& r : ds.records) {
      auto it = labels.find(r.subject_id);
      if (it == labels.end()) {
        throw ValidationError(labels_file.string() + ": no label for subject '" + r.subject_id + "'");
      }
      r.label = it->second;
      labels.erase(it);
    }
    if (!labels.empty()) {
      throw ValidationError(labels_file.string() + ": label for unknown subject '" + labels.begin()->first + "'");
    }
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir / "ts");
  for (const auto& r : dataset.records) {
    std::string text;
    const std::size_t p = r.parcels(), t = r.length();
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        if (j) text += ',';
        text += format_double(r.timeseries[i * t + j]);
      }
      text += '\n';
    }
    write_file(dir / "ts" / (r.subject_id + ".csv"), text);
  }
  if (dataset.labeled()) {
    std::string text = "subject_id,label\n";
    for (const auto& r : dataset.records) text += r.subject_id + "," + std::to_string(*r.label) + "\n";
    write_file(dir / "labels.csv", text);
  }
}

Adjacency pearson_adjacency(const Tensor& ts) {
  if (ts.rank() != 2) throw ValidationError("pearson_adjacency: expected a P x T matrix");
  const std::size_t p = ts.dim(0), t = ts.dim(1);
  if (t < 2) throw ValidationError("pearson_adjacency: need at least 2 time points");

  std::vector<double> centered(p * t);
  std::vector<double> norms(p);
  Adjacency out{Tensor({p, p}, 0.0), {}};
  for (std::size_t i = 0; i < p; ++i) {
    double mu = 0.0;
    for (std::size_t k = 0; k < t; ++k) mu += ts[i * t + k];
    mu /= static_cast<double>(t);
    double ss = 0.0;
    for (std::size_t k = 0; k < t; ++k) {
      const double c = ts[i * t + k] - mu;
      centered[i * t + k] = c;
      ss += c * c;
    }
    norms[i] = std::sqrt(ss);
    // relative test: a constant row leaves only rounding noise after centering
    double scale = 0.0;
    for (std::size_t k = 0; k < t; ++k) scale = std::max(scale, std::abs(ts[i * t + k]));
    if (norms[i] <= 1e-12 * std::max(1.0, scale) * std::sqrt(static_cast<double>(t))) {
      norms[i] = 0.0;
      out.degenerate_rows.push_back(i);
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) {
      double r = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t k = 0; k < t; ++k) dot += centered[i * t + k] * centered[j * t + k];
        r = std::min(1.0, std::abs(dot) / (norms[i] * norms[j]));
      }
      out.matrix[i * p + j] = r;
      out.matrix[j * p + i] = r;
    }
  }
  return out;
}

Tensor normalize_adjacency(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ValidationError("normalize_adjacency: expected a square matrix");
  const std::size_t p = a.dim(0);
  std::vector<double> degree(p, 1.0);
  for (std::size_t i = 0; i < p; ++i) {
    if (a[i * p + i] != 0.0) throw ValidationError("normalize_adjacency: diagonal must be zero");
    for (std::size_t j = 0; j < p; ++j) {
      const double v = a[i * p + j];
      if (v < 0.0) throw ValidationError("normalize_adjacency: negative entry at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      if (std::abs(v - a[j * p + i]) > 1e-9) throw ValidationError("normalize_adjacency: matrix is not symmetric");
      degree[i] += v;
    }
  }
  Tensor out({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      out[i * p + j] = (a[i * p + j] + (i == j ? 1.0 : 0.0)) / std::sqrt(degree[i] * degree[j]);
  return out;
}

BrainGraph build_graph(const Tensor& timeseries) {
  Adjacency adj = pearson_adjacency(timeseries);
  BrainGraph g;
  g.normalized = normalize_adjacency(adj.matrix);
  g.adjacency = std::move(adj.matrix);
  g.degenerate_rows = std::move(adj.degenerate_rows);
  return g;
}

Tensor slice_window(const Tensor& ts, std::size_t start, std::size_t length) {
  const std::size_t p = ts.dim(0), t = ts.dim(1);
  if (length == 0 || start + length > t) {
    throw ValidationError("window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") exceeds " + std::to_string(t) + " time points");
  }
  Tensor out({p, length, 1});
  for (std::size_t i = 0; i < p; ++i)
    std::copy_n(ts.data() + i * t + start, length, out.data() + i * length);
  return out;
}

std::vector<SubSequence> sample_subsequences(const SubjectRecord& record, std::size_t subject_index,
                                             std::size_t length, std::size_t count, Rng& rng) {
  if (length == 0 || length > record.length()) {
    throw ValidationError("sub-sequence length " + std::to_string(length) + " exceeds " +
                          std::to_string(record.length()) + " time points");
  }
  if (count == 0) throw ValidationError("sub-sequence count must be at least 1");
  std::uniform_int_distribution<std::size_t> pick(0, record.length() - length);
  std::vector<SubSequence> out;
  out.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    SubSequence s;
    s.subject_index = subject_index;
    s.start = pick(rng);
    s.values = slice_window(record.timeseries, s.start, length);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace metsk
