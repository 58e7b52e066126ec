#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "streamraid/errors.hpp"
#include "streamraid/models.hpp"
#include "streamraid/rng.hpp"
#include "streamraid/tensor.hpp"

namespace streamraid {

struct DatasetMeta {
  std::string name;
  std::size_t n = 0;
  std::size_t length = 0;  // L
  Task task = Task::kClassification;
  std::size_t classes = 0;
  double lo = 0.0;
  double hi = 1.0;
};

// Every sequence is L x n. Classification targets are per-step class
// indices (per-sequence labels are broadcast); regression targets are
// per-step values.
struct SequenceDataset {
  DatasetMeta meta;
  std::vector<Tensor> inputs;
  std::vector<std::vector<int>> labels;
  std::vector<Vector> values;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  SequenceDataset subset(std::size_t first, std::size_t count) const {
    SequenceDataset out{meta, {}, {}, {}};
    const std::size_t end = std::min(size(), first + count);
    for (std::size_t i = first; i < end; ++i) {
      out.inputs.push_back(inputs[i]);
      if (!labels.empty()) out.labels.push_back(labels[i]);
      if (!values.empty()) out.values.push_back(values[i]);
    }
    return out;
  }
};

// Up to `count` sequences, round-robin over classes (by final-step label, in
// order of first appearance) so class-sorted files still give a balanced
// evaluation set. Regression data: the first `count` sequences.
inline SequenceDataset stratified_subset(const SequenceDataset& ds, std::size_t count) {
  if (ds.meta.task != Task::kClassification || ds.labels.empty()) return ds.subset(0, count);
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = ds.labels[i].empty() ? 0 : ds.labels[i].back();
    const auto it = std::find(classes.begin(), classes.end(), y);
    const std::size_t b = static_cast<std::size_t>(it - classes.begin());
    if (it == classes.end()) {
      classes.push_back(y);
      buckets.emplace_back();
    }
    buckets[b].push_back(i);
  }
  SequenceDataset out{ds.meta, {}, {}, {}};
  for (std::size_t round = 0; out.size() < count; ++round) {
    bool any = false;
    for (const auto& bucket : buckets) {
      if (round >= bucket.size() || out.size() >= count) continue;
      any = true;
      out.inputs.push_back(ds.inputs[bucket[round]]);
      out.labels.push_back(ds.labels[bucket[round]]);
      if (!ds.values.empty()) out.values.push_back(ds.values[bucket[round]]);
    }
    if (!any) break;
  }
  return out;
}

// ----------------------------------------------------------------- IDX --

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Tensor> images;  // rows x cols, scaled to [0, 1]
  std::vector<int> labels;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {
inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::kUnreadable, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) throw IdxError(IdxErrorKind::kTruncated, path + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}
}  // namespace detail

// Big-endian IDX: images are magic 0x00000803, count, rows, cols, then
// count*rows*cols unsigned bytes; labels are magic 0x00000801, count, then
// count bytes.
inline IdxImages parse_idx(const std::vector<unsigned char>& image_bytes, const std::vector<unsigned char>& label_bytes,
                           const std::string& image_name = "images", const std::string& label_name = "labels") {
  const std::uint32_t image_magic = detail::read_be32(image_bytes, 0, image_name);
  if (image_magic != kIdxImageMagic) {
    throw IdxError(IdxErrorKind::kWrongMagic, image_name + ": wrong magic " + detail::hex32(image_magic) +
                                                  ", expected " + detail::hex32(kIdxImageMagic));
  }
  const std::uint32_t label_magic = detail::read_be32(label_bytes, 0, label_name);
  if (label_magic != kIdxLabelMagic) {
    throw IdxError(IdxErrorKind::kWrongMagic, label_name + ": wrong magic " + detail::hex32(label_magic) +
                                                  ", expected " + detail::hex32(kIdxLabelMagic));
  }
  const std::size_t count = detail::read_be32(image_bytes, 4, image_name);
  const std::size_t rows = detail::read_be32(image_bytes, 8, image_name);
  const std::size_t cols = detail::read_be32(image_bytes, 12, image_name);
  const std::size_t label_count = detail::read_be32(label_bytes, 4, label_name);
  if (count != label_count) {
    throw IdxError(IdxErrorKind::kCountMismatch, "image count " + std::to_string(count) + " != label count " +
                                                     std::to_string(label_count));
  }
  if (image_bytes.size() < 16 + count * rows * cols) {
    throw IdxError(IdxErrorKind::kTruncated, image_name + ": truncated pixel data");
  }
  if (label_bytes.size() < 8 + count) throw IdxError(IdxErrorKind::kTruncated, label_name + ": truncated label data");

  IdxImages out{rows, cols, {}, {}};
  out.images.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Tensor img({rows, cols});
    const unsigned char* px = image_bytes.data() + 16 + k * rows * cols;
    for (std::size_t j = 0; j < rows * cols; ++j) img[j] = px[j] / 255.0;
    out.images.push_back(std::move(img));
    out.labels.push_back(label_bytes[8 + k]);
  }
  return out;
}

inline IdxImages load_idx(const std::string& image_path, const std::string& label_path) {
  return parse_idx(detail::read_file(image_path), detail::read_file(label_path), image_path, label_path);
}

// Each image becomes a sequence of its columns, left to right. With a class
// filter, only the listed classes survive and are relabeled 0..C'-1 in the
// filter's order.
inline SequenceDataset to_column_sequences(const IdxImages& raw, const std::vector<int>& classes = {},
                                           const std::string& name = "idx") {
  if (raw.rows != raw.cols) {
    throw DimensionError("to_column_sequences: images must be square, got " + std::to_string(raw.rows) + "x" +
                         std::to_string(raw.cols));
  }
  const std::size_t side = raw.rows;
  SequenceDataset ds;
  int max_label = 0;
  for (std::size_t k = 0; k < raw.images.size(); ++k) {
    int label = raw.labels[k];
    if (!classes.empty()) {
      auto it = std::find(classes.begin(), classes.end(), label);
      if (it == classes.end()) continue;
      label = static_cast<int>(it - classes.begin());
    }
    max_label = std::max(max_label, label);
    Tensor seq({side, side});
    for (std::size_t t = 0; t < side; ++t) {
      for (std::size_t r = 0; r < side; ++r) seq(t, r) = raw.images[k](r, t);
    }
    ds.inputs.push_back(std::move(seq));
    ds.labels.emplace_back(side, label);
  }
  ds.meta = DatasetMeta{name, side, side, Task::kClassification,
                        classes.empty() ? static_cast<std::size_t>(max_label + 1) : classes.size(), 0.0, 1.0};
  return ds;
}

// Inverse of to_column_sequences for one sequence.
inline Tensor render_columns(const Tensor& seq) {
  Tensor img({seq.cols(), seq.rows()});
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    for (std::size_t r = 0; r < seq.cols(); ++r) img(r, t) = seq(t, r);
  }
  return img;
}

// ----------------------------------------------------------------- CSV --

struct CsvSchema {
  std::string seq_id_col;
  std::string time_col;
  std::vector<std::string> feature_cols;
  std::optional<std::string> target_col;
  Task task = Task::kRegression;
};

struct FeatureScaling {
  Vector min, max;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("csv: non-numeric cell '" + cell + "' at row " + std::to_string(row) + ", column " +
                    std::to_string(col));
  }
}
}  // namespace detail

inline FeatureScaling fit_min_max(const SequenceDataset& ds) {
  FeatureScaling s{Vector(ds.meta.n, INFINITY), Vector(ds.meta.n, -INFINITY)};
  for (const Tensor& seq : ds.inputs) {
    for (std::size_t t = 0; t < seq.rows(); ++t) {
      for (std::size_t j = 0; j < seq.cols(); ++j) {
        s.min[j] = std::min(s.min[j], seq(t, j));
        s.max[j] = std::max(s.max[j], seq(t, j));
      }
    }
  }
  return s;
}

// Maps features to [0, 1]; constant features map to 0.5. Values outside the
// fitted range (held-out data) are clamped.
inline void apply_min_max(SequenceDataset& ds, const FeatureScaling& s) {
  for (Tensor& seq : ds.inputs) {
    for (std::size_t t = 0; t < seq.rows(); ++t) {
      for (std::size_t j = 0; j < seq.cols(); ++j) {
        const double span = s.max[j] - s.min[j];
        seq(t, j) = span > 0.0 ? std::clamp((seq(t, j) - s.min[j]) / span, 0.0, 1.0) : 0.5;
      }
    }
  }
  ds.meta.lo = 0.0;
  ds.meta.hi = 1.0;
}

// Rows are grouped by sequence id (in order of first appearance) and sorted
// by time. Features are left raw; normalize with fit_min_max on the training
// split and apply_min_max on every split.
inline SequenceDataset parse_csv_sequences(std::istream& in, const CsvSchema& schema, const std::string& name = "csv") {
  if (schema.task == Task::kRegression && !schema.target_col) {
    throw ConfigError("csv: regression task requires a target column (--target)");
  }
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: missing header row");
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& col) {
    auto it = std::find(header.begin(), header.end(), col);
    if (it == header.end()) throw ConfigError("csv: column '" + col + "' not in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column(schema.seq_id_col);
  const std::size_t time_col = column(schema.time_col);
  std::vector<std::size_t> feature_idx;
  for (const auto& f : schema.feature_cols) feature_idx.push_back(column(f));
  if (feature_idx.empty()) throw ConfigError("csv: no feature columns given");
  std::optional<std::size_t> target_idx;
  if (schema.target_col) target_idx = column(*schema.target_col);

  struct Row {
    double time;
    Vector features;
    double target;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> groups;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("csv: row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    Row r{detail::parse_cell(cells[time_col], row_no, time_col + 1), {}, 0.0};
    for (std::size_t j : feature_idx) r.features.push_back(detail::parse_cell(cells[j], row_no, j + 1));
    if (target_idx) r.target = detail::parse_cell(cells[*target_idx], row_no, *target_idx + 1);
    const std::string& id = cells[id_col];
    if (!groups.count(id)) order.push_back(id);
    groups[id].push_back(std::move(r));
  }
  if (order.empty()) throw DataError("csv: no data rows");

  const std::size_t length = groups[order.front()].size();
  std::vector<std::string> ragged;
  for (const auto& id : order) {
    if (groups[id].size() != length) ragged.push_back(id);
  }
  if (!ragged.empty()) {
    std::string ids;
    for (const auto& id : ragged) ids += (ids.empty() ? "" : ", ") + id;
    throw DataError("csv: ragged sequence lengths (expected " + std::to_string(length) + " steps) for ids: " + ids);
  }

  SequenceDataset ds;
  int max_label = 0;
  for (const auto& id : order) {
    auto& rows = groups[id];
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    Tensor seq({length, feature_idx.size()});
    Vector values;
    std::vector<int> labels;
    for (std::size_t t = 0; t < length; ++t) {
      std::copy(rows[t].features.begin(), rows[t].features.end(), seq.row(t).begin());
      if (schema.task == Task::kRegression) {
        values.push_back(rows[t].target);
      } else if (target_idx) {
        const double v = rows[t].target;
        if (v < 0 || v != std::floor(v)) throw DataError("csv: class label must be a nonnegative integer");
        labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, labels.back());
      }
    }
    ds.inputs.push_back(std::move(seq));
    if (schema.task == Task::kRegression) ds.values.push_back(std::move(values));
    else ds.labels.push_back(std::move(labels));
  }
  ds.meta = DatasetMeta{name, feature_idx.size(), length, schema.task,
                        schema.task == Task::kClassification ? static_cast<std::size_t>(max_label + 1) : 0, 0.0, 1.0};
  return ds;
}

inline SequenceDataset load_csv_sequences(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path);
  return parse_csv_sequences(in, schema, path);
}

// ---------------------------------------------------------- synth_sine --

struct SineSpec {
  std::size_t count = 200;
  std::size_t length = 32;
  std::size_t n = 4;
  double noise_sd = 0.02;
  std::uint64_t seed = 0;
};

// Per sequence s: angular frequency w_s ~ U[2pi/16, 2pi/8], phase p_s ~
// U[0, 2pi). Clean feature j at step t (0-based):
//   0.5 + 0.45 sin(w_s t + p_s + 0.5 j)
// Inputs add N(0, noise_sd) and are clamped to [0, 1]. The target at step t
// is the mean of the clean features at step t+1.
inline double sine_feature(double w, double phase, std::size_t j, double t) {
  return 0.5 + 0.45 * std::sin(w * t + phase + 0.5 * static_cast<double>(j));
}

inline SequenceDataset synth_sine(const SineSpec& spec) {
  if (spec.length < 2) throw DomainError("synth_sine: L must be >= 2");
  if (spec.n < 1) throw DomainError("synth_sine: n must be >= 1");
  Rng rng(spec.seed);
  SequenceDataset ds;
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t s = 0; s < spec.count; ++s) {
    const double w = rng.uniform(kTwoPi / 16.0, kTwoPi / 8.0);
    const double phase = rng.uniform(0.0, kTwoPi);
    Tensor seq({spec.length, spec.n});
    Vector target(spec.length);
    for (std::size_t t = 0; t < spec.length; ++t) {
      for (std::size_t j = 0; j < spec.n; ++j) {
        const double noise = spec.noise_sd > 0.0 ? spec.noise_sd * rng.normal() : 0.0;
        seq(t, j) = std::clamp(sine_feature(w, phase, j, static_cast<double>(t)) + noise, 0.0, 1.0);
      }
      double mean = 0.0;
      for (std::size_t j = 0; j < spec.n; ++j) mean += sine_feature(w, phase, j, static_cast<double>(t + 1));
      target[t] = mean / static_cast<double>(spec.n);
    }
    ds.inputs.push_back(std::move(seq));
    ds.values.push_back(std::move(target));
  }
  ds.meta = DatasetMeta{"synth_sine", spec.n, spec.length, Task::kRegression, 0, 0.0, 1.0};
  return ds;
}

// ------------------------------------------------------------- targets --

// Per-step attacker targets. Exactly one of the two vectors is filled.
struct TargetSchedule {
  std::vector<int> labels;
  Vector values;
  std::size_t size() const { return labels.empty() ? values.size() : labels.size(); }
};

enum class TargetPattern { kSquareWave, kConstant, kCustom };

struct TargetSpec {
  TargetPattern pattern = TargetPattern::kSquareWave;
  std::size_t frequency = 2;
  // Square wave: optional (low, high) payload. Constant: first entry.
  // Custom: the full per-step schedule.
  Vector payload;
};

// Start (0-based, inclusive) of square-wave block k: ceil(L k / (2f)).
inline std::size_t square_wave_boundary(std::size_t length, std::size_t frequency, std::size_t k) {
  return (length * k + 2 * frequency - 1) / (2 * frequency);
}

// Block k covers steps [boundary(k), boundary(k+1)); even blocks get the low
// payload, odd blocks the high payload. Default classification payloads are
// the two most frequent clean labels (ties to the lower index), most frequent
// first; default regression payloads sit at 1/4 and 3/4 of the observed
// clean value range.
inline TargetSchedule make_targets(const TargetSpec& spec, std::size_t length, Task task, std::size_t classes,
                                   const std::vector<int>& clean_labels = {}, const Vector& clean_values = {}) {
  if (length == 0) throw DomainError("make_targets: L must be >= 1");
  Vector payload = spec.payload;
  if (spec.pattern == TargetPattern::kSquareWave && payload.empty()) {
    if (task == Task::kClassification) {
      std::vector<std::size_t> counts(std::max<std::size_t>(classes, 2), 0);
      for (int c : clean_labels) {
        if (c >= 0 && static_cast<std::size_t>(c) < counts.size()) ++counts[static_cast<std::size_t>(c)];
      }
      std::vector<std::size_t> order(counts.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
      payload = {static_cast<double>(order[0]), static_cast<double>(order[1])};
    } else {
      double lo = 0.0, hi = 1.0;
      if (!clean_values.empty()) {
        lo = *std::min_element(clean_values.begin(), clean_values.end());
        hi = *std::max_element(clean_values.begin(), clean_values.end());
      }
      payload = {lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)};
    }
  }

  Vector schedule(length);
  switch (spec.pattern) {
    case TargetPattern::kSquareWave: {
      if (spec.frequency < 1 || 2 * spec.frequency > length) {
        throw DomainError("make_targets: square wave needs 1 <= f and 2f <= L (f=" + std::to_string(spec.frequency) +
                          ", L=" + std::to_string(length) + ")");
      }
      if (payload.size() != 2) throw DomainError("make_targets: square wave payload needs two values");
      for (std::size_t k = 0; k < 2 * spec.frequency; ++k) {
        const std::size_t begin = square_wave_boundary(length, spec.frequency, k);
        const std::size_t end = square_wave_boundary(length, spec.frequency, k + 1);
        for (std::size_t t = begin; t < end; ++t) schedule[t] = payload[k % 2];
      }
      break;
    }
    case TargetPattern::kConstant:
      if (payload.empty()) throw DomainError("make_targets: constant pattern needs a value");
      std::fill(schedule.begin(), schedule.end(), payload[0]);
      break;
    case TargetPattern::kCustom:
      if (payload.size() != length) {
        throw DomainError("make_targets: custom schedule has " + std::to_string(payload.size()) + " entries, L=" +
                          std::to_string(length));
      }
      schedule = payload;
      break;
  }

  TargetSchedule out;
  if (task == Task::kClassification) {
    for (double v : schedule) {
      if (v < 0 || v != std::floor(v) || static_cast<std::size_t>(v) >= classes) {
        throw DomainError("make_targets: class target " + std::to_string(v) + " outside [0, C)");
      }
      out.labels.push_back(static_cast<int>(v));
    }
  } else {
    out.values = std::move(schedule);
  }
  return out;
}

// --------------------------------------------------------------- IID pool --

class IidPool {
 public:
  IidPool() = default;
  IidPool(std::vector<Vector> entries, std::uint64_t seed) : entries_(std::move(entries)), seed_(seed) {}

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t seed() const { return seed_; }
  const Vector& operator[](std::size_t i) const { return entries_[i]; }

  // Uniform draw with replacement.
  const Vector& sample(Rng& rng) const {
    if (entries_.empty()) throw ConfigError("iid pool is empty");
    return entries_[rng.index(entries_.size())];
  }

 private:
  std::vector<Vector> entries_;
  std::uint64_t seed_ = 0;
};

// Flattens every (sequence, step) input into the pool.
inline IidPool build_iid_pool(const SequenceDataset& ds, std::uint64_t seed) {
  if (ds.empty()) throw DomainError("build_iid_pool: empty dataset");
  std::vector<Vector> entries;
  for (const Tensor& seq : ds.inputs) {
    for (std::size_t t = 0; t < seq.rows(); ++t) entries.emplace_back(seq.row(t).begin(), seq.row(t).end());
  }
  return IidPool(std::move(entries), seed);
}

}  // namespace streamraid
