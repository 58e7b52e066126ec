#pragma once

// Versioned JSON model files:
//
//   {
//     "format_version": 1,
//     "kind": "victim" | "predictor",
//     "architecture": {...},
//     "checksum": "fnv1a64:<16 hex digits>",
//     "weights": {"lstm.w_ii": [...], ...}
//   }
//
// Weights are flat row-major arrays. Numbers are written in shortest
// round-trip form, so save -> load is bit-exact. The checksum is FNV-1a over
// the little-endian IEEE-754 bytes of every weight, in parameter order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "streamraid/errors.hpp"
#include "streamraid/models.hpp"

namespace streamraid {

inline constexpr int kModelFormatVersion = 1;

template <class Model>
std::uint64_t weight_checksum(const Model& model) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  model.for_each_param([&](const std::string&, const Tensor& t) {
    for (double v : t.flat()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        hash ^= (bits >> (8 * b)) & 0xffU;
        hash *= 0x100000001b3ULL;
      }
    }
  });
  return hash;
}

inline std::string checksum_string(std::uint64_t h) {
  std::ostringstream os;
  os << "fnv1a64:" << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace detail {
template <class Model>
nlohmann::json weights_json(const Model& model) {
  nlohmann::json w = nlohmann::json::object();
  model.for_each_param([&](const std::string& name, const Tensor& t) { w[name] = t.values(); });
  return w;
}

template <class Model>
void read_weights(const nlohmann::json& doc, Model& model) {
  const auto& w = doc.at("weights");
  model.for_each_param([&](const std::string& name, Tensor& t) {
    if (!w.contains(name)) throw ModelFileError(ModelFileErrorKind::kMalformed, "model file: missing weight " + name);
    const auto values = w.at(name).get<std::vector<double>>();
    if (values.size() != t.size()) {
      throw ModelFileError(ModelFileErrorKind::kDimensionMismatch,
                           "model file: weight " + name + " has " + std::to_string(values.size()) +
                               " entries, architecture expects " + std::to_string(t.size()));
    }
    std::copy(values.begin(), values.end(), t.data());
  });
  std::size_t expected = 0;
  model.for_each_param([&](const std::string&, const Tensor&) { ++expected; });
  if (w.size() != expected) throw ModelFileError(ModelFileErrorKind::kMalformed, "model file: unexpected weight entries");
  const std::string recorded = doc.at("checksum").get<std::string>();
  if (recorded != checksum_string(weight_checksum(model))) {
    throw ModelFileError(ModelFileErrorKind::kChecksumMismatch, "model file: checksum mismatch (recorded " + recorded +
                                                                    ", computed " +
                                                                    checksum_string(weight_checksum(model)) + ")");
  }
}

inline nlohmann::json parse_model_text(const std::string& text, const std::string& expected_kind) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelFileError(ModelFileErrorKind::kMalformed, std::string("model file: not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc.contains("kind") || !doc.contains("architecture") ||
      !doc.contains("weights") || !doc.contains("checksum")) {
    throw ModelFileError(ModelFileErrorKind::kMalformed, "model file: missing top-level fields");
  }
  if (!doc["format_version"].is_number_integer() || doc["format_version"].get<int>() != kModelFormatVersion) {
    throw ModelFileError(ModelFileErrorKind::kVersionMismatch,
                         "model file: format_version " + doc["format_version"].dump() + ", expected " +
                             std::to_string(kModelFormatVersion));
  }
  if (doc["kind"] != expected_kind) {
    throw ModelFileError(ModelFileErrorKind::kArchitectureMismatch,
                         "model file: kind " + doc["kind"].dump() + ", expected \"" + expected_kind + "\"");
  }
  return doc;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

template <class F>
auto json_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ModelFileError(ModelFileErrorKind::kMalformed, std::string("model file: ") + e.what());
  }
}
}  // namespace detail

inline std::string victim_to_json(const VictimModel& model) {
  nlohmann::json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["kind"] = "victim";
  doc["architecture"] = {{"n", model.arch.input},
                         {"m", model.arch.hidden},
                         {"widths", {model.arch.head}},
                         {"task", to_string(model.arch.task)},
                         {"C", model.arch.task == Task::kClassification ? model.arch.classes : 0},
                         {"head_ordering", to_string(model.arch.ordering)}};
  doc["checksum"] = checksum_string(weight_checksum(model));
  doc["weights"] = detail::weights_json(model);
  return doc.dump(1) + "\n";
}

// expected_task, when given, must match the file's task.
inline VictimModel victim_from_json(const std::string& text, std::optional<Task> expected_task = std::nullopt) {
  const auto doc = detail::parse_model_text(text, "victim");
  return detail::json_guard([&] {
    const auto& a = doc.at("architecture");
    VictimArch arch;
    arch.input = a.at("n").get<std::size_t>();
    arch.hidden = a.at("m").get<std::size_t>();
    const auto widths = a.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() != 1) throw ModelFileError(ModelFileErrorKind::kArchitectureMismatch, "victim: expected one head width");
    arch.head = widths[0];
    const std::string task = a.at("task").get<std::string>();
    if (task != "classification" && task != "regression") {
      throw ModelFileError(ModelFileErrorKind::kMalformed, "victim: unknown task " + task);
    }
    arch.task = task == "classification" ? Task::kClassification : Task::kRegression;
    arch.classes = a.at("C").get<std::size_t>();
    const std::string ordering = a.value("head_ordering", std::string("post_update"));
    arch.ordering = ordering == "pre_update" ? HeadOrdering::kPreUpdate : HeadOrdering::kPostUpdate;
    if (expected_task && *expected_task != arch.task) {
      throw ModelFileError(ModelFileErrorKind::kArchitectureMismatch,
                           std::string("victim: file holds a ") + to_string(arch.task) + " model, expected " +
                               to_string(*expected_task));
    }
    if (arch.task == Task::kClassification && arch.classes < 2) {
      throw ModelFileError(ModelFileErrorKind::kArchitectureMismatch, "victim: classification needs C >= 2");
    }
    VictimModel model = VictimModel::zeros(arch);
    detail::read_weights(doc, model);
    return model;
  });
}

inline std::string predictor_to_json(const PredictorModel& q) {
  nlohmann::json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["kind"] = "predictor";
  doc["architecture"] = {{"n", q.arch.input},
                         {"m", q.arch.hidden},
                         {"widths", {q.arch.head}},
                         {"dropout", q.arch.dropout},
                         {"stochastic_at_inference", q.arch.stochastic_at_inference},
                         {"range", {q.arch.range_lo, q.arch.range_hi}}};
  doc["checksum"] = checksum_string(weight_checksum(q));
  doc["weights"] = detail::weights_json(q);
  return doc.dump(1) + "\n";
}

inline PredictorModel predictor_from_json(const std::string& text) {
  const auto doc = detail::parse_model_text(text, "predictor");
  return detail::json_guard([&] {
    const auto& a = doc.at("architecture");
    PredictorArch arch;
    arch.input = a.at("n").get<std::size_t>();
    arch.hidden = a.at("m").get<std::size_t>();
    const auto widths = a.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() != 1) {
      throw ModelFileError(ModelFileErrorKind::kArchitectureMismatch, "predictor: expected one head width");
    }
    arch.head = widths[0];
    arch.dropout = a.at("dropout").get<double>();
    arch.stochastic_at_inference = a.at("stochastic_at_inference").get<bool>();
    const auto range = a.at("range").get<std::vector<double>>();
    if (range.size() != 2) throw ModelFileError(ModelFileErrorKind::kMalformed, "predictor: range needs two values");
    arch.range_lo = range[0];
    arch.range_hi = range[1];
    PredictorModel q = PredictorModel::zeros(arch);
    detail::read_weights(doc, q);
    return q;
  });
}

inline void save_model(const VictimModel& model, const std::string& path) {
  detail::write_text(path, victim_to_json(model));
}
inline void save_model(const PredictorModel& q, const std::string& path) {
  detail::write_text(path, predictor_to_json(q));
}
inline VictimModel load_victim(const std::string& path, std::optional<Task> expected_task = std::nullopt) {
  return victim_from_json(detail::read_text(path), expected_task);
}
inline PredictorModel load_predictor(const std::string& path) { return predictor_from_json(detail::read_text(path)); }

}  // namespace streamraid
