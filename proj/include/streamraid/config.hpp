#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamraid/attack.hpp"
#include "streamraid/datasets.hpp"
#include "streamraid/errors.hpp"
#include "streamraid/experiment.hpp"
#include "streamraid/models.hpp"
#include "streamraid/report.hpp"
#include "streamraid/training.hpp"

// JSON experiment configuration. Every object is checked against its list of
// known keys before anything else happens; an unknown key is a ConfigError
// naming its full path (e.g. "attack.epsilonn").

namespace streamraid {

struct DatasetConfig {
  std::string kind = "mnist";  // mnist | csv | synth_sine
  // mnist: directory with the four IDX files.
  std::string dir = "data/mnist38";
  std::vector<int> classes = {3, 8};
  // csv: one file, split in file order.
  std::string path;
  std::string seq_id_col = "seq";
  std::string time_col = "t";
  std::vector<std::string> feature_cols;
  std::string target_col;
  Task task = Task::kRegression;
  double train_fraction = 0.8;
  // synth_sine: `sine` drives the training split, `eval_seed` the evaluation split.
  SineSpec sine;
  std::size_t eval_sequences = 100;
  std::uint64_t eval_seed = 1;
  // Cap on evaluation sequences (0 = all), class-interleaved.
  std::size_t eval_count = 0;
};

struct VictimSection {
  std::size_t hidden = 4;
  std::size_t head = 10;
  HeadOrdering ordering = HeadOrdering::kPostUpdate;
  TrainConfig train{20, 16, 3e-3, 0};
  std::optional<std::uint64_t> seed;  // training seed; falls back to default_seed()
  std::string model;                  // load instead of training when set
};

struct PredictorSection {
  std::size_t hidden = 128;
  std::size_t head = 150;
  double dropout = 0.3;
  bool stochastic = false;
  TrainConfig train{10, 16, 3e-3, 0};
  std::optional<std::uint64_t> seed;
  std::string model;
};

struct ObjectiveConfig {
  std::string kind = "sum";  // sum | realtime | timewindow | surprise
  std::optional<std::size_t> a, b;
  double tau = 1.0;
};

struct TargetConfig {
  TargetMode mode = TargetMode::kSchedule;
  TargetSpec spec;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::kEpsilon;
  std::vector<double> grid;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  VictimSection victim;
  PredictorSection predictor;
  std::vector<AttackKind> attacks = {AttackKind::kGreedy, AttackKind::kIid, AttackKind::kPredictive,
                                     AttackKind::kClairvoyant};
  AttackConfig attack;
  ObjectiveConfig objective;
  TargetConfig targets;
  SweepConfig sweep;
  std::vector<std::uint64_t> seeds;  // empty: STREAMRAID_SEED, else 0
  std::string output_dir = "out";
};

namespace detail {

using Json = nlohmann::json;

inline void check_object(const Json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (known.count(key) == 0) throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw ConfigError("config: task must be classification|regression, got '" + s + "'");
}

inline HeadOrdering parse_ordering(const std::string& s) {
  if (s == "post_update") return HeadOrdering::kPostUpdate;
  if (s == "pre_update") return HeadOrdering::kPreUpdate;
  throw ConfigError("config: head_ordering must be post_update|pre_update, got '" + s + "'");
}

inline void read_train(const Json& j, const std::string& where, TrainConfig& t, std::optional<std::uint64_t>& seed) {
  read(j, "epochs", t.epochs, where);
  read(j, "batch", t.batch, where);
  read(j, "lr", t.lr, where);
  if (j.contains("seed")) {
    std::uint64_t v = 0;
    read(j, "seed", v, where);
    seed = v;
  }
}

}  // namespace detail

inline Norm parse_norm(const std::string& s) {
  if (s == "inf" || s == "linf") return Norm::kInf;
  if (s == "2" || s == "l2") return Norm::kL2;
  throw ConfigError("norm must be inf|l2, got '" + s + "'");
}

inline SweepAxis parse_axis(const std::string& s) {
  for (SweepAxis a : {SweepAxis::kEpsilon, SweepAxis::kK, SweepAxis::kMaxCount, SweepAxis::kEta,
                      SweepAxis::kTargetFrequency}) {
    if (s == axis_name(a)) return a;
  }
  throw ConfigError("unknown sweep axis '" + s + "' (epsilon|k|max_count|eta|target_frequency)");
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::check_object;
  using detail::read;
  ExperimentConfig c;
  check_object(j, "", {"dataset", "victim", "predictor", "attacks", "attack", "objective", "targets", "sweep", "seeds",
                       "output_dir"});
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    check_object(d, "dataset", {"kind", "dir", "classes", "path", "seq_id_col", "time_col", "feature_cols",
                                "target_col", "task", "train_fraction", "count", "length", "n", "noise_sd", "seed",
                                "eval_sequences", "eval_seed", "eval_count"});
    auto& ds = c.dataset;
    read(d, "kind", ds.kind, "dataset");
    if (ds.kind != "mnist" && ds.kind != "csv" && ds.kind != "synth_sine") {
      throw ConfigError("config: dataset.kind must be mnist|csv|synth_sine, got '" + ds.kind + "'");
    }
    read(d, "dir", ds.dir, "dataset");
    read(d, "classes", ds.classes, "dataset");
    read(d, "path", ds.path, "dataset");
    read(d, "seq_id_col", ds.seq_id_col, "dataset");
    read(d, "time_col", ds.time_col, "dataset");
    read(d, "feature_cols", ds.feature_cols, "dataset");
    read(d, "target_col", ds.target_col, "dataset");
    std::string task = ds.task == Task::kRegression ? "regression" : "classification";
    read(d, "task", task, "dataset");
    ds.task = detail::parse_task(task);
    read(d, "train_fraction", ds.train_fraction, "dataset");
    read(d, "count", ds.sine.count, "dataset");
    read(d, "length", ds.sine.length, "dataset");
    read(d, "n", ds.sine.n, "dataset");
    read(d, "noise_sd", ds.sine.noise_sd, "dataset");
    read(d, "seed", ds.sine.seed, "dataset");
    read(d, "eval_sequences", ds.eval_sequences, "dataset");
    read(d, "eval_seed", ds.eval_seed, "dataset");
    read(d, "eval_count", ds.eval_count, "dataset");
    if (!(ds.train_fraction > 0.0 && ds.train_fraction < 1.0)) {
      throw ConfigError("config: dataset.train_fraction must lie in (0, 1)");
    }
  }
  if (j.contains("victim")) {
    const auto& v = j["victim"];
    check_object(v, "victim", {"hidden", "head", "head_ordering", "epochs", "batch", "lr", "seed", "model"});
    read(v, "hidden", c.victim.hidden, "victim");
    read(v, "head", c.victim.head, "victim");
    std::string ordering = to_string(c.victim.ordering);
    read(v, "head_ordering", ordering, "victim");
    c.victim.ordering = detail::parse_ordering(ordering);
    detail::read_train(v, "victim", c.victim.train, c.victim.seed);
    read(v, "model", c.victim.model, "victim");
  }
  if (j.contains("predictor")) {
    const auto& p = j["predictor"];
    check_object(p, "predictor", {"hidden", "head", "dropout", "stochastic_at_inference", "epochs", "batch", "lr", "seed",
                                  "model"});
    read(p, "hidden", c.predictor.hidden, "predictor");
    read(p, "head", c.predictor.head, "predictor");
    read(p, "dropout", c.predictor.dropout, "predictor");
    read(p, "stochastic_at_inference", c.predictor.stochastic, "predictor");
    detail::read_train(p, "predictor", c.predictor.train, c.predictor.seed);
    read(p, "model", c.predictor.model, "predictor");
  }
  if (j.contains("attacks")) {
    std::vector<std::string> names;
    read(j, "attacks", names, "");
    if (names.empty()) throw ConfigError("config: attacks must not be empty");
    c.attacks.clear();
    for (const auto& n : names) c.attacks.push_back(parse_attack_kind(n));
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    check_object(a, "attack", {"epsilon", "norm", "k", "max_count", "alpha", "mc_samples", "eta", "warm_start",
                               "condition_on_perturbed", "lo", "hi"});
    auto& ac = c.attack;
    read(a, "epsilon", ac.epsilon, "attack");
    std::string norm = ac.p == Norm::kInf ? "inf" : "l2";
    read(a, "norm", norm, "attack");
    ac.p = parse_norm(norm);
    read(a, "k", ac.k, "attack");
    read(a, "max_count", ac.max_count, "attack");
    if (a.contains("alpha") && !a["alpha"].is_null()) {
      double alpha = 0.0;
      read(a, "alpha", alpha, "attack");
      ac.alpha = alpha;
    }
    read(a, "mc_samples", ac.mc_samples, "attack");
    read(a, "eta", ac.eta, "attack");
    read(a, "warm_start", ac.warm_start, "attack");
    read(a, "condition_on_perturbed", ac.condition_on_perturbed, "attack");
    read(a, "lo", ac.lo, "attack");
    read(a, "hi", ac.hi, "attack");
    ac.validate();
  }
  if (j.contains("objective")) {
    const auto& o = j["objective"];
    check_object(o, "objective", {"kind", "a", "b", "tau"});
    read(o, "kind", c.objective.kind, "objective");
    std::size_t v = 0;
    if (o.contains("a")) c.objective.a = (read(o, "a", v, "objective"), v);
    if (o.contains("b")) c.objective.b = (read(o, "b", v, "objective"), v);
    read(o, "tau", c.objective.tau, "objective");
  }
  if (j.contains("targets")) {
    const auto& t = j["targets"];
    check_object(t, "targets", {"mode", "pattern", "frequency", "payload"});
    std::string mode = "schedule", pattern = "square_wave";
    read(t, "mode", mode, "targets");
    if (mode == "schedule") {
      c.targets.mode = TargetMode::kSchedule;
    } else if (mode == "flip") {
      c.targets.mode = TargetMode::kFlip;
    } else {
      throw ConfigError("config: targets.mode must be schedule|flip, got '" + mode + "'");
    }
    read(t, "pattern", pattern, "targets");
    if (pattern == "square_wave") {
      c.targets.spec.pattern = TargetPattern::kSquareWave;
    } else if (pattern == "constant") {
      c.targets.spec.pattern = TargetPattern::kConstant;
    } else if (pattern == "custom") {
      c.targets.spec.pattern = TargetPattern::kCustom;
    } else {
      throw ConfigError("config: targets.pattern must be square_wave|constant|custom, got '" + pattern + "'");
    }
    read(t, "frequency", c.targets.spec.frequency, "targets");
    read(t, "payload", c.targets.spec.payload, "targets");
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    check_object(s, "sweep", {"axis", "grid"});
    std::string axis = axis_name(c.sweep.axis);
    read(s, "axis", axis, "sweep");
    c.sweep.axis = parse_axis(axis);
    read(s, "grid", c.sweep.grid, "sweep");
  }
  read(j, "seeds", c.seeds, "");
  read(j, "output_dir", c.output_dir, "");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

// Seed precedence: explicit value, then STREAMRAID_SEED, then 0.
inline std::uint64_t default_seed(std::optional<std::uint64_t> explicit_seed = std::nullopt) {
  if (explicit_seed) return *explicit_seed;
  if (const char* env = std::getenv("STREAMRAID_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0') throw ConfigError(std::string("STREAMRAID_SEED is not an integer: '") + env + "'");
    return v;
  }
  return 0;
}

// ------------------------------------------------------------ datasets --

struct LoadedData {
  SequenceDataset train;
  SequenceDataset eval;
};

inline void require_path(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw ConfigError(what + " not found: '" + path + "'");
}

inline LoadedData load_data(const DatasetConfig& cfg) {
  LoadedData out;
  if (cfg.kind == "mnist") {
    const std::filesystem::path dir(cfg.dir);
    require_path(cfg.dir, "dataset directory");
    const std::string names[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                                 "t10k-labels-idx1-ubyte"};
    for (const auto& n : names) require_path((dir / n).string(), "dataset file");
    out.train = to_column_sequences(load_idx((dir / names[0]).string(), (dir / names[1]).string()), cfg.classes,
                                     dir.filename().string());
    out.eval = to_column_sequences(load_idx((dir / names[2]).string(), (dir / names[3]).string()), cfg.classes,
                                   dir.filename().string());
  } else if (cfg.kind == "csv") {
    require_path(cfg.path, "dataset file");
    CsvSchema schema{cfg.seq_id_col, cfg.time_col, cfg.feature_cols, std::nullopt, cfg.task};
    if (!cfg.target_col.empty()) schema.target_col = cfg.target_col;
    SequenceDataset all = load_csv_sequences(cfg.path, schema);
    const auto cut = static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(all.size()));
    if (cut == 0 || cut >= all.size()) throw DataError("dataset: too few sequences to split '" + cfg.path + "'");
    out.train = all.subset(0, cut);
    out.eval = all.subset(cut, all.size() - cut);
    const FeatureScaling scaling = fit_min_max(out.train);
    apply_min_max(out.train, scaling);
    apply_min_max(out.eval, scaling);
  } else {
    out.train = synth_sine(cfg.sine);
    SineSpec e = cfg.sine;
    e.count = cfg.eval_sequences;
    e.seed = cfg.eval_seed;
    out.eval = synth_sine(e);
  }
  if (cfg.eval_count > 0) out.eval = stratified_subset(out.eval, cfg.eval_count);
  if (out.train.empty() || out.eval.empty()) throw DataError("dataset: empty train or evaluation split");
  return out;
}

inline VictimArch victim_arch(const ExperimentConfig& c, const SequenceDataset& ds) {
  VictimArch a;
  a.input = ds.meta.n;
  a.hidden = c.victim.hidden;
  a.head = c.victim.head;
  a.task = ds.meta.task;
  a.classes = ds.meta.task == Task::kClassification ? ds.meta.classes : 1;
  a.ordering = c.victim.ordering;
  return a;
}

inline PredictorArch predictor_arch(const ExperimentConfig& c, const SequenceDataset& ds) {
  PredictorArch a;
  a.input = ds.meta.n;
  a.hidden = c.predictor.hidden;
  a.head = c.predictor.head;
  a.dropout = c.predictor.dropout;
  a.stochastic_at_inference = c.predictor.stochastic;
  a.range_lo = ds.meta.lo;
  a.range_hi = ds.meta.hi;
  return a;
}

// ----------------------------------------------------------- objectives --

inline ObjectiveSpec make_objective(const ObjectiveConfig& o, std::size_t length) {
  if (o.kind == "sum") return objective::Sum{};
  if (o.kind == "realtime") return objective::RealTime{};
  if (o.kind == "surprise") return objective::Surprise{};
  if (o.kind == "timewindow") {
    return objective::TimeWindow{o.a.value_or(default_window_start(length)), o.b.value_or(length), o.tau};
  }
  throw ConfigError("unknown objective '" + o.kind + "' (sum|realtime|timewindow|surprise)");
}

}  // namespace streamraid
