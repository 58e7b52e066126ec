#pragma once

// Experiment drivers: evaluate one attack over an evaluation set, Cartesian
// sweeps, and the objective showcases (real-time, time-window, surprise).

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "streamraid/attack.hpp"
#include "streamraid/datasets.hpp"
#include "streamraid/metrics.hpp"
#include "streamraid/models.hpp"
#include "streamraid/report.hpp"
#include "streamraid/training.hpp"

namespace streamraid {

enum class AttackKind { kGreedy, kIid, kPredictive, kClairvoyant };

inline const char* to_string(AttackKind a) {
  switch (a) {
    case AttackKind::kGreedy: return "greedy";
    case AttackKind::kIid: return "iid";
    case AttackKind::kPredictive: return "predictive";
    case AttackKind::kClairvoyant: return "clairvoyant";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "greedy") return AttackKind::kGreedy;
  if (s == "iid") return AttackKind::kIid;
  if (s == "predictive") return AttackKind::kPredictive;
  if (s == "clairvoyant") return AttackKind::kClairvoyant;
  throw ConfigError("unknown attack '" + s + "' (greedy|iid|predictive|clairvoyant)");
}

enum class TargetMode {
  kSchedule,  // the TargetSpec schedule, shared by every sequence
  kFlip,      // untargeted stand-in: (y + 1) mod C per step
};

// Everything one attack evaluation needs. Pointers are non-owning.
struct ExperimentContext {
  std::string dataset = "dataset";
  const SequenceDataset* eval = nullptr;
  const VictimModel* victim = nullptr;
  const PredictorModel* predictor = nullptr;
  const IidPool* pool = nullptr;
  TargetSpec targets;
  TargetMode target_mode = TargetMode::kSchedule;
};

inline FutureSource make_source(AttackKind kind, const ExperimentContext& ctx) {
  switch (kind) {
    case AttackKind::kGreedy: return source::Greedy{};
    case AttackKind::kClairvoyant: return source::Clairvoyant{};
    case AttackKind::kPredictive:
      if (ctx.predictor == nullptr) throw ConfigError("predictive attack requires a predictor model");
      return source::Predictive{ctx.predictor};
    case AttackKind::kIid:
      if (ctx.pool == nullptr) throw ConfigError("iid attack requires an input pool");
      return source::Iid{ctx.pool};
  }
  throw ConfigError("unknown attack kind");
}

// Greedy ignores the lookahead.
inline AttackConfig normalized_config(AttackKind kind, AttackConfig cfg) {
  if (kind == AttackKind::kGreedy) cfg.k = 0;
  return cfg;
}

// Attacker targets for sequence `index` of the evaluation set.
inline AttackTargets targets_for(const ExperimentContext& ctx, std::size_t index) {
  const SequenceDataset& ds = *ctx.eval;
  const std::size_t length = ds.inputs[index].rows();
  AttackTargets t;
  if (ds.meta.task == Task::kClassification) {
    t.truth.labels = ds.labels[index];
    if (ctx.target_mode == TargetMode::kFlip) {
      for (int y : t.truth.labels) t.adversarial.labels.push_back((y + 1) % static_cast<int>(ds.meta.classes));
    } else {
      std::vector<int> all;
      for (const auto& l : ds.labels) all.insert(all.end(), l.begin(), l.end());
      t.adversarial = make_targets(ctx.targets, length, Task::kClassification, ds.meta.classes, all);
    }
  } else {
    t.truth.values = ds.values[index];
    Vector all;
    for (const auto& v : ds.values) all.insert(all.end(), v.begin(), v.end());
    t.adversarial = make_targets(ctx.targets, length, Task::kRegression, 0, {}, all);
  }
  return t;
}

// Metrics of one attack averaged over the evaluation set (per sequence, then
// unweighted mean over sequences).
struct AttackEvaluation {
  double targeted = 0.0;   // tasr (classification) or tmse (regression)
  double fool = 0.0;       // fool_rate or fool_mse
  double surprise = 0.0;   // surprise_error (regression only)
  double clean = 0.0;      // clean_acc or clean_mse
  std::vector<double> fool_per_step;  // mean over sequences
  double wall_time_s = 0.0;
  std::vector<PerturbationTrace> traces;
};

inline AttackEvaluation evaluate_attack(const ExperimentContext& ctx, AttackKind kind, const AttackConfig& base,
                                        const ObjectiveSpec& objective, bool keep_traces = false) {
  if (ctx.eval == nullptr || ctx.victim == nullptr) throw ConfigError("experiment: evaluation set and victim required");
  if (ctx.eval->empty()) throw DomainError("experiment: empty evaluation set");
  const SequenceDataset& ds = *ctx.eval;
  const AttackConfig cfg0 = normalized_config(kind, base);
  const FutureSource src = make_source(kind, ctx);
  const bool classification = ds.meta.task == Task::kClassification;
  AttackEvaluation ev;
  const std::size_t length = ds.inputs[0].rows();
  ev.fool_per_step.assign(length, 0.0);
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < ds.size(); ++s) {
    AttackConfig cfg = cfg0;
    cfg.seed = Rng::derive(cfg0.seed, s);
    const AttackTargets targets = targets_for(ctx, s);
    PerturbationTrace trace = run_online_attack(*ctx.victim, ds.inputs[s], targets, src, cfg, objective);
    const Tensor adv = trace.adv_outputs(), clean = trace.clean_outputs();
    std::vector<double> fool;
    if (classification) {
      ev.targeted += metrics::tasr(adv, targets.adversarial.labels);
      fool = metrics::fool_rate_steps(adv, targets.truth.labels);
      ev.clean += 1.0 - metrics::fool_rate(clean, targets.truth.labels);
    } else {
      ev.targeted += metrics::tmse(adv, targets.adversarial.values);
      fool = metrics::fool_mse_steps(adv, targets.truth.values);
      ev.surprise += metrics::surprise_error(adv, targets.truth.values);
      ev.clean += metrics::fool_mse(clean, targets.truth.values);
    }
    ev.fool += metrics::mean(fool);
    for (std::size_t t = 0; t < fool.size() && t < length; ++t) ev.fool_per_step[t] += fool[t];
    if (keep_traces) ev.traces.push_back(std::move(trace));
  }
  const double count = static_cast<double>(ds.size());
  ev.targeted /= count;
  ev.fool /= count;
  ev.surprise /= count;
  ev.clean /= count;
  for (double& v : ev.fool_per_step) v /= count;
  if (cfg0.record_timing) ev.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return ev;
}

// Gray-box run: perturbations are crafted on `surrogate` and replayed through
// ctx.victim; metrics are measured on the victim.
inline AttackEvaluation evaluate_transfer(const ExperimentContext& ctx, const VictimModel& surrogate, AttackKind kind,
                                          const AttackConfig& base, const ObjectiveSpec& objective) {
  if (ctx.eval == nullptr || ctx.victim == nullptr) throw ConfigError("experiment: evaluation set and victim required");
  if (ctx.eval->empty()) throw DomainError("experiment: empty evaluation set");
  const SequenceDataset& ds = *ctx.eval;
  const AttackConfig cfg0 = normalized_config(kind, base);
  const FutureSource src = make_source(kind, ctx);
  const bool classification = ds.meta.task == Task::kClassification;
  AttackEvaluation ev;
  const std::size_t length = ds.inputs[0].rows();
  ev.fool_per_step.assign(length, 0.0);
  for (std::size_t s = 0; s < ds.size(); ++s) {
    AttackConfig cfg = cfg0;
    cfg.seed = Rng::derive(cfg0.seed, s);
    const AttackTargets targets = targets_for(ctx, s);
    const TransferResult r = transfer_attack(surrogate, *ctx.victim, ds.inputs[s], targets, src, cfg, objective);
    std::vector<double> fool;
    if (classification) {
      ev.targeted += metrics::tasr(r.victim_adv_outputs, targets.adversarial.labels);
      fool = metrics::fool_rate_steps(r.victim_adv_outputs, targets.truth.labels);
      ev.clean += 1.0 - metrics::fool_rate(r.victim_clean_outputs, targets.truth.labels);
    } else {
      ev.targeted += metrics::tmse(r.victim_adv_outputs, targets.adversarial.values);
      fool = metrics::fool_mse_steps(r.victim_adv_outputs, targets.truth.values);
      ev.surprise += metrics::surprise_error(r.victim_adv_outputs, targets.truth.values);
      ev.clean += metrics::fool_mse(r.victim_clean_outputs, targets.truth.values);
    }
    ev.fool += metrics::mean(fool);
    for (std::size_t t = 0; t < fool.size() && t < length; ++t) ev.fool_per_step[t] += fool[t];
  }
  const double count = static_cast<double>(ds.size());
  ev.targeted /= count;
  ev.fool /= count;
  ev.surprise /= count;
  ev.clean /= count;
  for (double& v : ev.fool_per_step) v /= count;
  return ev;
}

inline void append_rows(MetricsReport& report, const ExperimentContext& ctx, AttackKind kind, const AttackConfig& cfg,
                        const std::string& objective, const AttackEvaluation& ev) {
  const bool classification = ctx.eval->meta.task == Task::kClassification;
  const AttackConfig c = normalized_config(kind, cfg);
  auto row = [&](const std::string& metric, double value) {
    report.add(ReportRow{ctx.dataset, to_string(kind), objective, c.epsilon, c.k, c.max_count, c.eta, c.seed, metric,
                         value, ev.wall_time_s});
  };
  row(classification ? "tasr" : "tmse", ev.targeted);
  row(classification ? "fool_rate" : "fool_mse", ev.fool);
  if (!classification) row("surprise_error", ev.surprise);
  row(classification ? "clean_acc" : "clean_mse", ev.clean);
}

// ---------------------------------------------------------------- sweep --

struct SweepSpec {
  SweepAxis axis = SweepAxis::kEpsilon;
  std::vector<double> grid;
  std::vector<AttackKind> attacks;
  std::vector<std::uint64_t> seeds;
  AttackConfig base;
  ObjectiveSpec objective = objective::Sum{};
  std::size_t jobs = 1;
};

struct SweepResult {
  MetricsReport report;
  std::vector<std::string> errors;  // one message per failed cell
};

inline AttackConfig apply_axis(AttackConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kEpsilon: cfg.epsilon = value; break;
    case SweepAxis::kK: cfg.k = static_cast<std::size_t>(value); break;
    case SweepAxis::kMaxCount: cfg.max_count = static_cast<std::size_t>(value); break;
    case SweepAxis::kEta: cfg.eta = value; break;
    case SweepAxis::kTargetFrequency: break;
  }
  return cfg;
}

// Cartesian run of attacks x grid x seeds. `context_for_seed` supplies the
// (possibly per-seed retrained) models. Cells are independent; failed cells
// are reported in `errors` and the sweep continues. Rows come back sorted.
inline SweepResult sweep(const SweepSpec& spec, const std::function<ExperimentContext(std::uint64_t)>& context_for_seed) {
  if (spec.grid.empty()) throw ConfigError("sweep: grid is empty");
  if (spec.seeds.empty()) throw ConfigError("sweep: at least one seed required");
  if (spec.attacks.empty()) throw ConfigError("sweep: no attacks selected");
  struct Cell {
    AttackKind attack;
    double value;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::uint64_t seed : spec.seeds) {
    for (AttackKind a : spec.attacks) {
      for (double v : spec.grid) cells.push_back({a, v, seed});
    }
  }
  std::vector<ExperimentContext> contexts;
  for (std::uint64_t seed : spec.seeds) contexts.push_back(context_for_seed(seed));

  SweepResult result;
  std::mutex merge;
  auto run_cell = [&](std::size_t idx) {
    const Cell& cell = cells[idx];
    const std::size_t seed_idx = static_cast<std::size_t>(
        std::find(spec.seeds.begin(), spec.seeds.end(), cell.seed) - spec.seeds.begin());
    ExperimentContext ctx = contexts[seed_idx];
    AttackConfig cfg = apply_axis(spec.base, spec.axis, cell.value);
    cfg.seed = cell.seed;
    std::string objective = objective_name(spec.objective);
    if (spec.axis == SweepAxis::kTargetFrequency) {
      ctx.targets.pattern = TargetPattern::kSquareWave;
      ctx.targets.frequency = static_cast<std::size_t>(cell.value);
      objective += ":f" + std::to_string(ctx.targets.frequency);
    }
    MetricsReport local;
    try {
      const AttackEvaluation ev = evaluate_attack(ctx, cell.attack, cfg, spec.objective);
      append_rows(local, ctx, cell.attack, cfg, objective, ev);
    } catch (const std::exception& e) {
      std::lock_guard lock(merge);
      result.errors.push_back(std::string(to_string(cell.attack)) + " " + axis_name(spec.axis) + "=" +
                              format_number(cell.value) + " seed=" + std::to_string(cell.seed) + ": " + e.what());
      return;
    }
    std::lock_guard lock(merge);
    result.report.append(local);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, cells.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& w : workers) w.join();
  }
  result.report.sort();
  std::sort(result.errors.begin(), result.errors.end());
  return result;
}

// ------------------------------------------------------------ showcases --

enum class ShowcaseKind { kRealTime, kTimeWindow, kSurprise };

struct ShowcaseResult {
  MetricsReport report;
  std::vector<std::pair<std::string, std::vector<double>>> series;  // per-step fool metric
  // Time window: mean fool metric before a and on [a, L], for the window
  // objective and for the plain sum objective.
  double window_out = 0.0, window_in = 0.0, plain_out = 0.0, plain_in = 0.0;
  double in_out_ratio = 0.0;  // +inf when nothing is fooled outside the window
  // Surprise: surprise error of the surprise objective, the sum objective,
  // and greedy.
  double surprise_objective = 0.0, surprise_sum = 0.0, surprise_greedy = 0.0;
  // Real time: fool metric at the final step.
  double realtime_final = 0.0, greedy_final = 0.0;
};

inline std::size_t default_window_start(std::size_t length) { return (3 * length + 3) / 4; }

inline double mean_range(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  if (end <= begin) return 0.0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

inline ShowcaseResult objective_showcase(ShowcaseKind kind, const ExperimentContext& ctx, AttackKind attack,
                                         const AttackConfig& cfg, double tau = 1.0) {
  if (ctx.eval == nullptr || ctx.eval->empty()) throw ConfigError("showcase: evaluation set required");
  const std::size_t length = ctx.eval->inputs[0].rows();
  ShowcaseResult out;
  switch (kind) {
    case ShowcaseKind::kTimeWindow: {
      const std::size_t a = default_window_start(length);
      const objective::TimeWindow window{a, length, tau};
      const auto windowed = evaluate_attack(ctx, attack, cfg, window);
      const auto plain = evaluate_attack(ctx, attack, cfg, objective::Sum{});
      append_rows(out.report, ctx, attack, cfg, "timewindow", windowed);
      append_rows(out.report, ctx, attack, cfg, "sum", plain);
      out.series = {{"timewindow", windowed.fool_per_step}, {"sum", plain.fool_per_step}};
      out.window_out = mean_range(windowed.fool_per_step, 0, a - 1);
      out.window_in = mean_range(windowed.fool_per_step, a - 1, length);
      out.plain_out = mean_range(plain.fool_per_step, 0, a - 1);
      out.plain_in = mean_range(plain.fool_per_step, a - 1, length);
      out.in_out_ratio = out.window_out == 0.0 ? std::numeric_limits<double>::infinity() : out.window_in / out.window_out;
      break;
    }
    case ShowcaseKind::kSurprise: {
      if (ctx.eval->meta.task != Task::kRegression) throw ConfigError("surprise showcase needs a regression task");
      const auto surprise = evaluate_attack(ctx, attack, cfg, objective::Surprise{});
      const auto sum = evaluate_attack(ctx, attack, cfg, objective::Sum{});
      const auto greedy = evaluate_attack(ctx, AttackKind::kGreedy, cfg, objective::Sum{});
      append_rows(out.report, ctx, attack, cfg, "surprise", surprise);
      append_rows(out.report, ctx, attack, cfg, "sum", sum);
      append_rows(out.report, ctx, AttackKind::kGreedy, cfg, "sum", greedy);
      out.series = {{"surprise", surprise.fool_per_step}, {"sum", sum.fool_per_step}, {"greedy", greedy.fool_per_step}};
      out.surprise_objective = surprise.surprise;
      out.surprise_sum = sum.surprise;
      out.surprise_greedy = greedy.surprise;
      break;
    }
    case ShowcaseKind::kRealTime: {
      const auto realtime = evaluate_attack(ctx, attack, cfg, objective::RealTime{});
      const auto greedy = evaluate_attack(ctx, AttackKind::kGreedy, cfg, objective::Sum{});
      append_rows(out.report, ctx, attack, cfg, "realtime", realtime);
      append_rows(out.report, ctx, AttackKind::kGreedy, cfg, "sum", greedy);
      out.series = {{"realtime", realtime.fool_per_step}, {"greedy", greedy.fool_per_step}};
      out.realtime_final = realtime.fool_per_step.back();
      out.greedy_final = greedy.fool_per_step.back();
      break;
    }
  }
  return out;
}

}  // namespace streamraid
