#pragma once

// Online evasion attack engine. At every step t the attacker sees only the
// clean prefix x_{:t}, optimizes delta_t (and provisional delta_{t+1..t+K'})
// by sign-gradient PGD on an aggregated loss over a lookahead window filled
// with hallucinated future inputs, emits delta_t, and advances the perturbed
// hidden state.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "streamraid/datasets.hpp"
#include "streamraid/errors.hpp"
#include "streamraid/gradkit.hpp"
#include "streamraid/models.hpp"
#include "streamraid/rng.hpp"
#include "streamraid/tensor.hpp"

namespace streamraid {

enum class Norm { kInf, kL2 };

inline const char* to_string(Norm p) { return p == Norm::kInf ? "inf" : "2"; }

struct AttackConfig {
  double epsilon = 0.1;
  Norm p = Norm::kInf;
  std::size_t k = 0;  // lookahead
  std::size_t max_count = 100;
  std::optional<double> alpha;  // defaults to 1.5 * epsilon / max_count
  std::size_t mc_samples = 1;
  double eta = 0.0;
  bool warm_start = false;
  bool condition_on_perturbed = false;
  double lo = 0.0;
  double hi = 1.0;
  std::uint64_t seed = 0;
  bool record_timing = false;

  double effective_alpha() const {
    return alpha ? *alpha : 1.5 * epsilon / static_cast<double>(max_count);
  }

  // epsilon == 0 is accepted as the no-attack case (every delta is zero).
  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be >= 0");
    if (max_count < 1) throw ConfigError("attack: max_count must be >= 1");
    if (epsilon > 0.0 && !(effective_alpha() > 0.0)) throw ConfigError("attack: alpha must be > 0");
    if (mc_samples < 1) throw ConfigError("attack: mc_samples must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("attack: eta must lie in [0, 1]");
    if (!(lo < hi)) throw ConfigError("attack: input range needs lo < hi");
  }
};

// ------------------------------------------------------------ objectives --

enum class TargetKind { kAdversarial, kTrue };

namespace objective {
struct Sum {};
// gammas and modes are indexed by absolute step (length = horizon).
struct Weighted {
  Vector gammas;
  std::vector<TargetKind> modes;
};
struct RealTime {};
// 1-based inclusive window [a, b].
struct TimeWindow {
  std::size_t a = 1;
  std::size_t b = 1;
  double tau = 1.0;
};
struct Surprise {};
}  // namespace objective

using ObjectiveSpec =
    std::variant<objective::Sum, objective::Weighted, objective::RealTime, objective::TimeWindow, objective::Surprise>;

inline std::string objective_name(const ObjectiveSpec& spec) {
  static const char* names[] = {"sum", "weighted", "realtime", "timewindow", "surprise"};
  return names[spec.index()];
}

// Weighted form of the real-time objective: only the last step counts.
inline objective::Weighted realtime_as_weighted(std::size_t horizon) {
  objective::Weighted w{Vector(horizon, 0.0), std::vector<TargetKind>(horizon, TargetKind::kAdversarial)};
  w.gammas.back() = 1.0;
  return w;
}

inline void validate_objective(const ObjectiveSpec& spec, std::size_t horizon) {
  if (const auto* w = std::get_if<objective::Weighted>(&spec)) {
    if (w->gammas.size() != horizon || w->modes.size() != horizon) {
      throw ConfigError("weighted objective: gammas/modes must have one entry per step (" + std::to_string(horizon) +
                        ")");
    }
  } else if (const auto* tw = std::get_if<objective::TimeWindow>(&spec)) {
    if (tw->a < 1 || tw->a > tw->b || tw->b > horizon) {
      throw ConfigError("time-window objective: need 1 <= a <= b <= L (a=" + std::to_string(tw->a) +
                        ", b=" + std::to_string(tw->b) + ", L=" + std::to_string(horizon) + ")");
    }
    if (!(tw->tau > 0.0)) throw ConfigError("time-window objective: tau must be > 0");
  }
}

// Which target the loss at absolute step `step` (1-based) is measured against.
inline TargetKind target_kind(const ObjectiveSpec& spec, std::size_t step) {
  if (const auto* w = std::get_if<objective::Weighted>(&spec)) return w->modes.at(step - 1);
  if (const auto* tw = std::get_if<objective::TimeWindow>(&spec)) {
    return step >= tw->a && step <= tw->b ? TargetKind::kAdversarial : TargetKind::kTrue;
  }
  if (std::holds_alternative<objective::Surprise>(spec)) return TargetKind::kTrue;
  return TargetKind::kAdversarial;
}

struct WindowMeta {
  std::size_t first = 1;    // absolute 1-based index of losses[0]
  std::size_t horizon = 1;  // L
};

struct Aggregate {
  double value = 0.0;
  Vector weights;  // d value / d losses[j]
};

// Sum: sum L_i. Weighted: sum gamma_i L_i. RealTime: L at the horizon's last
// step (zero if the window does not reach it). TimeWindow: weight 1 inside
// [a, b], tau outside. Surprise: mean - max over the window, with the
// subgradient routed to the first argmax.
inline Aggregate aggregate(const ObjectiveSpec& spec, std::span<const double> losses, const WindowMeta& meta) {
  if (losses.empty()) throw DomainError("aggregate: empty loss list");
  if (meta.first < 1 || meta.first + losses.size() - 1 > meta.horizon) {
    throw DomainError("aggregate: window [" + std::to_string(meta.first) + ", " +
                      std::to_string(meta.first + losses.size() - 1) + "] outside [1, " + std::to_string(meta.horizon) +
                      "]");
  }
  const std::size_t len = losses.size();
  Aggregate out{0.0, Vector(len, 0.0)};
  auto weighted = [&](auto gamma_of) {
    for (std::size_t j = 0; j < len; ++j) {
      out.weights[j] = gamma_of(meta.first + j);
      out.value += out.weights[j] * losses[j];
    }
  };
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, objective::Sum>) {
          weighted([](std::size_t) { return 1.0; });
        } else if constexpr (std::is_same_v<T, objective::Weighted>) {
          if (o.gammas.size() != meta.horizon) throw ConfigError("weighted objective: gammas length != L");
          weighted([&](std::size_t i) { return o.gammas[i - 1]; });
        } else if constexpr (std::is_same_v<T, objective::RealTime>) {
          weighted([&](std::size_t i) { return i == meta.horizon ? 1.0 : 0.0; });
        } else if constexpr (std::is_same_v<T, objective::TimeWindow>) {
          weighted([&](std::size_t i) { return i >= o.a && i <= o.b ? 1.0 : o.tau; });
        } else {
          std::size_t arg = 0;
          double mean = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            mean += losses[j];
            if (losses[j] > losses[arg]) arg = j;
          }
          mean /= static_cast<double>(len);
          out.value = mean - losses[arg];
          for (std::size_t j = 0; j < len; ++j) out.weights[j] = 1.0 / static_cast<double>(len);
          out.weights[arg] -= 1.0;
        }
      },
      spec);
  return out;
}

// ---------------------------------------------------------- projections --

// l-inf: coordinate clamp to [-eps, eps]; l2: rescale iff the norm exceeds
// eps. Idempotent.
inline Vector project_lp(std::span<const double> delta, double epsilon, Norm p) {
  Vector out(delta.begin(), delta.end());
  if (p == Norm::kInf) {
    for (double& v : out) v = std::clamp(v, -epsilon, epsilon);
  } else {
    const double norm = norm_l2(out);
    if (norm > epsilon) {
      const double scale = epsilon / norm;
      for (double& v : out) v *= scale;
    }
  }
  return out;
}

// delta' = clamp(x + delta, lo, hi) - x.
inline Vector clip_to_range(std::span<const double> x, std::span<const double> delta, double lo, double hi) {
  require_size(delta, x.size(), "clip_to_range delta");
  Vector out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = std::clamp(x[j] + delta[j], lo, hi) - x[j];
  return out;
}

// Each coordinate becomes (1 - eta) x + eta e with e ~ U[lo, hi]. eta == 0
// leaves xs untouched and draws nothing.
inline Tensor degrade_future(const Tensor& xs, double eta, double lo, double hi, Rng& rng) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("degrade_future: eta must lie in [0, 1]");
  if (eta == 0.0) return xs;
  Tensor out = xs;
  for (double& v : out.flat()) v = (1.0 - eta) * v + eta * rng.uniform(lo, hi);
  return out;
}

// ------------------------------------------------------- future sources --

namespace source {
struct Greedy {};
// Reads the true future; run_online_attack binds it to the attacked
// sequence when `sequence` is null.
struct Clairvoyant {
  const Tensor* sequence = nullptr;
};
struct Predictive {
  const PredictorModel* predictor = nullptr;
};
struct Iid {
  const IidPool* pool = nullptr;
};
// Test double for a perfect predictor: replays a recorded sequence.
struct OracleDouble {
  Tensor recorded;
};
}  // namespace source

using FutureSource = std::variant<source::Greedy, source::Clairvoyant, source::Predictive, source::Iid,
                                  source::OracleDouble>;

inline std::string source_name(const FutureSource& s) {
  static const char* names[] = {"greedy", "clairvoyant", "predictive", "iid", "oracle"};
  return names[s.index()];
}

// Produces hallucinated futures step by step. Holds the predictor state over
// the observed prefix so it is not recomputed at every step.
class Hallucinator {
 public:
  Hallucinator(const FutureSource& src, std::size_t input_size) : source_(&src), n_(input_size) {
    if (const auto* p = std::get_if<source::Predictive>(&src)) {
      if (p->predictor == nullptr) throw ConfigError("predictive source needs a predictor");
      if (p->predictor->input_size() != n_) throw DimensionError("predictor input size != victim input size");
      stream_.emplace(*p->predictor);
    }
    if (const auto* iid = std::get_if<source::Iid>(&src)) {
      if (iid->pool == nullptr || iid->pool->empty()) throw ConfigError("iid source needs a nonempty input pool");
    }
  }

  // Futures for the window after step t (1-based), given the newest
  // observation x_t. Clairvoyant returns one sample of min(K, L - t) true
  // steps; the oracle double does the same from its recording; the others
  // return mc_samples samples of min(K, horizon - t) steps.
  std::vector<Tensor> futures(std::size_t t, std::span<const double> x_t, std::size_t sequence_length,
                              std::size_t horizon, const AttackConfig& cfg, Rng& rng) const {
    std::vector<Tensor> out;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, source::Greedy>) {
            out.emplace_back(std::vector<std::size_t>{0, n_});
          } else if constexpr (std::is_same_v<T, source::Clairvoyant>) {
            if (s.sequence == nullptr) throw ConfigError("clairvoyant source is not bound to a sequence");
            out.push_back(slice_rows(*s.sequence, t, std::min(cfg.k, sequence_length - t)));
          } else if constexpr (std::is_same_v<T, source::OracleDouble>) {
            const std::size_t avail = s.recorded.rows() > t ? s.recorded.rows() - t : 0;
            const std::size_t k = std::min({cfg.k, horizon - t, avail});
            out.push_back(degrade_future(slice_rows(s.recorded, t, k), cfg.eta, cfg.lo, cfg.hi, rng));
          } else if constexpr (std::is_same_v<T, source::Predictive>) {
            const std::size_t k = std::min(cfg.k, horizon - t);
            PredictorStream fork = *stream_;
            fork.observe(x_t);
            for (std::size_t i = 0; i < cfg.mc_samples; ++i) {
              out.push_back(degrade_future(fork.rollout(k, rng), cfg.eta, cfg.lo, cfg.hi, rng));
            }
          } else {
            const std::size_t k = std::min(cfg.k, horizon - t);
            for (std::size_t i = 0; i < cfg.mc_samples; ++i) {
              Tensor f({k, n_});
              for (std::size_t j = 0; j < k; ++j) {
                const Vector& draw = s.pool->sample(rng);
                require_size(draw, n_, "iid pool entry");
                std::copy(draw.begin(), draw.end(), f.row(j).begin());
              }
              out.push_back(degrade_future(f, cfg.eta, cfg.lo, cfg.hi, rng));
            }
          }
        },
        *source_);
    return out;
  }

  // Advances the predictor state past step t with the input it should be
  // conditioned on (clean x_t, or x_t + delta_t when so configured).
  void observe(std::span<const double> x) {
    if (stream_) stream_->observe(x);
  }

  static Tensor slice_rows(const Tensor& seq, std::size_t first, std::size_t count) {
    Tensor out({count, seq.cols()});
    if (count > 0) std::copy(seq.row(first).begin(), seq.row(first).begin() + count * seq.cols(), out.data());
    return out;
  }

 private:
  const FutureSource* source_;
  std::size_t n_;
  std::optional<PredictorStream> stream_;
};

// Stand-alone form: futures after step t given the clean prefix x_{:t}
// (t x n). `horizon` bounds the window for the non-clairvoyant sources.
inline std::vector<Tensor> hallucinate(const FutureSource& src, const Tensor& prefix, std::size_t sequence_length,
                                       std::size_t horizon, const AttackConfig& cfg, Rng& rng) {
  const std::size_t t = prefix.rows();
  if (t < 1) throw DomainError("hallucinate: t must be >= 1");
  Hallucinator h(src, prefix.cols());
  for (std::size_t i = 0; i + 1 < t; ++i) h.observe(prefix.row(i));
  return h.futures(t, prefix.row(t - 1), sequence_length, horizon, cfg, rng);
}

// ---------------------------------------------------------------- attack --

// Per-step targets known to the attacker. Either schedule may be empty if
// the objective never asks for it; provided schedules share one length, the
// horizon, which must be at least the sequence length.
struct AttackTargets {
  TargetSchedule adversarial;
  TargetSchedule truth;

  std::size_t horizon() const { return std::max(adversarial.size(), truth.size()); }

  gradkit::LossTarget at(std::size_t step, TargetKind kind) const {
    const TargetSchedule& s = kind == TargetKind::kAdversarial ? adversarial : truth;
    if (step < 1 || step > s.size()) {
      throw ConfigError(std::string("attack: no ") + (kind == TargetKind::kAdversarial ? "adversarial" : "true") +
                        " target for step " + std::to_string(step));
    }
    if (!s.labels.empty()) return gradkit::LossTarget::cls(s.labels[step - 1]);
    return gradkit::LossTarget::real(s.values[step - 1]);
  }
};

struct AttackStepInput {
  std::span<const double> x;            // clean x_t
  const HiddenState* state = nullptr;   // perturbed-history state h^delta_t
  std::size_t step = 1;                 // t, 1-based
  std::size_t horizon = 1;              // L for the objective
  const std::vector<Tensor>* futures = nullptr;  // samples x K' x n
};

struct AttackStepResult {
  Vector delta;                // delta_t
  std::vector<Vector> carried;  // delta_{t+1..t+K'}
  double total_loss = 0.0;     // L_total at the last iteration
};

namespace detail {
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Value and input gradient of the MC-averaged aggregated window loss at the
// given deltas. grad is (K'+1) x n.
inline double window_loss(const VictimModel& model, const AttackStepInput& in, const AttackTargets& targets,
                          const ObjectiveSpec& objective, const std::vector<Vector>& deltas, Tensor* grad) {
  const std::size_t n = model.input_size();
  const std::size_t len = deltas.size();
  const auto& futures = *in.futures;
  const double inv_samples = 1.0 / static_cast<double>(futures.size());
  if (grad != nullptr) grad->fill(0.0);
  double total = 0.0;
  Vector losses(len);
  std::vector<gradkit::LossCache> caches(len);
  for (const Tensor& future : futures) {
    Tensor inputs({len, n});
    for (std::size_t j = 0; j < n; ++j) inputs(0, j) = in.x[j] + deltas[0][j];
    for (std::size_t r = 1; r < len; ++r) {
      for (std::size_t j = 0; j < n; ++j) inputs(r, j) = future(r - 1, j) + deltas[r][j];
    }
    VictimTape tape(model, inputs, *in.state);
    for (std::size_t r = 0; r < len; ++r) {
      const std::size_t step = in.step + r;
      auto [loss, cache] = gradkit::loss_forward(model.loss_kind(), tape.outputs().row(r),
                                                 targets.at(step, target_kind(objective, step)));
      losses[r] = loss;
      caches[r] = std::move(cache);
    }
    const Aggregate agg = aggregate(objective, losses, WindowMeta{in.step, in.horizon});
    total += agg.value;
    if (grad == nullptr) continue;
    Tensor d_out({len, model.output_size()});
    for (std::size_t r = 0; r < len; ++r) {
      const Vector d = gradkit::loss_backward(caches[r], agg.weights[r]);
      std::copy(d.begin(), d.end(), d_out.row(r).begin());
    }
    const auto g = tape.backward(d_out);
    for (std::size_t k = 0; k < grad->size(); ++k) (*grad)[k] += g.d_inputs[k];
  }
  if (futures.size() > 1) {
    total *= inv_samples;
    if (grad != nullptr) {
      for (double& v : grad->flat()) v *= inv_samples;
    }
  }
  return total;
}
}  // namespace detail

// max_count iterations of: L_total over [t, t+K'] (MC mean over futures),
// delta_i <- Pi(delta_i - alpha sign(grad_i)), delta_i <- clip(x_i + delta_i) - x_i.
// Future deltas are clipped against the mean hallucinated input.
inline AttackStepResult attack_step(const VictimModel& model, const AttackStepInput& in, const AttackTargets& targets,
                                    const AttackConfig& cfg, const ObjectiveSpec& objective,
                                    std::vector<Vector> delta_init) {
  const std::size_t n = model.input_size();
  require_size(in.x, n, "attack_step x_t");
  if (in.state == nullptr || in.futures == nullptr || in.futures->empty()) {
    throw ContractError("attack_step: state and at least one future sample are required");
  }
  const std::size_t window = (*in.futures)[0].rows() + 1;
  for (const Tensor& f : *in.futures) {
    if (f.rows() + 1 != window || (f.rows() > 0 && f.cols() != n)) {
      throw DimensionError("attack_step: future samples disagree in shape");
    }
  }
  if (delta_init.empty()) delta_init.assign(window, Vector(n, 0.0));
  if (delta_init.size() != window) throw DimensionError("attack_step: delta_init needs K'+1 vectors");
  const double alpha = cfg.effective_alpha();

  // Reference inputs for range clipping.
  std::vector<Vector> anchor(window, Vector(n, 0.0));
  anchor[0].assign(in.x.begin(), in.x.end());
  for (std::size_t r = 1; r < window; ++r) {
    for (const Tensor& f : *in.futures) {
      for (std::size_t j = 0; j < n; ++j) anchor[r][j] += f(r - 1, j);
    }
    if (in.futures->size() > 1) {
      for (double& v : anchor[r]) v /= static_cast<double>(in.futures->size());
    }
  }
  for (const Vector& d : delta_init) {
    require_size(d, n, "attack_step delta_init");
    if ((cfg.p == Norm::kInf ? norm_inf(d) : norm_l2(d)) > cfg.epsilon + 1e-12) {
      throw ContractError("attack_step: delta_init violates the l_p budget");
    }
  }

  std::vector<Vector> deltas = std::move(delta_init);
  Tensor grad({window, n});
  double total = 0.0;
  for (std::size_t iter = 0; iter < cfg.max_count; ++iter) {
    total = detail::window_loss(model, in, targets, objective, deltas, &grad);
    if (!std::isfinite(total) || !grad.all_finite()) {
      throw NumericError("attack_step: non-finite loss or gradient at step " + std::to_string(in.step) +
                         ", iteration " + std::to_string(iter));
    }
    for (std::size_t r = 0; r < window; ++r) {
      Vector moved(n);
      for (std::size_t j = 0; j < n; ++j) moved[j] = deltas[r][j] - alpha * detail::sign(grad(r, j));
      deltas[r] = clip_to_range(anchor[r], project_lp(moved, cfg.epsilon, cfg.p), cfg.lo, cfg.hi);
    }
  }
  AttackStepResult out;
  out.delta = std::move(deltas[0]);
  out.carried.assign(std::make_move_iterator(deltas.begin() + 1), std::make_move_iterator(deltas.end()));
  out.total_loss = total;
  return out;
}

struct TraceStep {
  Vector delta;
  Vector clean_output;
  Vector adv_output;
  double loss = 0.0;  // loss of the adversarial output against its step target
  std::optional<double> hallucination_mse;
  std::size_t lookahead = 0;  // K' actually used
  double wall_time_s = 0.0;
};

struct PerturbationTrace {
  AttackConfig config;
  std::string source;
  std::string objective;
  std::vector<TraceStep> steps;

  std::size_t length() const { return steps.size(); }

  Tensor adv_outputs() const {
    Tensor out({steps.size(), steps.empty() ? 0 : steps[0].adv_output.size()});
    for (std::size_t t = 0; t < steps.size(); ++t) std::copy(steps[t].adv_output.begin(), steps[t].adv_output.end(), out.row(t).begin());
    return out;
  }
  Tensor clean_outputs() const {
    Tensor out({steps.size(), steps.empty() ? 0 : steps[0].clean_output.size()});
    for (std::size_t t = 0; t < steps.size(); ++t) std::copy(steps[t].clean_output.begin(), steps[t].clean_output.end(), out.row(t).begin());
    return out;
  }
  Tensor deltas() const {
    Tensor out({steps.size(), steps.empty() ? 0 : steps[0].delta.size()});
    for (std::size_t t = 0; t < steps.size(); ++t) std::copy(steps[t].delta.begin(), steps[t].delta.end(), out.row(t).begin());
    return out;
  }
};

// Runs the attack over one sequence (L x n), t = 1..L. delta_t depends only
// on x_{:t}, the models, the targets, cfg and the seed (the clairvoyant
// source excepted).
inline PerturbationTrace run_online_attack(const VictimModel& model, const Tensor& sequence,
                                           const AttackTargets& targets, const FutureSource& src,
                                           const AttackConfig& cfg, const ObjectiveSpec& objective) {
  cfg.validate();
  detail::check_sequence(sequence, model.input_size(), "run_online_attack");
  const std::size_t length = sequence.rows(), n = model.input_size();
  const std::size_t horizon = std::max(targets.horizon(), length);
  for (const TargetSchedule* s : {&targets.adversarial, &targets.truth}) {
    if (s->size() != 0 && s->size() != horizon) throw ConfigError("attack: target schedules must share one length >= L");
  }
  validate_objective(objective, horizon);

  FutureSource bound = src;
  if (auto* c = std::get_if<source::Clairvoyant>(&bound); c != nullptr && c->sequence == nullptr) c->sequence = &sequence;
  Hallucinator hallucinator(bound, n);
  Rng rng(cfg.seed);

  const Rollout clean = victim_rollout(model, sequence);
  PerturbationTrace trace{cfg, source_name(src), objective_name(objective), {}};
  trace.steps.reserve(length);
  HiddenState state = HiddenState::zeros(model.hidden_size());
  std::vector<Vector> carried;

  for (std::size_t t = 1; t <= length; ++t) {
    const auto started = std::chrono::steady_clock::now();
    const std::span<const double> x_t = sequence.row(t - 1);
    const std::vector<Tensor> futures = hallucinator.futures(t, x_t, length, horizon, cfg, rng);
    const std::size_t lookahead = futures[0].rows();

    Vector delta(n, 0.0);
    if (cfg.epsilon > 0.0) {
      std::vector<Vector> init(lookahead + 1, Vector(n, 0.0));
      if (cfg.warm_start) {
        for (std::size_t r = 0; r < std::min(carried.size(), lookahead + 1); ++r) {
          init[r] = project_lp(carried[r], cfg.epsilon, cfg.p);
          if (r == 0) init[r] = clip_to_range(x_t, init[r], cfg.lo, cfg.hi);
        }
      }
      AttackStepInput in{x_t, &state, t, horizon, &futures};
      AttackStepResult step = attack_step(model, in, targets, cfg, objective, std::move(init));
      delta = std::move(step.delta);
      carried = std::move(step.carried);
    }

    Vector x_adv(n);
    for (std::size_t j = 0; j < n; ++j) x_adv[j] = x_t[j] + delta[j];
    StepResult out = victim_step(model, x_adv, state);
    state = std::move(out.next);
    hallucinator.observe(cfg.condition_on_perturbed ? std::span<const double>(x_adv) : x_t);

    TraceStep rec;
    rec.lookahead = lookahead;
    const auto target = targets.at(t, target_kind(objective, t));
    rec.loss = gradkit::loss_forward(model.loss_kind(), out.output, target).first;
    rec.delta = std::move(delta);
    rec.clean_output.assign(clean.outputs.row(t - 1).begin(), clean.outputs.row(t - 1).end());
    rec.adv_output = std::move(out.output);
    const std::size_t known = std::min(lookahead, length - t);
    if (known > 0) {
      double se = 0.0;
      for (const Tensor& f : futures) {
        for (std::size_t r = 0; r < known; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            const double d = f(r, j) - sequence(t + r, j);
            se += d * d;
          }
        }
      }
      rec.hallucination_mse = se / static_cast<double>(futures.size() * known * n);
    }
    if (cfg.record_timing) {
      rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    trace.steps.push_back(std::move(rec));
  }
  return trace;
}

struct TransferResult {
  PerturbationTrace surrogate_trace;
  Tensor victim_clean_outputs;
  Tensor victim_adv_outputs;
};

// Gray-box transfer: perturbations are computed against `surrogate` only and
// replayed through `victim`.
inline TransferResult transfer_attack(const VictimModel& surrogate, const VictimModel& victim, const Tensor& sequence,
                                      const AttackTargets& targets, const FutureSource& src, const AttackConfig& cfg,
                                      const ObjectiveSpec& objective) {
  if (surrogate.input_size() != victim.input_size()) throw DimensionError("transfer: surrogate and victim input sizes differ");
  if (surrogate.arch.task != victim.arch.task || surrogate.output_size() != victim.output_size()) {
    throw ConfigError("transfer: surrogate and victim tasks differ");
  }
  TransferResult r{run_online_attack(surrogate, sequence, targets, src, cfg, objective), {}, {}};
  Tensor perturbed = sequence;
  const Tensor deltas = r.surrogate_trace.deltas();
  for (std::size_t k = 0; k < perturbed.size(); ++k) perturbed[k] += deltas[k];
  r.victim_clean_outputs = victim_rollout(victim, sequence).outputs;
  r.victim_adv_outputs = victim_rollout(victim, perturbed).outputs;
  return r;
}

}  // namespace streamraid
