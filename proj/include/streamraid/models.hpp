#pragma once

// Victim classifier/regressor (one LSTM + two linear layers) and the
// next-step input predictor, with BPTT tapes, Adam, and trainers.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "streamraid/errors.hpp"
#include "streamraid/gradkit.hpp"
#include "streamraid/rng.hpp"
#include "streamraid/tensor.hpp"

namespace streamraid {

using gradkit::LinearParams;
using gradkit::LstmParams;

enum class Task { kClassification, kRegression };

// Which hidden state the output head reads at step t. kPostUpdate lets
// delta_t move y_t within the same step.
enum class HeadOrdering { kPostUpdate, kPreUpdate };

inline const char* to_string(Task t) { return t == Task::kClassification ? "classification" : "regression"; }
inline const char* to_string(HeadOrdering o) { return o == HeadOrdering::kPostUpdate ? "post_update" : "pre_update"; }

struct HiddenState {
  Vector h;
  Vector c;

  static HiddenState zeros(std::size_t m) { return {Vector(m, 0.0), Vector(m, 0.0)}; }
  friend bool operator==(const HiddenState&, const HiddenState&) = default;
};

namespace detail {
inline void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.flat()) v = rng.uniform(-bound, bound);
}
inline void check_sequence(const Tensor& xs, std::size_t n, const char* what) {
  if (xs.rank() != 2 || xs.rows() == 0) throw DomainError(std::string(what) + ": empty input sequence");
  if (xs.cols() != n) {
    throw DimensionError(std::string(what) + ": input width " + std::to_string(xs.cols()) + " != model input " +
                         std::to_string(n));
  }
}
}  // namespace detail

// ------------------------------------------------------------------ victim --

struct VictimArch {
  std::size_t input = 28;
  std::size_t hidden = 4;
  std::size_t head = 10;
  Task task = Task::kClassification;
  std::size_t classes = 2;  // ignored for regression
  HeadOrdering ordering = HeadOrdering::kPostUpdate;

  std::size_t output_size() const { return task == Task::kClassification ? classes : 1; }
  friend bool operator==(const VictimArch&, const VictimArch&) = default;
};

struct VictimModel {
  VictimArch arch;
  LstmParams lstm;
  LinearParams head1;
  LinearParams head2;

  static VictimModel zeros(const VictimArch& arch) {
    if (arch.task == Task::kClassification && arch.classes < 2) throw ConfigError("victim: classification needs >= 2 classes");
    return {arch, LstmParams::zeros(arch.input, arch.hidden), LinearParams::zeros(arch.hidden, arch.head),
            LinearParams::zeros(arch.head, arch.output_size())};
  }

  // LSTM weights use 1/sqrt(hidden) and linear layers 1/sqrt(in_features),
  // the usual PyTorch convention.
  static VictimModel random(const VictimArch& arch, Rng& rng) {
    VictimModel model = zeros(arch);
    const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    model.lstm.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, lstm_bound, rng); });
    const double b1 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(arch.head));
    model.head1.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, b1, rng); });
    model.head2.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, b2, rng); });
    return model;
  }

  std::size_t input_size() const { return arch.input; }
  std::size_t hidden_size() const { return arch.hidden; }
  std::size_t output_size() const { return arch.output_size(); }
  gradkit::LossKind loss_kind() const {
    return arch.task == Task::kClassification ? gradkit::LossKind::kCrossEntropy : gradkit::LossKind::kMse;
  }

  template <class F>
  void for_each_param(F&& f) {
    lstm.for_each("lstm.", f);
    head1.for_each("head1.", f);
    head2.for_each("head2.", f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<VictimModel*>(this)->for_each_param(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }
  friend bool operator==(const VictimModel&, const VictimModel&) = default;
};

struct StepResult {
  Vector output;
  HiddenState next;
};

inline Vector head_forward(const VictimModel& model, std::span<const double> h) {
  Vector z(model.head1.out_features());
  gradkit::matvec_bias(model.head1.weight, model.head1.bias, h, z);
  for (double& v : z) v = std::max(v, 0.0);
  Vector y(model.head2.out_features());
  gradkit::matvec_bias(model.head2.weight, model.head2.bias, z, y);
  return y;
}

inline StepResult victim_step(const VictimModel& model, std::span<const double> x, const HiddenState& s) {
  auto step = gradkit::lstm_cell_forward(x, s.h, s.c, model.lstm);
  Vector out = head_forward(model, model.arch.ordering == HeadOrdering::kPostUpdate ? step.h : s.h);
  return {std::move(out), HiddenState{std::move(step.h), std::move(step.c)}};
}

struct Rollout {
  Tensor outputs;                   // L x out
  std::vector<HiddenState> states;  // L + 1, states[0] = s0
};

inline Rollout victim_rollout(const VictimModel& model, const Tensor& xs, const HiddenState& s0) {
  detail::check_sequence(xs, model.input_size(), "victim_rollout");
  Rollout r{Tensor({xs.rows(), model.output_size()}), {s0}};
  r.states.reserve(xs.rows() + 1);
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    StepResult step = victim_step(model, xs.row(t), r.states.back());
    std::copy(step.output.begin(), step.output.end(), r.outputs.row(t).begin());
    r.states.push_back(std::move(step.next));
  }
  return r;
}

inline Rollout victim_rollout(const VictimModel& model, const Tensor& xs) {
  return victim_rollout(model, xs, HiddenState::zeros(model.hidden_size()));
}

// Forward pass over a window that keeps every cache, so the gradient of any
// per-step output functional can be pulled back to the inputs, the initial
// state and (optionally) the parameters.
class VictimTape {
 public:
  struct Gradients {
    Tensor d_inputs;  // steps x n
    HiddenState d_initial;
  };

  VictimTape(const VictimModel& model, const Tensor& inputs, const HiddenState& s0) : model_(&model) {
    detail::check_sequence(inputs, model.input_size(), "victim tape");
    const std::size_t steps = inputs.rows();
    outputs_ = Tensor({steps, model.output_size()});
    lstm_.reserve(steps);
    head1_.reserve(steps);
    head2_.reserve(steps);
    relu_.reserve(steps);
    HiddenState s = s0;
    for (std::size_t t = 0; t < steps; ++t) {
      auto step = gradkit::lstm_cell_forward(inputs.row(t), s.h, s.c, model.lstm);
      const Vector& h_read = model.arch.ordering == HeadOrdering::kPostUpdate ? step.h : s.h;
      auto [z, c1] = gradkit::linear_forward(h_read, model.head1);
      Vector mask(z.size());
      for (std::size_t k = 0; k < z.size(); ++k) {
        mask[k] = z[k] > 0.0 ? 1.0 : 0.0;
        z[k] *= mask[k];
      }
      auto [y, c2] = gradkit::linear_forward(z, model.head2);
      std::copy(y.begin(), y.end(), outputs_.row(t).begin());
      lstm_.push_back(std::move(step.cache));
      head1_.push_back(std::move(c1));
      head2_.push_back(std::move(c2));
      relu_.push_back(std::move(mask));
      s = HiddenState{std::move(step.h), std::move(step.c)};
    }
    final_ = std::move(s);
  }

  const Tensor& outputs() const { return outputs_; }
  const HiddenState& final_state() const { return final_; }
  std::size_t steps() const { return outputs_.rows(); }

  // d_outputs: steps x out. param_grads, if given, is accumulated into.
  // A tape can be pulled back once.
  Gradients backward(const Tensor& d_outputs, VictimModel* param_grads = nullptr) {
    const VictimModel& model = *model_;
    const std::size_t steps = outputs_.rows(), n = model.input_size(), m = model.hidden_size();
    if (d_outputs.shape() != outputs_.shape()) throw ContractError("victim tape: d_outputs shape mismatch");
    Gradients g{Tensor({steps, n}), HiddenState::zeros(m)};
    Vector dh(m, 0.0), dc(m, 0.0), dh_read(m), dz(model.head1.out_features()), dh_prev(m), dc_prev(m);
    for (std::size_t t = steps; t-- > 0;) {
      gradkit::linear_backward_into(head2_[t], d_outputs.row(t), param_grads ? &param_grads->head2 : nullptr, dz);
      for (std::size_t k = 0; k < dz.size(); ++k) dz[k] *= relu_[t][k];
      gradkit::linear_backward_into(head1_[t], dz, param_grads ? &param_grads->head1 : nullptr, dh_read);
      if (model.arch.ordering == HeadOrdering::kPostUpdate) {
        for (std::size_t k = 0; k < m; ++k) dh[k] += dh_read[k];
      }
      gradkit::lstm_cell_backward_into(lstm_[t], dh, dc, param_grads ? &param_grads->lstm : nullptr,
                                       g.d_inputs.row(t), dh_prev, dc_prev);
      if (model.arch.ordering == HeadOrdering::kPreUpdate) {
        for (std::size_t k = 0; k < m; ++k) dh_prev[k] += dh_read[k];
      }
      std::swap(dh, dh_prev);
      std::swap(dc, dc_prev);
    }
    g.d_initial = HiddenState{std::move(dh), std::move(dc)};
    return g;
  }

 private:
  const VictimModel* model_;
  Tensor outputs_;
  HiddenState final_;
  std::vector<gradkit::LstmCache> lstm_;
  std::vector<gradkit::LinearCache> head1_, head2_;
  std::vector<Vector> relu_;
};

// --------------------------------------------------------------- predictor --

struct PredictorArch {
  std::size_t input = 28;
  std::size_t hidden = 128;
  std::size_t head = 150;
  double dropout = 0.3;
  bool stochastic_at_inference = false;
  double range_lo = 0.0;
  double range_hi = 1.0;
  friend bool operator==(const PredictorArch&, const PredictorArch&) = default;
};

struct PredictorModel {
  PredictorArch arch;
  LstmParams lstm;
  LinearParams head1;
  LinearParams head2;

  static PredictorModel zeros(const PredictorArch& arch) {
    if (!(arch.dropout >= 0.0 && arch.dropout < 1.0)) throw ConfigError("predictor: dropout must be in [0, 1)");
    return {arch, LstmParams::zeros(arch.input, arch.hidden), LinearParams::zeros(arch.hidden, arch.head),
            LinearParams::zeros(arch.head, arch.input)};
  }

  static PredictorModel random(const PredictorArch& arch, Rng& rng) {
    PredictorModel model = zeros(arch);
    const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    model.lstm.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, lstm_bound, rng); });
    const double b1 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(arch.head));
    model.head1.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, b1, rng); });
    model.head2.for_each("", [&](const std::string&, Tensor& t) { detail::init_uniform(t, b2, rng); });
    return model;
  }

  std::size_t input_size() const { return arch.input; }
  std::size_t hidden_size() const { return arch.hidden; }

  template <class F>
  void for_each_param(F&& f) {
    lstm.for_each("lstm.", f);
    head1.for_each("head1.", f);
    head2.for_each("head2.", f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<PredictorModel*>(this)->for_each_param(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }
  friend bool operator==(const PredictorModel&, const PredictorModel&) = default;
};

// Inverted-dropout mask: entries are 0 or 1/(1-rate). Empty means identity.
inline Vector dropout_mask(std::size_t size, double rate, Rng& rng) {
  Vector mask(size);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask) v = rng.bernoulli(rate) ? 0.0 : keep;
  return mask;
}

// Linear -> dropout -> ReLU -> linear, on the post-update hidden state.
inline Vector predictor_head(const PredictorModel& q, std::span<const double> h, const Vector* mask) {
  Vector z(q.head1.out_features());
  gradkit::matvec_bias(q.head1.weight, q.head1.bias, h, z);
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (mask != nullptr) z[k] *= (*mask)[k];
    z[k] = std::max(z[k], 0.0);
  }
  Vector y(q.head2.out_features());
  gradkit::matvec_bias(q.head2.weight, q.head2.bias, z, y);
  return y;
}

// Incrementally consumes an observed stream and forks autoregressive
// rollouts from the current state. Dropout only touches the head, so the
// recurrent state is deterministic regardless of stochastic inference.
class PredictorStream {
 public:
  explicit PredictorStream(const PredictorModel& q) : q_(&q), state_(HiddenState::zeros(q.hidden_size())) {}

  void observe(std::span<const double> x) {
    auto step = gradkit::lstm_cell_forward(x, state_.h, state_.c, q_->lstm);
    state_ = HiddenState{std::move(step.h), std::move(step.c)};
    ++observed_;
  }

  std::size_t observed() const { return observed_; }
  const HiddenState& state() const { return state_; }

  // One hallucinated future of K steps (K x n), clamped to the input range.
  Tensor rollout(std::size_t k, Rng& rng) const {
    const PredictorModel& q = *q_;
    const std::size_t n = q.input_size();
    Tensor future({k, n});
    if (k == 0) return future;
    if (observed_ == 0) throw DomainError("predictor rollout: prefix must contain at least one step");
    HiddenState s = state_;
    for (std::size_t j = 0; j < k; ++j) {
      std::optional<Vector> mask;
      if (q.arch.stochastic_at_inference && q.arch.dropout > 0.0) mask = dropout_mask(q.arch.head, q.arch.dropout, rng);
      Vector y = predictor_head(q, s.h, mask ? &*mask : nullptr);
      for (double& v : y) v = std::clamp(v, q.arch.range_lo, q.arch.range_hi);
      std::copy(y.begin(), y.end(), future.row(j).begin());
      if (j + 1 < k) {
        auto step = gradkit::lstm_cell_forward(y, s.h, s.c, q.lstm);
        s = HiddenState{std::move(step.h), std::move(step.c)};
      }
    }
    return future;
  }

 private:
  const PredictorModel* q_;
  HiddenState state_;
  std::size_t observed_ = 0;
};

// `samples` hallucinated futures of K steps following `prefix` (t x n).
inline std::vector<Tensor> predictor_rollout(const PredictorModel& q, const Tensor& prefix, long k,
                                             std::size_t samples, Rng& rng) {
  if (k < 0) throw DomainError("predictor_rollout: K must be >= 0");
  if (samples < 1) throw DomainError("predictor_rollout: samples must be >= 1");
  std::vector<Tensor> out;
  if (k == 0) {
    out.assign(samples, Tensor({0, q.input_size()}));
    return out;
  }
  detail::check_sequence(prefix, q.input_size(), "predictor_rollout");
  PredictorStream stream(q);
  for (std::size_t t = 0; t < prefix.rows(); ++t) stream.observe(prefix.row(t));
  for (std::size_t s = 0; s < samples; ++s) out.push_back(stream.rollout(static_cast<std::size_t>(k), rng));
  return out;
}

// Teacher-forced tape: row t of `inputs` predicts row t+1.
class PredictorTape {
 public:
  PredictorTape(const PredictorModel& q, const Tensor& inputs, Rng* dropout_rng) : q_(&q) {
    detail::check_sequence(inputs, q.input_size(), "predictor tape");
    const std::size_t steps = inputs.rows();
    outputs_ = Tensor({steps, q.input_size()});
    HiddenState s = HiddenState::zeros(q.hidden_size());
    for (std::size_t t = 0; t < steps; ++t) {
      auto step = gradkit::lstm_cell_forward(inputs.row(t), s.h, s.c, q.lstm);
      auto [z, c1] = gradkit::linear_forward(step.h, q.head1);
      Vector mask = dropout_rng != nullptr && q.arch.dropout > 0.0 ? dropout_mask(z.size(), q.arch.dropout, *dropout_rng)
                                                                  : Vector(z.size(), 1.0);
      for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] *= mask[k];
        if (z[k] <= 0.0) {
          z[k] = 0.0;
          mask[k] = 0.0;
        }
      }
      auto [y, c2] = gradkit::linear_forward(z, q.head2);
      std::copy(y.begin(), y.end(), outputs_.row(t).begin());
      lstm_.push_back(std::move(step.cache));
      head1_.push_back(std::move(c1));
      head2_.push_back(std::move(c2));
      mask_.push_back(std::move(mask));
      s = HiddenState{std::move(step.h), std::move(step.c)};
    }
  }

  const Tensor& outputs() const { return outputs_; }

  Tensor backward(const Tensor& d_outputs, PredictorModel* param_grads = nullptr) {
    const PredictorModel& q = *q_;
    const std::size_t steps = outputs_.rows(), m = q.hidden_size();
    if (d_outputs.shape() != outputs_.shape()) throw ContractError("predictor tape: d_outputs shape mismatch");
    Tensor d_inputs({steps, q.input_size()});
    Vector dh(m, 0.0), dc(m, 0.0), dh_head(m), dz(q.head1.out_features()), dh_prev(m), dc_prev(m);
    for (std::size_t t = steps; t-- > 0;) {
      gradkit::linear_backward_into(head2_[t], d_outputs.row(t), param_grads ? &param_grads->head2 : nullptr, dz);
      for (std::size_t k = 0; k < dz.size(); ++k) dz[k] *= mask_[t][k];
      gradkit::linear_backward_into(head1_[t], dz, param_grads ? &param_grads->head1 : nullptr, dh_head);
      for (std::size_t k = 0; k < m; ++k) dh[k] += dh_head[k];
      gradkit::lstm_cell_backward_into(lstm_[t], dh, dc, param_grads ? &param_grads->lstm : nullptr, d_inputs.row(t),
                                       dh_prev, dc_prev);
      std::swap(dh, dh_prev);
      std::swap(dc, dc_prev);
    }
    return d_inputs;
  }

 private:
  const PredictorModel* q_;
  Tensor outputs_;
  std::vector<gradkit::LstmCache> lstm_;
  std::vector<gradkit::LinearCache> head1_, head2_;
  std::vector<Vector> mask_;  // combined dropout * relu gate
};

// -------------------------------------------------------------------- adam --

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <class Model>
  void step(Model& params, const Model& grads) {
    std::vector<Tensor*> p;
    std::vector<const Tensor*> g;
    params.for_each_param([&](const std::string&, Tensor& t) { p.push_back(&t); });
    grads.for_each_param([&](const std::string&, const Tensor& t) { g.push_back(&t); });
    if (first_.empty()) {
      for (Tensor* t : p) {
        first_.emplace_back(t->shape());
        second_.emplace_back(t->shape());
      }
    }
    if (first_.size() != p.size()) throw ContractError("adam: parameter set changed between steps");
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      double* w = p[k]->data();
      const double* d = g[k]->data();
      double* m1 = first_[k].data();
      double* m2 = second_[k].data();
      for (std::size_t j = 0; j < p[k]->size(); ++j) {
        m1[j] = beta1_ * m1[j] + (1.0 - beta1_) * d[j];
        m2[j] = beta2_ * m2[j] + (1.0 - beta2_) * d[j] * d[j];
        w[j] -= lr_ * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + eps_);
      }
    }
  }

  long steps() const { return steps_; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<Tensor> first_, second_;
};

template <class Model>
void scale_params(Model& model, double factor) {
  model.for_each_param([&](const std::string&, Tensor& t) {
    for (double& v : t.flat()) v *= factor;
  });
}

}  // namespace streamraid
