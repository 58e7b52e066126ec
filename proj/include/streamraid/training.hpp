#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "streamraid/datasets.hpp"
#include "streamraid/errors.hpp"
#include "streamraid/gradkit.hpp"
#include "streamraid/models.hpp"
#include "streamraid/rng.hpp"

namespace streamraid {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct CleanMetrics {
  double loss = 0.0;              // mean per-step loss
  double accuracy = 0.0;          // mean per-step accuracy (classification)
  double final_step_accuracy = 0.0;
  double mse = 0.0;               // mean per-step squared error (regression)
};

struct VictimTraining {
  VictimModel model;
  std::vector<double> batch_losses;  // mean per-step loss of every update
  CleanMetrics initial;
  CleanMetrics final;
};

namespace detail {
inline gradkit::LossTarget step_target(const SequenceDataset& ds, std::size_t seq, std::size_t t) {
  if (ds.meta.task == Task::kClassification) return gradkit::LossTarget::cls(ds.labels[seq][t]);
  return gradkit::LossTarget::real(ds.values[seq][t]);
}

inline void check_supervised(const SequenceDataset& ds) {
  if (ds.empty()) throw DomainError("training: empty dataset");
  if (ds.meta.task == Task::kClassification && ds.labels.size() != ds.size()) {
    throw DataError("training: classification dataset lacks labels");
  }
  if (ds.meta.task == Task::kRegression && ds.values.size() != ds.size()) {
    throw DataError("training: regression dataset lacks target values");
  }
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Adds the gradient of the mean per-step loss (times `scale`) of one
// sequence into grads. Returns the mean per-step loss.
inline double victim_sequence_grad(const VictimModel& model, const SequenceDataset& ds, std::size_t seq, double scale,
                                   VictimModel* grads) {
  VictimTape tape(model, ds.inputs[seq], HiddenState::zeros(model.hidden_size()));
  const std::size_t steps = tape.steps();
  Tensor d_out({steps, model.output_size()});
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    auto [loss, cache] = gradkit::loss_forward(model.loss_kind(), tape.outputs().row(t), step_target(ds, seq, t));
    total += loss;
    const Vector d = gradkit::loss_backward(cache, scale / static_cast<double>(steps));
    std::copy(d.begin(), d.end(), d_out.row(t).begin());
  }
  if (grads != nullptr) tape.backward(d_out, grads);
  return total / static_cast<double>(steps);
}
}  // namespace detail

inline CleanMetrics evaluate_victim(const VictimModel& model, const SequenceDataset& ds) {
  detail::check_supervised(ds);
  CleanMetrics m;
  std::size_t steps_total = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const Rollout r = victim_rollout(model, ds.inputs[s]);
    const std::size_t steps = r.outputs.rows();
    for (std::size_t t = 0; t < steps; ++t) {
      auto [loss, cache] = gradkit::loss_forward(model.loss_kind(), r.outputs.row(t), detail::step_target(ds, s, t));
      m.loss += loss;
      if (ds.meta.task == Task::kClassification) {
        const bool hit = detail::argmax(r.outputs.row(t)) == static_cast<std::size_t>(ds.labels[s][t]);
        m.accuracy += hit ? 1.0 : 0.0;
        if (t + 1 == steps) m.final_step_accuracy += hit ? 1.0 : 0.0;
      } else {
        const double d = r.outputs(t, 0) - ds.values[s][t];
        m.mse += d * d;
      }
    }
    steps_total += steps;
  }
  m.loss /= static_cast<double>(steps_total);
  m.accuracy /= static_cast<double>(steps_total);
  m.mse /= static_cast<double>(steps_total);
  m.final_step_accuracy /= static_cast<double>(ds.size());
  return m;
}

// Minibatch Adam on the mean per-step loss. Bit-reproducible for a fixed
// seed: the seed drives initialization and the per-epoch shuffles.
inline VictimTraining train_victim(const SequenceDataset& data, const VictimArch& arch, const TrainConfig& cfg) {
  detail::check_supervised(data);
  if (arch.input != data.meta.n) throw DimensionError("train_victim: architecture input != dataset n");
  if (arch.task != data.meta.task) throw ConfigError("train_victim: architecture task != dataset task");
  if (cfg.batch == 0) throw ConfigError("train_victim: batch must be >= 1");
  Rng rng(cfg.seed);
  VictimTraining out{VictimModel::random(arch, rng), {}, {}, {}};
  out.initial = evaluate_victim(out.model, data);
  Adam adam(cfg.lr);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, order.size() - first);
      VictimModel grads = VictimModel::zeros(arch);
      double loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        loss += detail::victim_sequence_grad(out.model, data, order[first + b], 1.0 / static_cast<double>(count), &grads);
      }
      adam.step(out.model, grads);
      out.batch_losses.push_back(loss / static_cast<double>(count));
    }
  }
  out.final = evaluate_victim(out.model, data);
  return out;
}

struct PredictorTraining {
  PredictorModel model;
  std::vector<double> batch_losses;
  double train_mse = 0.0;       // deterministic teacher-forced next-step MSE
  double validation_mse = 0.0;  // same on the validation split (train if none)
};

namespace detail {
inline void require_next_step_data(const SequenceDataset& ds) {
  if (ds.empty()) throw DomainError("train_predictor: empty dataset");
  for (const Tensor& seq : ds.inputs) {
    if (seq.rows() < 2) throw DomainError("train_predictor: sequences must have length >= 2");
  }
}

inline Tensor drop_last_row(const Tensor& seq) {
  Tensor out({seq.rows() - 1, seq.cols()});
  std::copy(seq.data(), seq.data() + out.size(), out.data());
  return out;
}

// Mean over steps of the per-step MSE (averaged over features).
inline double predictor_sequence_grad(const PredictorModel& q, const Tensor& seq, double scale, Rng* dropout_rng,
                                      PredictorModel* grads) {
  const Tensor inputs = drop_last_row(seq);
  PredictorTape tape(q, inputs, dropout_rng);
  const std::size_t steps = inputs.rows(), n = q.input_size();
  Tensor d_out({steps, n});
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = tape.outputs()(t, j) - seq(t + 1, j);
      total += d * d;
      d_out(t, j) = scale * 2.0 * d / static_cast<double>(n * steps);
    }
  }
  if (grads != nullptr) tape.backward(d_out, grads);
  return total / static_cast<double>(n * steps);
}
}  // namespace detail

inline double evaluate_predictor(const PredictorModel& q, const SequenceDataset& ds) {
  detail::require_next_step_data(ds);
  double total = 0.0;
  for (const Tensor& seq : ds.inputs) total += detail::predictor_sequence_grad(q, seq, 0.0, nullptr, nullptr);
  return total / static_cast<double>(ds.size());
}

// Open-loop rollout MSE: observe the first `prefix` steps of each sequence,
// roll the predictor forward over the rest and compare with the truth.
inline double open_loop_mse(const PredictorModel& q, const SequenceDataset& ds, std::size_t prefix,
                            std::uint64_t seed = 0) {
  detail::require_next_step_data(ds);
  Rng rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (const Tensor& seq : ds.inputs) {
    const std::size_t p = std::clamp<std::size_t>(prefix, 1, seq.rows() - 1);
    Tensor head({p, seq.cols()});
    std::copy(seq.data(), seq.data() + head.size(), head.data());
    const Tensor future = predictor_rollout(q, head, static_cast<long>(seq.rows() - p), 1, rng)[0];
    for (std::size_t r = 0; r < future.rows(); ++r) {
      for (std::size_t j = 0; j < seq.cols(); ++j) {
        const double d = future(r, j) - seq(p + r, j);
        total += d * d;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// Teacher-forced next-step MSE training with dropout active.
inline PredictorTraining train_predictor(const SequenceDataset& data, const PredictorArch& arch,
                                         const TrainConfig& cfg, const SequenceDataset* validation = nullptr) {
  detail::require_next_step_data(data);
  if (arch.input != data.meta.n) throw DimensionError("train_predictor: architecture input != dataset n");
  if (cfg.batch == 0) throw ConfigError("train_predictor: batch must be >= 1");
  Rng rng(cfg.seed);
  PredictorTraining out{PredictorModel::random(arch, rng), {}, 0.0, 0.0};
  Adam adam(cfg.lr);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, order.size() - first);
      PredictorModel grads = PredictorModel::zeros(arch);
      double loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        loss += detail::predictor_sequence_grad(out.model, data.inputs[order[first + b]],
                                                1.0 / static_cast<double>(count), &rng, &grads);
      }
      adam.step(out.model, grads);
      out.batch_losses.push_back(loss / static_cast<double>(count));
    }
  }
  out.train_mse = evaluate_predictor(out.model, data);
  out.validation_mse = validation != nullptr ? evaluate_predictor(out.model, *validation) : out.train_mse;
  return out;
}

}  // namespace streamraid
