#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "streamraid/errors.hpp"
#include "streamraid/tensor.hpp"

namespace streamraid::metrics {

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax of empty output");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline void check_length(const Tensor& outputs, std::size_t targets, const char* what) {
  if (outputs.rows() != targets) {
    throw DimensionError(std::string(what) + ": " + std::to_string(outputs.rows()) + " outputs vs " +
                         std::to_string(targets) + " targets");
  }
  if (targets == 0) throw DomainError(std::string(what) + ": empty sequence");
}

// Fraction of steps whose predicted class equals the target class.
inline double tasr(const Tensor& logits, std::span<const int> targets) {
  check_length(logits, targets.size(), "tasr");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (argmax(logits.row(t)) == static_cast<std::size_t>(targets[t])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

inline double tmse(const Tensor& values, std::span<const double> targets) {
  check_length(values, targets.size(), "tmse");
  double s = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const double d = values(t, 0) - targets[t];
    s += d * d;
  }
  return s / static_cast<double>(targets.size());
}

// Per-step indicator of a wrong decision against the true labels.
inline std::vector<double> fool_rate_steps(const Tensor& logits, std::span<const int> truth) {
  check_length(logits, truth.size(), "fool_rate");
  std::vector<double> out(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    out[t] = argmax(logits.row(t)) != static_cast<std::size_t>(truth[t]) ? 1.0 : 0.0;
  }
  return out;
}

inline std::vector<double> fool_mse_steps(const Tensor& values, std::span<const double> truth) {
  check_length(values, truth.size(), "fool_mse");
  std::vector<double> out(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const double d = values(t, 0) - truth[t];
    out[t] = d * d;
  }
  return out;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw DomainError("mean of empty range");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double fool_rate(const Tensor& logits, std::span<const int> truth) { return mean(fool_rate_steps(logits, truth)); }
inline double fool_mse(const Tensor& values, std::span<const double> truth) { return mean(fool_mse_steps(values, truth)); }

// max_i |y_i - out_i| - mean_i |y_i - out_i|.
inline double surprise_error(const Tensor& values, std::span<const double> truth) {
  check_length(values, truth.size(), "surprise_error");
  double mx = 0.0, sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const double e = std::abs(truth[t] - values(t, 0));
    mx = std::max(mx, e);
    sum += e;
  }
  return mx - sum / static_cast<double>(truth.size());
}

}  // namespace streamraid::metrics
