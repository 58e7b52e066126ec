#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "streamraid/streamraid.hpp"

namespace streamraid::testing {

inline void randomize(Tensor& t, Rng& rng, double scale = 0.5) {
  for (double& v : t.flat()) v = rng.uniform(-scale, scale);
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 0.5) {
  Tensor t(std::move(shape));
  randomize(t, rng, scale);
  return t;
}

inline Vector random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_sequence(std::size_t length, std::size_t n, Rng& rng) {
  Tensor t({length, n});
  for (double& v : t.flat()) v = rng.uniform();
  return t;
}

inline gradkit::LstmParams random_lstm(std::size_t n, std::size_t m, Rng& rng) {
  gradkit::LstmParams p = gradkit::LstmParams::zeros(n, m);
  p.for_each("", [&](const std::string&, Tensor& t) { randomize(t, rng); });
  return p;
}

template <class Model>
std::vector<Tensor*> param_list(Model& model) {
  std::vector<Tensor*> out;
  model.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

template <class Model>
Vector flatten_params(const Model& model) {
  Vector out;
  model.for_each_param([&](const std::string&, const Tensor& t) { out.insert(out.end(), t.flat().begin(), t.flat().end()); });
  return out;
}

template <class Model>
void unflatten_params(Model& model, std::span<const double> flat) {
  std::size_t k = 0;
  model.for_each_param([&](const std::string&, Tensor& t) {
    for (double& v : t.flat()) v = flat[k++];
  });
}

// Independent scalar-loop LSTM cell, gate order i, f, g, o.
struct ScalarLstm {
  std::vector<double> h, c;
};

inline ScalarLstm scalar_lstm(const gradkit::LstmParams& p, const Vector& x, const Vector& h, const Vector& c) {
  const std::size_t m = p.hidden_size(), n = p.input_size();
  auto pre = [&](const Tensor& wx, const Tensor& wh, const Tensor& b, std::size_t r) {
    double s = b[r];
    for (std::size_t j = 0; j < n; ++j) s += wx(r, j) * x[j];
    for (std::size_t j = 0; j < m; ++j) s += wh(r, j) * h[j];
    return s;
  };
  ScalarLstm out{Vector(m), Vector(m)};
  for (std::size_t r = 0; r < m; ++r) {
    const double i = 1.0 / (1.0 + std::exp(-pre(p.w_ii, p.w_hi, p.b_i, r)));
    const double f = 1.0 / (1.0 + std::exp(-pre(p.w_if, p.w_hf, p.b_f, r)));
    const double g = std::tanh(pre(p.w_ig, p.w_hg, p.b_g, r));
    const double o = 1.0 / (1.0 + std::exp(-pre(p.w_io, p.w_ho, p.b_o, r)));
    out.c[r] = f * c[r] + i * g;
    out.h[r] = o * std::tanh(out.c[r]);
  }
  return out;
}

// Monolithic whole-sequence victim forward built from scalar loops only.
inline Tensor reference_victim_outputs(const VictimModel& model, const Tensor& xs) {
  const std::size_t m = model.hidden_size();
  Vector h(m, 0.0), c(m, 0.0);
  Tensor out({xs.rows(), model.output_size()});
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    const Vector x(xs.row(t).begin(), xs.row(t).end());
    const ScalarLstm next = scalar_lstm(model.lstm, x, h, c);
    const Vector& read = model.arch.ordering == HeadOrdering::kPostUpdate ? next.h : h;
    Vector z(model.head1.out_features());
    for (std::size_t r = 0; r < z.size(); ++r) {
      double s = model.head1.bias[r];
      for (std::size_t j = 0; j < m; ++j) s += model.head1.weight(r, j) * read[j];
      z[r] = s > 0.0 ? s : 0.0;
    }
    for (std::size_t r = 0; r < model.output_size(); ++r) {
      double s = model.head2.bias[r];
      for (std::size_t j = 0; j < z.size(); ++j) s += model.head2.weight(r, j) * z[j];
      out(t, r) = s;
    }
    h = next.h;
    c = next.c;
  }
  return out;
}

// Small fully-specified classification dataset of random sequences.
inline SequenceDataset toy_classification(std::size_t count, std::size_t length, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SequenceDataset ds;
  ds.meta = DatasetMeta{"toy", n, length, Task::kClassification, 2, 0.0, 1.0};
  for (std::size_t s = 0; s < count; ++s) {
    ds.inputs.push_back(random_sequence(length, n, rng));
    ds.labels.push_back(std::vector<int>(length, static_cast<int>(s % 2)));
  }
  return ds;
}

}  // namespace streamraid::testing
