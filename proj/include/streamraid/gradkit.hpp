#pragma once

// Paired forward/backward kernels for the small recurrent models used here.
// No tape: every forward returns an explicit cache that its backward consumes
// exactly once. Caches keep a pointer to the parameters they were produced
// with, so parameters must outlive the cache.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamraid/errors.hpp"
#include "streamraid/tensor.hpp"

namespace streamraid::gradkit {

inline double sigmoid(double x) {
  x = std::clamp(x, -500.0, 500.0);
  return 1.0 / (1.0 + std::exp(-x));
}

// ---------------------------------------------------------------- linear --

struct LinearParams {
  Tensor weight;  // out x in
  Tensor bias;    // out

  static LinearParams zeros(std::size_t in, std::size_t out) {
    return {Tensor({out, in}), Tensor({out})};
  }
  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
  friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

struct LinearCache {
  const LinearParams* params = nullptr;
  Vector x;
  bool consumed = false;
};

inline void check_linear(const LinearParams& p) {
  if (p.weight.rank() != 2) throw DimensionError("linear: weight must be a matrix, got " + shape_string(p.weight.shape()));
  if (p.bias.size() != p.weight.rows()) {
    throw DimensionError("linear: bias length " + std::to_string(p.bias.size()) + " != weight rows " +
                         std::to_string(p.weight.rows()));
  }
}

// y = W x + b, written into y (length out).
inline void matvec_bias(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.rows(), cols = w.cols();
  const double* wp = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

inline std::pair<Vector, LinearCache> linear_forward(std::span<const double> x, const LinearParams& p) {
  check_linear(p);
  require_size(x, p.in_features(), "linear input x");
  Vector y(p.out_features());
  matvec_bias(p.weight, p.bias, x, y);
  return {std::move(y), LinearCache{&p, Vector(x.begin(), x.end()), false}};
}

inline void consume(bool& consumed, const void* params, const char* what) {
  if (params == nullptr) throw ContractError(std::string(what) + ": cache was never filled by a forward call");
  if (consumed) throw ContractError(std::string(what) + ": stale cache (backward already ran on it)");
  consumed = true;
}

// Accumulating backward: grad (if non-null) += dW/db, dx is overwritten.
inline void linear_backward_into(LinearCache& cache, std::span<const double> dy, LinearParams* grad,
                                 std::span<double> dx) {
  consume(cache.consumed, cache.params, "linear_backward");
  const LinearParams& p = *cache.params;
  const std::size_t rows = p.out_features(), cols = p.in_features();
  if (dy.size() != rows) throw ContractError("linear_backward: upstream gradient does not match cached forward");
  std::fill(dx.begin(), dx.end(), 0.0);
  const double* wp = p.weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += wr[c] * g;
  }
  if (grad != nullptr) {
    double* gw = grad->weight.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = dy[r];
      grad->bias[r] += g;
      if (g == 0.0) continue;
      double* gr = gw + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gr[c] += g * cache.x[c];
    }
  }
}

struct LinearGrads {
  Vector dx;
  LinearParams dparams;
};

inline LinearGrads linear_backward(LinearCache& cache, std::span<const double> dy) {
  if (cache.params == nullptr) throw ContractError("linear_backward: cache was never filled by a forward call");
  LinearGrads out{Vector(cache.params->in_features()),
                  LinearParams::zeros(cache.params->in_features(), cache.params->out_features())};
  linear_backward_into(cache, dy, &out.dparams, out.dx);
  return out;
}

// ------------------------------------------------------------------ lstm --

// Gate order everywhere: input (i), forget (f), cell candidate (g), output (o).
struct LstmParams {
  Tensor w_ii, w_if, w_ig, w_io;  // hidden x input
  Tensor w_hi, w_hf, w_hg, w_ho;  // hidden x hidden
  Tensor b_i, b_f, b_g, b_o;      // hidden

  static LstmParams zeros(std::size_t input, std::size_t hidden) {
    LstmParams p;
    for (Tensor* t : {&p.w_ii, &p.w_if, &p.w_ig, &p.w_io}) *t = Tensor({hidden, input});
    for (Tensor* t : {&p.w_hi, &p.w_hf, &p.w_hg, &p.w_ho}) *t = Tensor({hidden, hidden});
    for (Tensor* t : {&p.b_i, &p.b_f, &p.b_g, &p.b_o}) *t = Tensor({hidden});
    return p;
  }

  std::size_t input_size() const { return w_ii.cols(); }
  std::size_t hidden_size() const { return w_ii.rows(); }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "w_ii", w_ii); f(prefix + "w_if", w_if); f(prefix + "w_ig", w_ig); f(prefix + "w_io", w_io);
    f(prefix + "w_hi", w_hi); f(prefix + "w_hf", w_hf); f(prefix + "w_hg", w_hg); f(prefix + "w_ho", w_ho);
    f(prefix + "b_i", b_i); f(prefix + "b_f", b_f); f(prefix + "b_g", b_g); f(prefix + "b_o", b_o);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    const_cast<LstmParams*>(this)->for_each(prefix, [&](const std::string& name, Tensor& t) {
      f(name, static_cast<const Tensor&>(t));
    });
  }

  void validate() const {
    const std::size_t m = hidden_size(), n = input_size();
    auto expect = [](const Tensor& t, std::vector<std::size_t> shape, const char* name) {
      if (t.shape() != shape) {
        throw DimensionError(std::string("lstm: ") + name + " has shape " + shape_string(t.shape()) +
                             ", expected " + shape_string(shape));
      }
    };
    expect(w_if, {m, n}, "w_if"); expect(w_ig, {m, n}, "w_ig"); expect(w_io, {m, n}, "w_io");
    expect(w_hi, {m, m}, "w_hi"); expect(w_hf, {m, m}, "w_hf"); expect(w_hg, {m, m}, "w_hg");
    expect(w_ho, {m, m}, "w_ho");
    expect(b_i, {m}, "b_i"); expect(b_f, {m}, "b_f"); expect(b_g, {m}, "b_g"); expect(b_o, {m}, "b_o");
  }
  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

struct LstmCache {
  const LstmParams* params = nullptr;
  Vector x, h, c;               // inputs of the step
  Vector i, f, g, o;            // activated gates
  Vector tanh_c_next;
  bool consumed = false;
};

struct LstmForward {
  Vector h;
  Vector c;
  LstmCache cache;
};

namespace detail {
// out = W_x x + W_h h + b for one gate.
inline void gate_preactivation(const Tensor& wx, const Tensor& wh, const Tensor& b, std::span<const double> x,
                               std::span<const double> h, std::span<double> out) {
  const std::size_t m = wx.rows(), n = wx.cols();
  for (std::size_t r = 0; r < m; ++r) {
    double acc = b[r];
    const double* wxr = wx.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += wxr[c] * x[c];
    const double* whr = wh.data() + r * m;
    for (std::size_t c = 0; c < m; ++c) acc += whr[c] * h[c];
    out[r] = acc;
  }
}

// dx += W_x^T d, dh += W_h^T d, grads += outer products.
inline void gate_backward(const Tensor& wx, const Tensor& wh, std::span<const double> d, std::span<const double> x,
                          std::span<const double> h, std::span<double> dx, std::span<double> dh, Tensor* gwx,
                          Tensor* gwh, Tensor* gb) {
  const std::size_t m = wx.rows(), n = wx.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const double g = d[r];
    if (g == 0.0) continue;
    const double* wxr = wx.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) dx[c] += wxr[c] * g;
    const double* whr = wh.data() + r * m;
    for (std::size_t c = 0; c < m; ++c) dh[c] += whr[c] * g;
  }
  if (gwx == nullptr) return;
  for (std::size_t r = 0; r < m; ++r) {
    const double g = d[r];
    (*gb)[r] += g;
    if (g == 0.0) continue;
    double* gxr = gwx->data() + r * n;
    for (std::size_t c = 0; c < n; ++c) gxr[c] += g * x[c];
    double* ghr = gwh->data() + r * m;
    for (std::size_t c = 0; c < m; ++c) ghr[c] += g * h[c];
  }
}
}  // namespace detail

// i,f,o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
inline LstmForward lstm_cell_forward(std::span<const double> x, std::span<const double> h,
                                     std::span<const double> c, const LstmParams& p) {
  p.validate();
  const std::size_t m = p.hidden_size();
  require_size(x, p.input_size(), "lstm input x");
  require_size(h, m, "lstm hidden h");
  require_size(c, m, "lstm cell c");

  LstmCache cache;
  cache.params = &p;
  cache.x.assign(x.begin(), x.end());
  cache.h.assign(h.begin(), h.end());
  cache.c.assign(c.begin(), c.end());
  cache.i.resize(m); cache.f.resize(m); cache.g.resize(m); cache.o.resize(m);
  detail::gate_preactivation(p.w_ii, p.w_hi, p.b_i, x, h, cache.i);
  detail::gate_preactivation(p.w_if, p.w_hf, p.b_f, x, h, cache.f);
  detail::gate_preactivation(p.w_ig, p.w_hg, p.b_g, x, h, cache.g);
  detail::gate_preactivation(p.w_io, p.w_ho, p.b_o, x, h, cache.o);

  LstmForward out;
  out.h.resize(m);
  out.c.resize(m);
  cache.tanh_c_next.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    cache.i[k] = sigmoid(cache.i[k]);
    cache.f[k] = sigmoid(cache.f[k]);
    cache.g[k] = std::tanh(cache.g[k]);
    cache.o[k] = sigmoid(cache.o[k]);
    out.c[k] = cache.f[k] * c[k] + cache.i[k] * cache.g[k];
    cache.tanh_c_next[k] = std::tanh(out.c[k]);
    out.h[k] = cache.o[k] * cache.tanh_c_next[k];
  }
  out.cache = std::move(cache);
  return out;
}

// Accumulating backward. dx, dh, dc are overwritten; grad (if non-null) is
// accumulated into.
inline void lstm_cell_backward_into(LstmCache& cache, std::span<const double> dh_next,
                                    std::span<const double> dc_next, LstmParams* grad, std::span<double> dx,
                                    std::span<double> dh, std::span<double> dc) {
  consume(cache.consumed, cache.params, "lstm_cell_backward");
  const LstmParams& p = *cache.params;
  const std::size_t m = p.hidden_size();
  if (dh_next.size() != m || dc_next.size() != m) {
    throw ContractError("lstm_cell_backward: upstream gradients do not match cached forward");
  }
  Vector di(m), df(m), dg(m), dout(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double tc = cache.tanh_c_next[k];
    const double dct = dc_next[k] + dh_next[k] * cache.o[k] * (1.0 - tc * tc);
    dout[k] = dh_next[k] * tc * cache.o[k] * (1.0 - cache.o[k]);
    di[k] = dct * cache.g[k] * cache.i[k] * (1.0 - cache.i[k]);
    df[k] = dct * cache.c[k] * cache.f[k] * (1.0 - cache.f[k]);
    dg[k] = dct * cache.i[k] * (1.0 - cache.g[k] * cache.g[k]);
    dc[k] = dct * cache.f[k];
  }
  std::fill(dx.begin(), dx.end(), 0.0);
  std::fill(dh.begin(), dh.end(), 0.0);
  auto g = [&](Tensor LstmParams::*member) { return grad ? &(grad->*member) : nullptr; };
  detail::gate_backward(p.w_ii, p.w_hi, di, cache.x, cache.h, dx, dh, g(&LstmParams::w_ii), g(&LstmParams::w_hi),
                        g(&LstmParams::b_i));
  detail::gate_backward(p.w_if, p.w_hf, df, cache.x, cache.h, dx, dh, g(&LstmParams::w_if), g(&LstmParams::w_hf),
                        g(&LstmParams::b_f));
  detail::gate_backward(p.w_ig, p.w_hg, dg, cache.x, cache.h, dx, dh, g(&LstmParams::w_ig), g(&LstmParams::w_hg),
                        g(&LstmParams::b_g));
  detail::gate_backward(p.w_io, p.w_ho, dout, cache.x, cache.h, dx, dh, g(&LstmParams::w_io),
                        g(&LstmParams::w_ho), g(&LstmParams::b_o));
}

struct LstmGrads {
  Vector dx, dh, dc;
  LstmParams dparams;
};

inline LstmGrads lstm_cell_backward(LstmCache& cache, std::span<const double> dh_next,
                                    std::span<const double> dc_next) {
  if (cache.params == nullptr) throw ContractError("lstm_cell_backward: cache was never filled by a forward call");
  const std::size_t n = cache.params->input_size(), m = cache.params->hidden_size();
  LstmGrads out{Vector(n), Vector(m), Vector(m), LstmParams::zeros(n, m)};
  lstm_cell_backward_into(cache, dh_next, dc_next, &out.dparams, out.dx, out.dh, out.dc);
  return out;
}

// ------------------------------------------------------------------ loss --

enum class LossKind { kCrossEntropy, kMse };

// Class index for cross-entropy, value vector (length 1 broadcasts) for mse.
struct LossTarget {
  int label = -1;
  Vector value;

  static LossTarget cls(int c) { return {c, {}}; }
  static LossTarget real(double v) { return {-1, {v}}; }
};

struct LossCache {
  LossKind kind = LossKind::kMse;
  Vector residual;  // softmax - onehot for CE, 2(pred - target)/k for mse
  bool filled = false;
  bool consumed = false;
};

inline std::pair<double, LossCache> loss_forward(LossKind kind, std::span<const double> input,
                                                 const LossTarget& target) {
  if (input.empty()) throw DimensionError("loss input is empty");
  LossCache cache;
  cache.kind = kind;
  cache.filled = true;
  const std::size_t k = input.size();
  cache.residual.resize(k);
  if (kind == LossKind::kCrossEntropy) {
    if (target.label < 0 || static_cast<std::size_t>(target.label) >= k) {
      throw DomainError("cross_entropy: class label " + std::to_string(target.label) + " outside [0, " +
                        std::to_string(k - 1) + "]");
    }
    const double mx = *std::max_element(input.begin(), input.end());
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(input[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) cache.residual[j] = std::exp(input[j] - log_z);
    cache.residual[static_cast<std::size_t>(target.label)] -= 1.0;
    return {log_z - input[static_cast<std::size_t>(target.label)], std::move(cache)};
  }
  if (target.value.size() != 1 && target.value.size() != k) {
    throw DimensionError("mse: target length " + std::to_string(target.value.size()) + " does not match prediction " +
                         std::to_string(k));
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double d = input[j] - target.value[target.value.size() == 1 ? 0 : j];
    sum += d * d;
    cache.residual[j] = 2.0 * d / static_cast<double>(k);
  }
  return {sum / static_cast<double>(k), std::move(cache)};
}

inline Vector loss_backward(LossCache& cache, double upstream) {
  if (!cache.filled) throw ContractError("loss_backward: cache was never filled by a forward call");
  if (cache.consumed) throw ContractError("loss_backward: stale cache (backward already ran on it)");
  cache.consumed = true;
  Vector d(cache.residual.size());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = upstream * cache.residual[j];
  return d;
}

// ------------------------------------------------------------ grad check --

// Max over coordinates of |analytic - central difference| / max(1, |a|, |n|).
// `value(point)` returns the scalar; `gradient(point)` the analytic gradient.
template <class Value, class Gradient>
double grad_check(Value&& value, Gradient&& gradient, std::span<const double> point, double step) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be positive");
  const Vector analytic = gradient(point);
  require_size(analytic, point.size(), "grad_check analytic gradient");
  Vector probe(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + step;
    const double up = value(std::span<const double>(probe));
    probe[k] = saved - step;
    const double down = value(std::span<const double>(probe));
    probe[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: function is not finite near coordinate " + std::to_string(k));
    }
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

}  // namespace streamraid::gradkit
