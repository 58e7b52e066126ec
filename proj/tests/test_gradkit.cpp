#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace streamraid;
using namespace streamraid::gradkit;
using streamraid::testing::random_lstm;
using streamraid::testing::random_tensor;
using streamraid::testing::random_vector;
using streamraid::testing::scalar_lstm;
using streamraid::testing::ScalarLstm;

namespace {

// Scalar probe: sum_k w_k * v_k.
double probe(const Vector& w, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += w[k] * v[k];
  return s;
}

}  // namespace

TEST(Sigmoid, ClampsExtremeInputs) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_TRUE(std::isfinite(sigmoid(-1e6)));
  EXPECT_EQ(sigmoid(-1e6), sigmoid(-500.0));
  EXPECT_EQ(sigmoid(1e6), 1.0);
}

TEST(LinearForward, IdentityCase) {
  LinearParams p{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0})};
  auto [y, cache] = linear_forward(Vector{3, 4}, p);
  EXPECT_EQ(y, (Vector{3, 4}));
}

TEST(LinearForward, SingleRow) {
  LinearParams p{Tensor::matrix(1, 2, {1, 2}), Tensor::vector({1})};
  auto [y, cache] = linear_forward(Vector{1, 1}, p);
  EXPECT_EQ(y, (Vector{4}));
}

TEST(LinearForward, MatchesDoubleLoopMatvec) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.index(5), n = 1 + rng.index(5);
    LinearParams p{random_tensor({k, n}, rng), random_tensor({k}, rng)};
    const Vector x = random_vector(n, rng);
    auto [y, cache] = linear_forward(x, p);
    for (std::size_t r = 0; r < k; ++r) {
      double s = p.bias[r];
      for (std::size_t j = 0; j < n; ++j) s += p.weight(r, j) * x[j];
      EXPECT_NEAR(y[r], s, 1e-12);
    }
  }
}

TEST(LinearForward, ShapeMismatchNamesOperand) {
  LinearParams p = LinearParams::zeros(3, 2);
  try {
    linear_forward(Vector{1, 2}, p);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("linear input x"), std::string::npos);
  }
}

TEST(LinearBackward, IdentityPassesGradientThrough) {
  LinearParams p{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0})};
  auto [y, cache] = linear_forward(Vector{5, 6}, p);
  const LinearGrads g = linear_backward(cache, Vector{1, 0});
  EXPECT_EQ(g.dx, (Vector{1, 0}));
}

TEST(LinearBackward, HandCase) {
  LinearParams p = LinearParams::zeros(2, 1);
  auto [y, cache] = linear_forward(Vector{1, 1}, p);
  const LinearGrads g = linear_backward(cache, Vector{2});
  EXPECT_EQ(g.dparams.weight.values(), (std::vector<double>{2, 2}));
  EXPECT_EQ(g.dparams.bias.values(), (std::vector<double>{2}));
}

TEST(LinearBackward, DxIsTransposeProduct) {
  Rng rng(3);
  LinearParams p{random_tensor({4, 3}, rng), random_tensor({4}, rng)};
  auto [y, cache] = linear_forward(random_vector(3, rng), p);
  const Vector dy = random_vector(4, rng);
  const LinearGrads g = linear_backward(cache, dy);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) s += p.weight(r, j) * dy[r];
    EXPECT_NEAR(g.dx[j], s, 1e-12);
  }
}

TEST(LinearBackward, MatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = 1 + rng.index(4), n = 1 + rng.index(4);
    LinearParams p{random_tensor({k, n}, rng), random_tensor({k}, rng)};
    const Vector x = random_vector(n, rng), w = random_vector(k, rng);
    auto value_x = [&](std::span<const double> xx) { return probe(w, linear_forward(xx, p).first); };
    auto grad_x = [&](std::span<const double> xx) {
      auto [y, cache] = linear_forward(xx, p);
      return linear_backward(cache, w).dx;
    };
    EXPECT_LT(grad_check(value_x, grad_x, x, 1e-5), 1e-6);

    auto value_w = [&](std::span<const double> ww) {
      LinearParams q = p;
      std::copy(ww.begin(), ww.end(), q.weight.data());
      return probe(w, linear_forward(x, q).first);
    };
    auto grad_w = [&](std::span<const double>) {
      auto [y, cache] = linear_forward(x, p);
      return linear_backward(cache, w).dparams.weight.values();
    };
    EXPECT_LT(grad_check(value_w, grad_w, p.weight.flat(), 1e-5), 1e-6);

    auto value_b = [&](std::span<const double> bb) {
      LinearParams q = p;
      std::copy(bb.begin(), bb.end(), q.bias.data());
      return probe(w, linear_forward(x, q).first);
    };
    auto grad_b = [&](std::span<const double>) {
      auto [y, cache] = linear_forward(x, p);
      return linear_backward(cache, w).dparams.bias.values();
    };
    EXPECT_LT(grad_check(value_b, grad_b, p.bias.flat(), 1e-5), 1e-6);
  }
}

TEST(LinearBackward, StaleCacheIsAContractError) {
  LinearParams p = LinearParams::zeros(2, 2);
  auto [y, cache] = linear_forward(Vector{1, 2}, p);
  linear_backward(cache, Vector{1, 1});
  EXPECT_THROW(linear_backward(cache, Vector{1, 1}), ContractError);
  LinearCache empty;
  EXPECT_THROW(linear_backward(empty, Vector{1, 1}), ContractError);
  auto [y2, fresh] = linear_forward(Vector{1, 2}, p);
  EXPECT_THROW(linear_backward(fresh, Vector{1, 1, 1}), ContractError);
}

TEST(LstmForward, AllZeroParameters) {
  const LstmParams p = LstmParams::zeros(2, 3);
  const LstmForward f = lstm_cell_forward(Vector{0, 0}, Vector(3, 0.0), Vector(3, 0.0), p);
  EXPECT_EQ(f.h, Vector(3, 0.0));
  EXPECT_EQ(f.c, Vector(3, 0.0));
  EXPECT_EQ(f.cache.i, Vector(3, 0.5));
  EXPECT_EQ(f.cache.f, Vector(3, 0.5));
  EXPECT_EQ(f.cache.o, Vector(3, 0.5));
  EXPECT_EQ(f.cache.g, Vector(3, 0.0));
}

TEST(LstmForward, ForgetGateHalvesCell) {
  const LstmParams p = LstmParams::zeros(1, 1);
  const LstmForward f = lstm_cell_forward(Vector{0.7}, Vector{0.0}, Vector{2.0}, p);
  EXPECT_DOUBLE_EQ(f.c[0], 1.0);
  EXPECT_NEAR(f.h[0], 0.5 * std::tanh(1.0), 1e-15);
  EXPECT_NEAR(f.h[0], 0.3808, 1e-4);
}

TEST(LstmForward, MatchesScalarLoopReference) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(6), m = 1 + rng.index(5);
    const LstmParams p = random_lstm(n, m, rng);
    const Vector x = random_vector(n, rng), h = random_vector(m, rng), c = random_vector(m, rng);
    const LstmForward f = lstm_cell_forward(x, h, c, p);
    const ScalarLstm ref = scalar_lstm(p, x, h, c);
    for (std::size_t r = 0; r < m; ++r) {
      EXPECT_NEAR(f.h[r], ref.h[r], 1e-12);
      EXPECT_NEAR(f.c[r], ref.c[r], 1e-12);
    }
  }
}

TEST(LstmForward, RepeatedCallsAreBitIdentical) {
  Rng rng(9);
  const LstmParams p = random_lstm(3, 2, rng);
  const Vector x = random_vector(3, rng), h = random_vector(2, rng), c = random_vector(2, rng);
  const LstmForward a = lstm_cell_forward(x, h, c, p), b = lstm_cell_forward(x, h, c, p);
  EXPECT_EQ(a.h, b.h);
  EXPECT_EQ(a.c, b.c);
}

TEST(LstmForward, RejectsMismatchedShapes) {
  const LstmParams p = LstmParams::zeros(2, 3);
  EXPECT_THROW(lstm_cell_forward(Vector{0, 0, 0}, Vector(3, 0.0), Vector(3, 0.0), p), DimensionError);
  EXPECT_THROW(lstm_cell_forward(Vector{0, 0}, Vector(2, 0.0), Vector(3, 0.0), p), DimensionError);
  LstmParams bad = p;
  bad.w_hf = Tensor({3, 2});
  EXPECT_THROW(lstm_cell_forward(Vector{0, 0}, Vector(3, 0.0), Vector(3, 0.0), bad), DimensionError);
}

TEST(LstmBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  const LstmParams p = random_lstm(3, 2, rng);
  LstmForward f = lstm_cell_forward(random_vector(3, rng), random_vector(2, rng), random_vector(2, rng), p);
  const LstmGrads g = lstm_cell_backward(f.cache, Vector(2, 0.0), Vector(2, 0.0));
  EXPECT_EQ(g.dx, Vector(3, 0.0));
  EXPECT_EQ(g.dh, Vector(2, 0.0));
  EXPECT_EQ(g.dc, Vector(2, 0.0));
  g.dparams.for_each("", [](const std::string&, const Tensor& t) {
    for (double v : t.flat()) EXPECT_EQ(v, 0.0);
  });
}

TEST(LstmBackward, ScalarHandCase) {
  const LstmParams p = LstmParams::zeros(1, 1);
  const double c0 = 0.8, dh_next = 0.3, dc_next = -0.2;
  LstmForward f = lstm_cell_forward(Vector{0.4}, Vector{0.1}, Vector{c0}, p);
  const double c1 = f.c[0];
  const LstmGrads g = lstm_cell_backward(f.cache, Vector{dh_next}, Vector{dc_next});
  const double t = std::tanh(c1);
  EXPECT_NEAR(g.dc[0], dh_next * 0.5 * (1 - t * t) * 0.5 + dc_next * 0.5, 1e-15);
  auto value = [&](std::span<const double> cc) {
    const LstmForward ff = lstm_cell_forward(Vector{0.4}, Vector{0.1}, cc, p);
    return dh_next * ff.h[0] + dc_next * ff.c[0];
  };
  auto grad = [&](std::span<const double>) { return g.dc; };
  EXPECT_LT(grad_check(value, grad, Vector{c0}, 1e-5), 1e-8);
}

TEST(LstmBackward, AllGradientGroupsMatchFiniteDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.index(4), m = 1 + rng.index(4);
    const LstmParams p = random_lstm(n, m, rng);
    const Vector x = random_vector(n, rng), h = random_vector(m, rng), c = random_vector(m, rng);
    const Vector wh = random_vector(m, rng), wc = random_vector(m, rng);
    auto loss = [&](const LstmParams& pp, std::span<const double> xx, std::span<const double> hh,
                    std::span<const double> cc) {
      const LstmForward f = lstm_cell_forward(xx, hh, cc, pp);
      return probe(wh, f.h) + probe(wc, f.c);
    };
    LstmForward f = lstm_cell_forward(x, h, c, p);
    const LstmGrads g = lstm_cell_backward(f.cache, wh, wc);

    EXPECT_LT(grad_check([&](std::span<const double> v) { return loss(p, v, h, c); },
                         [&](std::span<const double>) { return g.dx; }, x, 1e-5),
              1e-5);
    EXPECT_LT(grad_check([&](std::span<const double> v) { return loss(p, x, v, c); },
                         [&](std::span<const double>) { return g.dh; }, h, 1e-5),
              1e-5);
    EXPECT_LT(grad_check([&](std::span<const double> v) { return loss(p, x, h, v); },
                         [&](std::span<const double>) { return g.dc; }, c, 1e-5),
              1e-5);

    std::vector<const Tensor*> grads;
    g.dparams.for_each("", [&](const std::string&, const Tensor& t) { grads.push_back(&t); });
    std::size_t idx = 0;
    LstmParams probe_params = p;
    probe_params.for_each("", [&](const std::string& name, Tensor& t) {
      const Tensor saved = t;
      const Tensor* analytic = grads[idx++];
      const double err = grad_check(
          [&](std::span<const double> v) {
            std::copy(v.begin(), v.end(), t.data());
            const double out = loss(probe_params, x, h, c);
            std::copy(saved.data(), saved.data() + saved.size(), t.data());
            return out;
          },
          [&](std::span<const double>) { return analytic->values(); }, saved.flat(), 1e-5);
      EXPECT_LT(err, 1e-5) << name;
    });
  }
}

TEST(LstmBackward, StaleCacheIsAContractError) {
  const LstmParams p = LstmParams::zeros(1, 1);
  LstmForward f = lstm_cell_forward(Vector{0.0}, Vector{0.0}, Vector{0.0}, p);
  lstm_cell_backward(f.cache, Vector{1.0}, Vector{0.0});
  EXPECT_THROW(lstm_cell_backward(f.cache, Vector{1.0}, Vector{0.0}), ContractError);
  LstmCache never;
  EXPECT_THROW(lstm_cell_backward(never, Vector{1.0}, Vector{0.0}), ContractError);
}

TEST(Loss, UniformSoftmax) {
  auto [loss, cache] = loss_forward(LossKind::kCrossEntropy, Vector{0, 0}, LossTarget::cls(0));
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(loss, 0.693147, 1e-6);
  const Vector d = loss_backward(cache, 3.0);
  EXPECT_NEAR(d[0], -1.5, 1e-15);
  EXPECT_NEAR(d[1], 1.5, 1e-15);
}

TEST(Loss, SkewedSoftmax) {
  auto [loss, cache] = loss_forward(LossKind::kCrossEntropy, Vector{2, 0}, LossTarget::cls(1));
  EXPECT_NEAR(loss, -std::log(1.0 / (std::exp(2.0) + 1.0)), 1e-14);
  EXPECT_NEAR(loss, 2.126928, 1e-6);
}

TEST(Loss, MseAtTargetIsZero) {
  auto [loss, cache] = loss_forward(LossKind::kMse, Vector{0.5}, LossTarget::real(0.5));
  EXPECT_EQ(loss, 0.0);
  EXPECT_EQ(loss_backward(cache, 1.0), Vector{0.0});
}

TEST(Loss, OutOfRangeLabelIsADomainError) {
  EXPECT_THROW(loss_forward(LossKind::kCrossEntropy, Vector{0, 0}, LossTarget::cls(2)), DomainError);
  EXPECT_THROW(loss_forward(LossKind::kCrossEntropy, Vector{0, 0}, LossTarget::cls(-1)), DomainError);
}

TEST(Loss, StaleCacheIsAContractError) {
  auto [loss, cache] = loss_forward(LossKind::kMse, Vector{0.1}, LossTarget::real(0.5));
  loss_backward(cache, 1.0);
  EXPECT_THROW(loss_backward(cache, 1.0), ContractError);
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + rng.index(4);
    const Vector z = random_vector(k, rng, -3.0, 3.0);
    const int label = static_cast<int>(rng.index(k));
    const double target = rng.uniform();
    for (LossKind kind : {LossKind::kCrossEntropy, LossKind::kMse}) {
      const LossTarget t = kind == LossKind::kCrossEntropy ? LossTarget::cls(label) : LossTarget::real(target);
      auto value = [&](std::span<const double> v) { return loss_forward(kind, v, t).first; };
      auto grad = [&](std::span<const double> v) {
        auto [l, cache] = loss_forward(kind, v, t);
        return loss_backward(cache, 1.0);
      };
      EXPECT_LT(grad_check(value, grad, z, 1e-5), 1e-6);
    }
  }
}

TEST(GradCheck, SquareFunction) {
  auto value = [](std::span<const double> v) { return v[0] * v[0]; };
  auto grad = [](std::span<const double> v) { return Vector{2 * v[0]}; };
  EXPECT_LT(grad_check(value, grad, Vector{3.0}, 1e-5), 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  auto value = [](std::span<const double> v) { return v[0] * v[0]; };
  auto grad = [](std::span<const double> v) { return Vector{3 * v[0]}; };
  EXPECT_GT(grad_check(value, grad, Vector{3.0}, 1e-5), 0.1);
}

TEST(GradCheck, NonFiniteFunctionIsAnError) {
  auto value = [](std::span<const double> v) { return std::log(v[0]); };
  auto grad = [](std::span<const double> v) { return Vector{1.0 / v[0]}; };
  EXPECT_THROW(grad_check(value, grad, Vector{0.0}, 1e-5), NumericError);
  EXPECT_THROW(grad_check(value, grad, Vector{1.0}, 0.0), DomainError);
}
