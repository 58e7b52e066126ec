#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace streamraid;
using namespace streamraid::testing;

namespace {

VictimModel small_victim(std::uint64_t seed, Task task = Task::kClassification,
                         HeadOrdering ordering = HeadOrdering::kPostUpdate) {
  Rng rng(seed);
  VictimArch arch{3, 2, 5, task, 3, ordering};
  VictimModel m = VictimModel::random(arch, rng);
  // Larger weights than the default init so every path carries signal.
  scale_params(m, 2.0);
  return m;
}

// Sum over steps of the step loss against fixed per-step targets.
double sequence_loss(const VictimModel& model, const Tensor& xs, const std::vector<int>& labels) {
  const Rollout r = victim_rollout(model, xs);
  double total = 0.0;
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    total += gradkit::loss_forward(model.loss_kind(), r.outputs.row(t), gradkit::LossTarget::cls(labels[t])).first;
  }
  return total;
}

VictimTape::Gradients sequence_grads(const VictimModel& model, const Tensor& xs, const std::vector<int>& labels,
                                     VictimModel* param_grads) {
  VictimTape tape(model, xs, HiddenState::zeros(model.hidden_size()));
  Tensor d({xs.rows(), model.output_size()});
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    auto [loss, cache] = gradkit::loss_forward(model.loss_kind(), tape.outputs().row(t),
                                               gradkit::LossTarget::cls(labels[t]));
    const Vector g = gradkit::loss_backward(cache, 1.0);
    std::copy(g.begin(), g.end(), d.row(t).begin());
  }
  return tape.backward(d, param_grads);
}

}  // namespace

TEST(VictimStep, ZeroModelOutputsHeadBias) {
  VictimArch arch{3, 2, 4, Task::kClassification, 2, HeadOrdering::kPostUpdate};
  VictimModel m = VictimModel::zeros(arch);
  m.head2.bias = Tensor::vector({0.25, -1.5});
  const StepResult r = victim_step(m, Vector{0.3, 0.9, 0.1}, HiddenState::zeros(2));
  EXPECT_EQ(r.output, (Vector{0.25, -1.5}));
}

TEST(VictimStep, DeterministicFromSameState) {
  const VictimModel m = small_victim(0);
  const HiddenState s{Vector{0.1, -0.2}, Vector{0.3, 0.05}};
  const Vector x{0.2, 0.4, 0.6};
  EXPECT_EQ(victim_step(m, x, s).output, victim_step(m, x, s).output);
}

TEST(VictimStep, DimensionMismatch) {
  const VictimModel m = small_victim(0);
  EXPECT_THROW(victim_step(m, Vector{0.1, 0.2}, HiddenState::zeros(2)), DimensionError);
}

TEST(VictimRollout, MatchesMonolithicReference) {
  Rng rng(21);
  for (HeadOrdering ordering : {HeadOrdering::kPostUpdate, HeadOrdering::kPreUpdate}) {
    for (int trial = 0; trial < 5; ++trial) {
      const VictimModel m = small_victim(100 + trial, Task::kClassification, ordering);
      const Tensor xs = random_sequence(6, 3, rng);
      const Tensor ref = reference_victim_outputs(m, xs);
      const Rollout r = victim_rollout(m, xs);
      for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(r.outputs[k], ref[k], 1e-12);
      EXPECT_EQ(r.states.size(), 7u);
    }
  }
}

TEST(VictimRollout, SingleStepIsVictimStep) {
  const VictimModel m = small_victim(1);
  Tensor xs = Tensor::matrix(1, 3, {0.1, 0.5, 0.9});
  const Rollout r = victim_rollout(m, xs);
  const StepResult s = victim_step(m, xs.row(0), HiddenState::zeros(2));
  EXPECT_EQ(Vector(r.outputs.row(0).begin(), r.outputs.row(0).end()), s.output);
  EXPECT_EQ(r.states[1].h, s.next.h);
}

TEST(VictimRollout, PrefixProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const VictimModel m = small_victim(200 + trial);
    const Tensor xs = random_sequence(8, 3, rng);
    const Rollout full = victim_rollout(m, xs);
    const std::size_t k = 1 + rng.index(7);
    Tensor prefix({k, 3});
    std::copy(xs.data(), xs.data() + prefix.size(), prefix.data());
    const Rollout part = victim_rollout(m, prefix);
    for (std::size_t i = 0; i < part.outputs.size(); ++i) EXPECT_EQ(part.outputs[i], full.outputs[i]);
  }
}

TEST(VictimRollout, EmptySequenceIsADomainError) {
  const VictimModel m = small_victim(0);
  EXPECT_THROW(victim_rollout(m, Tensor({0, 3})), DomainError);
}

TEST(VictimHeadOrdering, PreUpdateIgnoresCurrentInputAtStepOne) {
  const VictimModel m = small_victim(3, Task::kClassification, HeadOrdering::kPreUpdate);
  const auto a = victim_step(m, Vector{0, 0, 0}, HiddenState::zeros(2)).output;
  const auto b = victim_step(m, Vector{1, 1, 1}, HiddenState::zeros(2)).output;
  EXPECT_EQ(a, b);
  const VictimModel post = small_victim(3);
  EXPECT_NE(victim_step(post, Vector{0, 0, 0}, HiddenState::zeros(2)).output,
            victim_step(post, Vector{1, 1, 1}, HiddenState::zeros(2)).output);
}

TEST(VictimTape, InputGradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (HeadOrdering ordering : {HeadOrdering::kPostUpdate, HeadOrdering::kPreUpdate}) {
    for (int trial = 0; trial < 5; ++trial) {
      const VictimModel m = small_victim(300 + trial, Task::kClassification, ordering);
      Tensor xs = random_sequence(4, 3, rng);
      std::vector<int> labels(4);
      for (int& y : labels) y = static_cast<int>(rng.index(3));
      const Tensor analytic = sequence_grads(m, xs, labels, nullptr).d_inputs;
      const double err = gradkit::grad_check(
          [&](std::span<const double> v) {
            Tensor probe({4, 3}, Vector(v.begin(), v.end()));
            return sequence_loss(m, probe, labels);
          },
          [&](std::span<const double>) { return analytic.values(); }, xs.flat(), 1e-5);
      EXPECT_LT(err, 1e-4);
    }
  }
}

TEST(VictimTape, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    const VictimModel m = small_victim(400 + trial);
    const Tensor xs = random_sequence(5, 3, rng);
    std::vector<int> labels(5);
    for (int& y : labels) y = static_cast<int>(rng.index(3));
    VictimModel grads = VictimModel::zeros(m.arch);
    sequence_grads(m, xs, labels, &grads);
    const double err = gradkit::grad_check(
        [&](std::span<const double> v) {
          VictimModel probe = m;
          unflatten_params(probe, v);
          return sequence_loss(probe, xs, labels);
        },
        [&](std::span<const double>) { return flatten_params(grads); }, flatten_params(m), 1e-5);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(VictimTape, RegressionGradient) {
  Rng rng(10);
  const VictimModel m = small_victim(5, Task::kRegression);
  const Tensor xs = random_sequence(4, 3, rng);
  const Vector target = random_vector(4, rng);
  auto loss = [&](const Tensor& in) {
    const Rollout r = victim_rollout(m, in);
    double s = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      s += gradkit::loss_forward(gradkit::LossKind::kMse, r.outputs.row(t), gradkit::LossTarget::real(target[t])).first;
    }
    return s;
  };
  VictimTape tape(m, xs, HiddenState::zeros(2));
  Tensor d({4, 1});
  for (std::size_t t = 0; t < 4; ++t) {
    auto [l, cache] = gradkit::loss_forward(gradkit::LossKind::kMse, tape.outputs().row(t),
                                            gradkit::LossTarget::real(target[t]));
    d(t, 0) = gradkit::loss_backward(cache, 1.0)[0];
  }
  const Tensor g = tape.backward(d).d_inputs;
  const double err = gradkit::grad_check([&](std::span<const double> v) { return loss(Tensor({4, 3}, Vector(v.begin(), v.end()))); },
                                         [&](std::span<const double>) { return g.values(); }, xs.flat(), 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(VictimTape, SecondBackwardIsAContractError) {
  Rng rng(1);
  const VictimModel m = small_victim(6);
  VictimTape tape(m, random_sequence(3, 3, rng), HiddenState::zeros(2));
  const Tensor d({3, 3}, 0.1);
  tape.backward(d);
  EXPECT_THROW(tape.backward(d), ContractError);
  VictimTape other(m, random_sequence(3, 3, rng), HiddenState::zeros(2));
  EXPECT_THROW(other.backward(Tensor({2, 3})), ContractError);
}

TEST(Predictor, OutputDimensionAndRangeClamp) {
  Rng rng(2);
  PredictorArch arch{3, 6, 7, 0.3, false, 0.0, 1.0};
  PredictorModel q = PredictorModel::random(arch, rng);
  q.head2.bias = Tensor::vector({50.0, -50.0, 0.0});
  const auto futures = predictor_rollout(q, random_sequence(4, 3, rng), 5, 1, rng);
  ASSERT_EQ(futures.size(), 1u);
  EXPECT_EQ(futures[0].shape(), (std::vector<std::size_t>{5, 3}));
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(futures[0](t, 0), 1.0);
    EXPECT_EQ(futures[0](t, 1), 0.0);
  }
}

TEST(Predictor, ZeroLookaheadIsEmpty) {
  Rng rng(3);
  const PredictorModel q = PredictorModel::random(PredictorArch{2, 4, 4, 0.3, true, 0.0, 1.0}, rng);
  const auto f = predictor_rollout(q, Tensor({0, 2}), 0, 2, rng);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].rows(), 0u);
  EXPECT_THROW(predictor_rollout(q, random_sequence(2, 2, rng), -1, 1, rng), DomainError);
}

TEST(Predictor, DeterministicSamplesAreIdentical) {
  Rng rng(4);
  const PredictorModel q = PredictorModel::random(PredictorArch{3, 5, 6, 0.3, false, 0.0, 1.0}, rng);
  const Tensor prefix = random_sequence(3, 3, rng);
  const auto three = predictor_rollout(q, prefix, 4, 3, rng);
  const auto one = predictor_rollout(q, prefix, 4, 1, rng);
  for (const Tensor& f : three) EXPECT_EQ(f, one[0]);
}

TEST(Predictor, StochasticInferenceVariesWithRng) {
  Rng init(5);
  const PredictorModel q = PredictorModel::random(PredictorArch{3, 8, 16, 0.5, true, -10.0, 10.0}, init);
  Rng rng(6);
  const auto f = predictor_rollout(q, random_sequence(3, 3, rng), 4, 2, rng);
  EXPECT_NE(f[0], f[1]);
}

TEST(Predictor, StreamMatchesBatchRollout) {
  Rng rng(7);
  const PredictorModel q = PredictorModel::random(PredictorArch{3, 5, 6, 0.3, false, 0.0, 1.0}, rng);
  const Tensor prefix = random_sequence(5, 3, rng);
  PredictorStream stream(q);
  for (std::size_t t = 0; t < 5; ++t) stream.observe(prefix.row(t));
  Rng a(1), b(1);
  EXPECT_EQ(stream.rollout(3, a), predictor_rollout(q, prefix, 3, 1, b)[0]);
}

TEST(PredictorTape, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 3; ++trial) {
    PredictorModel q = PredictorModel::random(PredictorArch{3, 4, 5, 0.3, false, 0.0, 1.0}, rng);
    scale_params(q, 2.0);
    const Tensor xs = random_sequence(4, 3, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    auto loss = [&](const PredictorModel& model, const Tensor& in) {
      PredictorTape tape(model, in, nullptr);
      double s = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * tape.outputs()[k];
      return s;
    };
    PredictorModel grads = PredictorModel::zeros(q.arch);
    PredictorTape tape(q, xs, nullptr);
    const Tensor dx = tape.backward(w, &grads);
    EXPECT_LT(gradkit::grad_check([&](std::span<const double> v) { return loss(q, Tensor({4, 3}, Vector(v.begin(), v.end()))); },
                                  [&](std::span<const double>) { return dx.values(); }, xs.flat(), 1e-5),
              1e-4);
    EXPECT_LT(gradkit::grad_check(
                  [&](std::span<const double> v) {
                    PredictorModel probe = q;
                    unflatten_params(probe, v);
                    return loss(probe, xs);
                  },
                  [&](std::span<const double>) { return flatten_params(grads); }, flatten_params(q), 1e-5),
              1e-4);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  VictimArch arch{1, 1, 1, Task::kRegression, 0, HeadOrdering::kPostUpdate};
  VictimModel params = VictimModel::zeros(arch);
  VictimModel grads = VictimModel::zeros(arch);
  grads.head2.bias[0] = 0.3;
  grads.head1.bias[0] = -2.0;
  Adam adam(0.01);
  adam.step(params, grads);
  // With bias correction the first update is lr * g / (|g| + eps).
  EXPECT_NEAR(params.head2.bias[0], -0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(params.head1.bias[0], 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(params.lstm.b_i[0], 0.0);
  adam.step(params, grads);
  EXPECT_NEAR(params.head2.bias[0], -0.02 * 0.3 / (0.3 + 1e-8), 1e-12);
  EXPECT_EQ(adam.steps(), 2);
}

TEST(TrainVictim, LossDecreasesOnOneSequence) {
  const SequenceDataset ds = toy_classification(1, 6, 3, 1);
  VictimArch arch{3, 4, 5, Task::kClassification, 2, HeadOrdering::kPostUpdate};
  const VictimTraining t = train_victim(ds, arch, TrainConfig{10, 1, 1e-2, 0});
  ASSERT_EQ(t.batch_losses.size(), 10u);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_LT(t.batch_losses[i], t.batch_losses[i - 1]);
}

TEST(TrainVictim, SeededRunsAreBitIdentical) {
  const SequenceDataset ds = toy_classification(8, 5, 3, 2);
  VictimArch arch{3, 4, 5, Task::kClassification, 2, HeadOrdering::kPostUpdate};
  const TrainConfig cfg{3, 4, 1e-2, 42};
  EXPECT_EQ(train_victim(ds, arch, cfg).model, train_victim(ds, arch, cfg).model);
  EXPECT_FALSE(train_victim(ds, arch, cfg).model == train_victim(ds, arch, TrainConfig{3, 4, 1e-2, 43}).model);
}

TEST(TrainVictim, ReportedAccuracyMatchesIndependentCount) {
  const SequenceDataset ds = toy_classification(10, 5, 3, 3);
  VictimArch arch{3, 4, 5, Task::kClassification, 2, HeadOrdering::kPostUpdate};
  const VictimTraining t = train_victim(ds, arch, TrainConfig{5, 2, 1e-2, 0});
  std::size_t hits = 0, total = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const Rollout r = victim_rollout(t.model, ds.inputs[s]);
    for (std::size_t i = 0; i < 5; ++i) {
      hits += (r.outputs(i, 1) > r.outputs(i, 0) ? 1 : 0) == ds.labels[s][i];
      ++total;
    }
  }
  EXPECT_DOUBLE_EQ(t.final.accuracy, static_cast<double>(hits) / static_cast<double>(total));
}

TEST(TrainVictim, EmptyDatasetIsAnError) {
  SequenceDataset ds;
  ds.meta = DatasetMeta{"empty", 3, 5, Task::kClassification, 2, 0.0, 1.0};
  EXPECT_THROW(train_victim(ds, VictimArch{3, 4, 5, Task::kClassification, 2, HeadOrdering::kPostUpdate},
                            TrainConfig{}),
               Error);
}

TEST(TrainPredictor, LearnsConstantSequences) {
  SequenceDataset ds;
  ds.meta = DatasetMeta{"constant", 2, 6, Task::kRegression, 0, 0.0, 1.0};
  for (int s = 0; s < 4; ++s) {
    ds.inputs.push_back(Tensor({6, 2}, std::vector<double>(12, 0.3)));
    ds.inputs.back()(0, 1) = 0.3;
  }
  PredictorArch arch{2, 8, 8, 0.0, false, 0.0, 1.0};
  const PredictorTraining t = train_predictor(ds, arch, TrainConfig{150, 4, 1e-2, 0});
  EXPECT_LT(t.validation_mse, 1e-3);
  Rng rng(0);
  const Tensor f = predictor_rollout(t.model, ds.inputs[0], 3, 1, rng)[0];
  for (double v : f.flat()) EXPECT_NEAR(v, 0.3, 0.05);
}

TEST(TrainPredictor, ShortSequencesAreRejected) {
  SequenceDataset ds;
  ds.meta = DatasetMeta{"short", 2, 1, Task::kRegression, 0, 0.0, 1.0};
  ds.inputs.push_back(Tensor({1, 2}));
  EXPECT_THROW(train_predictor(ds, PredictorArch{2, 4, 4, 0.3, false, 0.0, 1.0}, TrainConfig{}), DomainError);
}

TEST(TrainPredictor, SeededRunsAreBitIdentical) {
  const SequenceDataset ds = toy_classification(6, 5, 3, 4);
  PredictorArch arch{3, 6, 6, 0.3, false, 0.0, 1.0};
  const TrainConfig cfg{2, 3, 1e-2, 9};
  EXPECT_EQ(train_predictor(ds, arch, cfg).model, train_predictor(ds, arch, cfg).model);
}
