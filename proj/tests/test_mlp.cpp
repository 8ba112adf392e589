#include <gtest/gtest.h>

#include <cstring>

#include "lrlab/data.hpp"
#include "lrlab/mlp.hpp"
#include "gradient_check.hpp"
#include "test_support.hpp"

namespace lrlab {
namespace {

using test::loss_at;
using test::random_matrix;
using test::worst_gradient_error;

MlpParams tiny_net() {
  MlpParams p;
  p.weights = {Matrix{{1, 0}, {0, 1}}, Matrix{{1, 1}}};
  p.biases = {Vector{0, 0}, Vector{0}};
  p.activations = {Activation::ReLU, Activation::Identity};
  return p;
}

TEST(Mlp, ForwardAppliesReluMask) {
  const ForwardTrace t = forward(tiny_net(), std::vector<double>{1, -1});
  EXPECT_EQ(t.pre_activations[0], (Vector{1, -1}));
  EXPECT_EQ(t.relu_masks[0], (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(t.output(), (Vector{1}));
  EXPECT_THROW(forward(tiny_net(), std::vector<double>{1}), std::invalid_argument);
}

TEST(Mlp, ReluAtZeroIsInactive) {
  const ForwardTrace t = forward(tiny_net(), std::vector<double>{0, 2});
  EXPECT_EQ(t.relu_masks[0][0], 0);
  EXPECT_EQ(t.output(), (Vector{2}));
}

TEST(Mlp, InitShapesAndScale) {
  const std::vector<std::size_t> sizes{100, 200, 200, 2};
  const MlpParams p = init_mlp(sizes, 1);
  EXPECT_EQ(p.layer_sizes(), sizes);
  EXPECT_EQ(p.parameter_count(), 100u * 200 + 200 + 200 * 200 + 200 + 200 * 2 + 2);
  EXPECT_EQ(p.activations.back(), Activation::Identity);
  EXPECT_EQ(p.activations.front(), Activation::ReLU);
  double s2 = 0;
  for (double w : p.weights[0].data()) s2 += w * w;
  EXPECT_NEAR(s2 / static_cast<double>(p.weights[0].size()), 2.0 / 100.0, 0.002);
  EXPECT_EQ(init_mlp(sizes, 1), p);
  EXPECT_THROW(init_mlp(std::vector<std::size_t>{3}, 1), std::invalid_argument);
  EXPECT_THROW(init_mlp(std::vector<std::size_t>{3, 0, 1}, 1), std::invalid_argument);
}

TEST(Mlp, ValidateCatchesBrokenChains) {
  MlpParams p = tiny_net();
  p.weights[1] = Matrix(1, 3);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = tiny_net();
  p.biases[0].pop_back();
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Mlp, BatchForwardMatchesSingleForward) {
  Rng rng(3);
  const MlpParams p = test::random_relu_net({5, 7, 4, 3}, 8);
  const Matrix x = random_matrix(6, 5, rng);
  const Matrix out = forward_batch(p, x);
  for (std::size_t i = 0; i < 6; ++i) {
    const Vector o = forward(p, x.row(i)).output();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), o[j], 1e-14);
  }
}

TEST(Loss, MseAndCrossEntropyValues) {
  const Matrix out{{1, 2}, {3, 4}};
  EXPECT_DOUBLE_EQ(output_loss(out, Matrix{{0, 2}, {3, 2}}, LossKind::MeanSquaredError, nullptr), (1.0 + 4.0) / 4.0);
  // Two equal logits: -log(1/2).
  EXPECT_NEAR(output_loss(Matrix{{5, 5}}, std::vector<std::uint32_t>{1}, LossKind::SoftmaxCrossEntropy, nullptr),
              std::log(2.0), 1e-15);
  EXPECT_THROW(output_loss(out, std::vector<std::uint32_t>{0, 2}, LossKind::SoftmaxCrossEntropy, nullptr),
               std::invalid_argument);
  EXPECT_THROW(output_loss(out, Matrix{{1}}, LossKind::MeanSquaredError, nullptr), std::invalid_argument);
}

TEST(Loss, CrossEntropyStableForHugeLogits) {
  const double l = output_loss(Matrix{{1000, -1000}}, std::vector<std::uint32_t>{1}, LossKind::SoftmaxCrossEntropy,
                               nullptr);
  EXPECT_NEAR(l, 2000.0, 1e-9);
}


TEST(Gradients, MseMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LE(worst_gradient_error(LossKind::MeanSquaredError, s), 1e-4) << s;
}

TEST(Gradients, CrossEntropyMatchesFiniteDifferences) {
  for (std::uint64_t s = 100; s < 120; ++s)
    EXPECT_LE(worst_gradient_error(LossKind::SoftmaxCrossEntropy, s), 1e-4) << s;
}

TEST(Gradients, InputGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const MlpParams p = test::random_relu_net({4, 6, 3}, 4);
  const Matrix x = random_matrix(2, 4, rng);
  const Matrix y = random_matrix(2, 3, rng);
  BatchCache cache;
  Matrix d_out;
  output_loss(forward_batch(p, x, &cache), y, LossKind::MeanSquaredError, &d_out);
  Matrix d_in;
  backward_batch(p, cache, d_out, &d_in);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += 1e-6;
    xm.data()[i] -= 1e-6;
    const double fd = (loss_at(p, xp, y, LossKind::MeanSquaredError) - loss_at(p, xm, y, LossKind::MeanSquaredError)) / 2e-6;
    EXPECT_NEAR(d_in.data()[i], fd, 1e-6);
  }
}

// Hand-computed: with fresh state, m_hat = g and v_hat = g^2, so each
// parameter moves by lr * g / (|g| + eps).
TEST(Adam, FirstStepIsSignLike) {
  MlpParams p;
  p.weights = {Matrix{{1.0, -2.0}}};
  p.biases = {Vector{0.5}};
  p.activations = {Activation::Identity};
  MlpParams g = p.zeros_like();
  g.weights[0](0, 0) = 0.3;
  g.weights[0](0, 1) = -4.0;
  g.biases[0][0] = 0.0;
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState s = AdamState::fresh(p);
  adam_step(p, g, s, cfg);
  EXPECT_EQ(s.step, 1u);
  EXPECT_NEAR(p.weights[0](0, 0), 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p.weights[0](0, 1), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.biases[0][0], 0.5);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  MlpParams p;
  p.weights = {Matrix{{0.0}}};
  p.biases = {Vector{0.0}};
  p.activations = {Activation::Identity};
  MlpParams g = p.zeros_like();
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState s = AdamState::fresh(p);
  g.weights[0](0, 0) = 1.0;
  adam_step(p, g, s, cfg);
  g.weights[0](0, 0) = -1.0;
  adam_step(p, g, s, cfg);
  // Step one moves by -lr / (1 + eps). Then m = 0.9*0.1 - 0.1 = -0.01,
  // m_hat = -0.01/0.19; v = 0.001999, v_hat = 1.
  const double first = -0.1 / (1.0 + 1e-8);
  const double mhat = -0.01 / 0.19;
  const double vhat = (0.999 * 0.001 + 0.001) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.weights[0](0, 0), first - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
}

TEST(Adam, ShapeMismatchThrows) {
  MlpParams p = tiny_net();
  AdamState s = AdamState::fresh(p);
  TrainConfig cfg;
  MlpParams g = init_mlp(std::vector<std::size_t>{2, 3, 1}, 1);
  EXPECT_THROW(adam_step(p, g, s, cfg), std::invalid_argument);
}

Dataset separable_toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.kind = TaskKind::Classification;
  d.class_count = 2;
  d.inputs = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = static_cast<std::uint32_t>(i % 2);
    d.inputs(i, 0) = (y ? 1.5 : -1.5) + 0.3 * rng.normal();
    d.inputs(i, 1) = rng.normal();
    d.labels.push_back(y);
  }
  d.digest = "toy";
  return d;
}

TEST(Train, ReducesLossOnSeparableToy) {
  const Dataset d = separable_toy(200, 1);
  TrainConfig cfg;
  cfg.layer_sizes = {2, 8, 2};
  cfg.loss = LossKind::SoftmaxCrossEntropy;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 20;
  cfg.epochs = 20;  // 200 steps
  cfg.checkpoint_every = 50;
  const auto cps = train(init_mlp(cfg.layer_sizes, 2), d, cfg);
  ASSERT_EQ(cps.front().step, 0u);
  ASSERT_EQ(cps.back().step, 200u);
  ASSERT_EQ(cps.size(), 5u);
  const Targets y = d.labels;
  EXPECT_LT(loss_at(cps.back().params, d.inputs, y, cfg.loss), loss_at(cps.front().params, d.inputs, y, cfg.loss));
}

TEST(Train, DeterministicInSeedAndObserverSeesCheckpoints) {
  const Dataset d = synthetic_regression_set(4, 2, 64, 3);
  TrainConfig cfg;
  cfg.layer_sizes = {4, 6, 2};
  cfg.batch_size = 10;
  cfg.epochs = 3;
  cfg.checkpoint_every = 4;
  cfg.seed = 5;
  std::vector<std::uint64_t> seen;
  const auto a = train(init_mlp(cfg.layer_sizes, 1), d, cfg, [&](const Checkpoint& c) { seen.push_back(c.step); });
  const auto b = train(init_mlp(cfg.layer_sizes, 1), d, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].params, b[i].params);
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{0, 4, 8, 12, 16, 20, 21}));
  cfg.seed = 6;
  EXPECT_NE(train(init_mlp(cfg.layer_sizes, 1), d, cfg).back().params, a.back().params);
}

TEST(Train, ZeroLearningRateLeavesParametersBitwiseUnchanged) {
  const Dataset d = synthetic_regression_set(3, 1, 32, 1);
  TrainConfig cfg;
  cfg.layer_sizes = {3, 5, 1};
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  const MlpParams init = test::random_relu_net(cfg.layer_sizes, 4);
  const auto cps = train(init, d, cfg);
  EXPECT_EQ(cps.back().params, init);
}

TEST(Train, WithoutBiasKeepsBiasesZero) {
  const Dataset d = synthetic_regression_set(3, 1, 32, 1);
  TrainConfig cfg;
  cfg.layer_sizes = {3, 5, 1};
  cfg.use_bias = false;
  cfg.learning_rate = 1e-2;
  const auto cps = train(test::random_relu_net(cfg.layer_sizes, 4), d, cfg);
  for (const auto& b : cps.back().params.biases)
    for (double v : b) EXPECT_EQ(v, 0.0);
}

TEST(Train, RejectsMismatchedLossAndBadConfig) {
  const Dataset d = synthetic_regression_set(3, 1, 8, 1);
  TrainConfig cfg;
  cfg.layer_sizes = {3, 1};
  cfg.loss = LossKind::SoftmaxCrossEntropy;
  EXPECT_THROW(train(init_mlp(cfg.layer_sizes, 0), d, cfg), std::invalid_argument);
  cfg.loss = LossKind::MeanSquaredError;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.batch_size = 1;
  cfg.adam_beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.adam_beta1 = 0.9;
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripsExactly) {
  const MlpParams p = test::random_relu_net({3, 4, 2}, 9);
  test::TempDir dir("ckpt");
  save_checkpoint(dir.path() / "a.mlpc", p);
  EXPECT_EQ(load_checkpoint(dir.path() / "a.mlpc"), p);
  const auto bytes = encode_checkpoint(p);
  // header 4 + 4 + 4 + 3 * 4, payload (12 + 4 + 8 + 2) doubles
  EXPECT_EQ(bytes.size(), 24u + 26u * 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MLPC");
}

std::uint64_t error_offset(std::vector<std::uint8_t> bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no CheckpointError";
  return 0;
}

TEST(Checkpoint, CorruptionReportsOffset) {
  const auto good = encode_checkpoint(test::random_relu_net({3, 4, 2}, 9));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(error_offset(bad_magic), 0u);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(error_offset(bad_version), 4u);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(error_offset(truncated), 24u + 12u * 8u + 4u * 8u + 8u * 8u);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(error_offset(trailing), good.size());
  auto nan_weight = good;
  const std::uint64_t nan_bits = 0x7FF8000000000000ULL;
  std::memcpy(nan_weight.data() + 24, &nan_bits, 8);
  EXPECT_EQ(error_offset(nan_weight), 24u);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.mlpc"), CheckpointError);
}

}  // namespace
}  // namespace lrlab
