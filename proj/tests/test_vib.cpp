#include <gtest/gtest.h>

#include <sstream>

#include "lrlab/data.hpp"
#include "lrlab/gaussian_ib.hpp"
#include "lrlab/vib.hpp"
#include "gradient_check.hpp"
#include "test_support.hpp"

namespace lrlab {
namespace {

using test::Case;
using test::random_case;
using test::random_matrix;
using test::worst_vib_gradient_error;

TEST(Kl, ClosedFormValues) {
  EXPECT_EQ(kl_to_standard_normal(std::vector<double>{0, 0}, std::vector<double>{0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(kl_to_standard_normal(std::vector<double>{1}, std::vector<double>{0}), 0.5);
  EXPECT_NEAR(kl_to_standard_normal(std::vector<double>{0}, std::vector<double>{std::log(2.0)}),
              0.5 * (2.0 - 1.0 - std::log(2.0)), 1e-15);
  EXPECT_THROW(kl_to_standard_normal(std::vector<double>{0}, std::vector<double>{0, 0}), std::invalid_argument);
}

TEST(Kl, NonnegativeAndZeroOnlyAtStandardNormal) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Vector m{rng.normal(), rng.normal()}, l{2 * rng.normal(), 2 * rng.normal()};
    EXPECT_GT(kl_to_standard_normal(m, l), 0.0);
  }
  EXPECT_GT(kl_to_standard_normal(std::vector<double>{1e-4}, std::vector<double>{0}), 0.0);
  EXPECT_GT(kl_to_standard_normal(std::vector<double>{0}, std::vector<double>{1e-4}), 0.0);
}

// Monte Carlo estimate of E_q[log q - log p] for a one-dimensional posterior.
TEST(Kl, AgreesWithMonteCarlo) {
  const double m = 0.7, lv = -0.8, s = std::exp(0.5 * lv);
  Rng rng(8);
  double acc = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double e = rng.normal();
    const double z = m + s * e;
    acc += (-0.5 * e * e - std::log(s)) - (-0.5 * z * z);
  }
  EXPECT_NEAR(acc / n, kl_to_standard_normal(std::vector<double>{m}, std::vector<double>{lv}), 0.01);
}

TEST(Reparameterize, ShiftsAndScales) {
  const Vector z = reparameterize(std::vector<double>{1, -1}, std::vector<double>{std::log(4.0), 0},
                                  std::vector<double>{0.5, 2});
  EXPECT_NEAR(z[0], 2.0, 1e-15);
  EXPECT_NEAR(z[1], 1.0, 1e-15);
  EXPECT_THROW(reparameterize(std::vector<double>{1}, std::vector<double>{0}, std::vector<double>{0, 0}),
               std::invalid_argument);
}

TEST(Architecture, PresetsAndValidation) {
  const VibArchitecture g = VibArchitecture::gaussian_five_dim();
  EXPECT_EQ(g.trunk_sizes, (std::vector<std::size_t>{5, 5, 5}));
  EXPECT_EQ(g.trunk_activation, Activation::Identity);
  EXPECT_EQ(g.latent_dim, 5u);
  const VibArchitecture im = VibArchitecture::image();
  EXPECT_EQ(im.trunk_sizes, (std::vector<std::size_t>{784, 256, 256}));
  EXPECT_EQ(im.latent_dim, 32u);
  EXPECT_EQ(im.decoder, DecoderKind::Softmax);
  VibArchitecture bad = g;
  bad.latent_dim = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = im;
  bad.output_dim = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = g;
  bad.trunk_sizes = {5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Init, DeterministicAndShaped) {
  const VibModel a = init_vib(VibArchitecture::gaussian_five_dim(), 3.0, 9);
  EXPECT_EQ(a, init_vib(VibArchitecture::gaussian_five_dim(), 3.0, 9));
  EXPECT_NE(a, init_vib(VibArchitecture::gaussian_five_dim(), 3.0, 10));
  EXPECT_EQ(a.latent_dim(), 5u);
  EXPECT_EQ(a.beta, 3.0);
  for (double b : a.logvar_head.biases[0]) EXPECT_EQ(b, -6.0);
  EXPECT_THROW(init_vib(VibArchitecture::gaussian_five_dim(), 0.0, 1), std::invalid_argument);
}


TEST(VibLoss, GaussianDecoderGradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 12; ++s)
    EXPECT_LE(worst_vib_gradient_error(DecoderKind::UnitGaussian, s), 1e-4) << s;
}

TEST(VibLoss, SoftmaxDecoderGradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 50; s < 62; ++s) EXPECT_LE(worst_vib_gradient_error(DecoderKind::Softmax, s), 1e-4) << s;
}

TEST(VibLoss, TotalCombinesTermsAndNllIsExact) {
  const Case c = random_case(DecoderKind::UnitGaussian, 4);
  const VibLoss r = vib_loss(c.model, c.x, c.y, c.noise);
  EXPECT_NEAR(r.total, r.kl_term + c.model.beta * r.prediction_term, 1e-12);
  EXPECT_GE(r.kl_term, 0.0);
  // Recompute the Gaussian NLL from a hand-rolled forward pass.
  const Matrix& y = std::get<Matrix>(c.y);
  const MlpParams mean_map = c.model.mean_map(), lv_map = c.model.logvar_map();
  double nll = 0.0;
  for (std::size_t i = 0; i < c.x.rows(); ++i) {
    const Vector mu = forward(mean_map, c.x.row(i)).output();
    const Vector lv = forward(lv_map, c.x.row(i)).output();
    const Vector z = reparameterize(mu, lv, c.noise.row(i));
    const Vector out = forward(c.model.decoder, z).output();
    for (std::size_t j = 0; j < out.size(); ++j)
      nll += 0.5 * std::pow(out[j] - y(i, j), 2) + 0.5 * std::log(2 * std::numbers::pi);
  }
  EXPECT_NEAR(r.prediction_term, nll / static_cast<double>(c.x.rows()), 1e-12);
}

TEST(VibLoss, ShapeErrors) {
  const Case c = random_case(DecoderKind::UnitGaussian, 2);
  EXPECT_THROW(vib_loss(c.model, c.x, c.y, Matrix(c.x.rows() + 1, c.model.latent_dim())), std::invalid_argument);
  EXPECT_THROW(vib_loss(c.model, c.x, std::vector<std::uint32_t>(c.x.rows(), 0), c.noise), std::invalid_argument);
}

TEST(EncoderRank, DeepLinearTrunkHasConstantRank) {
  VibModel m = init_vib(VibArchitecture::gaussian_five_dim(), 10.0, 3);
  // Make the mean head rank 2.
  Rng rng(1);
  m.mean_head.weights[0] = random_matrix(5, 2, rng) * random_matrix(2, 5, rng);
  const Matrix sample = random_matrix(40, 5, rng);
  for (auto mode : {EncoderRankMode::Absolute, EncoderRankMode::Relative, EncoderRankMode::NoiseWhitened}) {
    const RankEstimate r = encoder_local_rank(m, sample, 1e-2, mode);
    EXPECT_EQ(r.std_rank, 0.0);
    EXPECT_EQ(r.mean_rank, 2.0);
  }
}

TEST(EncoderRank, WhiteningDividesRowsByPosteriorStd) {
  VibModel m = init_vib(VibArchitecture::gaussian_five_dim(), 10.0, 3);
  for (auto& w : m.logvar_head.weights[0].data()) w = 0.0;
  m.logvar_head.biases[0] = {0, std::log(4.0), 0, 0, std::log(0.25)};
  const Vector x{0.1, 0.2, 0.3, 0.4, 0.5};
  const Matrix j = encoder_jacobian(m, x);
  const Matrix w = whitened_encoder_jacobian(m, x);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_NEAR(w(1, c), j(1, c) / 2.0, 1e-14);
    EXPECT_NEAR(w(4, c), j(4, c) * 2.0, 1e-14);
    EXPECT_EQ(w(0, c), j(0, c));
  }
  EXPECT_EQ(encoder_rank_mode_from_string("noise-whitened"), EncoderRankMode::NoiseWhitened);
  EXPECT_THROW(encoder_rank_mode_from_string("whitened"), std::invalid_argument);
}

TEST(TrainConfig, ScheduleAndValidation) {
  VibTrainConfig c;
  c.learning_rate = 1.0;
  c.lr_decay = 0.5;
  c.lr_decay_steps = 10;
  EXPECT_EQ(c.rate_at(0), 1.0);
  EXPECT_NEAR(c.rate_at(10), 0.5, 1e-15);
  EXPECT_NEAR(c.rate_at(25), std::pow(0.5, 2.5), 1e-15);
  c.lr_decay = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.lr_decay = 1.0;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

Dataset small_gaussian(std::size_t n, std::uint64_t seed) {
  const GaussianIBProblem p = GaussianIBProblem::reference_five_dim();
  return sample_joint_gaussian({p.sigma_x, p.sigma_y, p.sigma_xy, n, seed});
}

TEST(TrainVib, DeterministicAndLowersLoss) {
  const Dataset d = small_gaussian(500, 1);
  VibTrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 50;
  cfg.learning_rate = 3e-3;
  VibModel a = init_vib(VibArchitecture::gaussian_five_dim(), 10.0, 2);
  VibModel b = a;
  const VibModel start = a;
  std::uint64_t last = 0;
  train_vib(a, d, cfg, 7, [&](std::uint64_t step, const VibLoss&) { last = step; });
  train_vib(b, d, cfg, 7);
  EXPECT_EQ(last, 300u);
  EXPECT_EQ(a, b);
  const VibEvaluation e0 = evaluate_vib(start, d, 1), e1 = evaluate_vib(a, d, 1);
  EXPECT_LT(e1.kl_term / 10.0 + e1.prediction_term, e0.kl_term / 10.0 + e0.prediction_term);
}

TEST(BetaSweep, OrderDeterminismAndThreads) {
  const Dataset train = small_gaussian(400, 2), eval = small_gaussian(200, 3);
  SweepConfig cfg;
  cfg.architecture = VibArchitecture::gaussian_five_dim();
  cfg.train.steps = 100;
  cfg.train.batch_size = 50;
  cfg.seed = 5;
  std::vector<std::size_t> order;
  const auto one = beta_sweep(train, eval, eval.inputs, {2.0, 10.0, 150.0}, cfg,
                              [&](std::size_t i, const SweepRecord&) { order.push_back(i); });
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2}));
  cfg.threads = 3;
  const auto three = beta_sweep(train, eval, eval.inputs, {2.0, 10.0, 150.0}, cfg);
  EXPECT_EQ(sweep_csv(one), sweep_csv(three));
  EXPECT_EQ(one[1].beta, 10.0);
  EXPECT_EQ(beta_sweep(train, eval, eval.inputs, {3.0}, cfg).size(), 1u);
  EXPECT_THROW(beta_sweep(train, eval, eval.inputs, {10.0, 2.0}, cfg), std::invalid_argument);
  EXPECT_THROW(beta_sweep(train, eval, eval.inputs, {}, cfg), std::invalid_argument);
}

TEST(BetaSweep, CsvLayout) {
  SweepRecord r;
  r.beta = 2;
  r.kl_term = 0.5;
  r.prediction_term = 1.25;
  r.accuracy_or_mse = 0.75;
  r.encoder_local_rank = summarize_ranks(1, 0.01, {3, 5});
  EXPECT_EQ(sweep_csv({r}), std::string(kSweepHeader) + "\n2,0.5,1.25,0.75,4,1\n");
}

}  // namespace
}  // namespace lrlab
