#include <gtest/gtest.h>

#include "lrlab/bounds.hpp"
#include "lrlab/data.hpp"
#include "test_support.hpp"

namespace lrlab {
namespace {

using test::random_matrix;

MlpParams linear_net(std::vector<Matrix> ws) {
  MlpParams p;
  for (auto& w : ws) {
    p.biases.emplace_back(w.rows(), 0.0);
    p.weights.push_back(std::move(w));
    p.activations.push_back(Activation::ReLU);
  }
  p.activations.back() = Activation::Identity;
  return p;
}

TEST(NormRatios, IdentityLayers) {
  const NormRatioReport r = norm_ratios(linear_net({Matrix::identity(4), Matrix::identity(4)}));
  for (double v : r.ratios) EXPECT_NEAR(v, 2.0, 1e-14);
  EXPECT_NEAR(r.harmonic_mean_of_ratios, 2.0, 1e-14);
}

TEST(NormRatios, DiagonalLayer) {
  const NormRatioReport r = norm_ratios(linear_net({Matrix::diagonal({3.0, 1.0})}));
  EXPECT_NEAR(r.ratios[0], std::sqrt(10.0) / 3.0, 1e-14);
  EXPECT_NEAR(r.frobenius[0], std::sqrt(10.0), 1e-14);
  EXPECT_NEAR(r.operator_norms[0], 3.0, 1e-14);
}

TEST(NormRatios, BoundedAndMeansOrdered) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const MlpParams p = test::random_relu_net({3 + s % 7, 9, 4 + s % 3, 2}, s);
    const NormRatioReport r = norm_ratios(p);
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
      EXPECT_GE(r.ratios[l], 1.0);
      EXPECT_LE(r.ratios[l], std::sqrt(static_cast<double>(std::min(p.weights[l].rows(), p.weights[l].cols()))) + 1e-12);
    }
    EXPECT_LE(r.harmonic_mean_of_ratios, r.arithmetic_mean_of_ratios + 1e-15);
  }
}

TEST(NormRatios, ZeroLayerIsNamed) {
  MlpParams p = linear_net({Matrix::identity(2), Matrix(2, 2)});
  try {
    norm_ratios(p);
    FAIL();
  } catch (const ZeroLayerError& e) {
    EXPECT_EQ(e.layer(), 2u);
  }
}

TEST(BoundFormulas, ClassificationReferenceValue) {
  EXPECT_EQ(classification_rhs(std::sqrt(2.0), 4, 4, 0.1, 1.0), 250.0);
}

TEST(BoundFormulas, ClassificationLargeDepthLimit) {
  const double v = classification_rhs(3.0, 4, 1000000, 0.1, 1.5);
  const double limit = 2.0 * 1.5 * 1.5 / 0.01;
  EXPECT_LE(std::abs(v - limit) / limit, 1e-3);
}

TEST(BoundFormulas, EpsScaling) {
  const double a = classification_rhs(2.0, 2, 3, 0.1, 1.0);
  EXPECT_NEAR(classification_rhs(2.0, 2, 3, 0.2, 1.0), a / 4.0, 1e-12 * a);
  EXPECT_NEAR(regression_rhs(2.0, 2, 3, 0.2, 1.0), regression_rhs(2.0, 2, 3, 0.1, 1.0) / 4.0, 1e-12);
}

TEST(BoundFormulas, RegressionValues) {
  EXPECT_DOUBLE_EQ(regression_rhs(2.0, 2, 4, 1.0, 1.0), 2.0);
  for (std::size_t k = 2; k <= 5; ++k)
    for (std::size_t l = k; l <= 8; ++l) EXPECT_DOUBLE_EQ(regression_rhs(1.0, k, l, 0.5, 2.0), 16.0);
}

TEST(BoundFormulas, RegressionBelowClassification) {
  for (double b : {std::sqrt(2.0), 2.0, 10.0})
    for (std::size_t k = 2; k <= 4; ++k)
      for (std::size_t l = k; l <= 10; ++l)
        EXPECT_LE(regression_rhs(b, k, l, 0.3, 1.7), classification_rhs(b, k, l, 0.3, 1.7));
}

TEST(BoundFormulas, StrictlyDecreasingInDepth) {
  double prev_c = std::numeric_limits<double>::infinity(), prev_r = prev_c;
  for (std::size_t l = 3; l < 60; ++l) {
    const double c = classification_rhs(2.0, 3, l, 0.1, 1.0);
    const double r = regression_rhs(1.5, 3, l, 0.1, 1.0);
    EXPECT_LT(c, prev_c);
    EXPECT_LT(r, prev_r);
    prev_c = c;
    prev_r = r;
  }
}

TEST(BoundFormulas, RejectsBadArguments) {
  EXPECT_THROW(classification_rhs(0.0, 2, 2, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(classification_rhs(1.0, 1, 2, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(classification_rhs(1.0, 3, 2, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(regression_rhs(1.0, 2, 2, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(regression_rhs(1.0, 2, 2, 0.1, 0.0), std::invalid_argument);
}

TEST(RankLemma, IdentitySingleLayerHoldsWithEquality) {
  const MlpParams p = linear_net({Matrix::diagonal({2.0, 1.0, 0.1})});
  Rng rng(1);
  const LemmaReport r = verify_rank_lemma(p, random_matrix(4, 3, rng), {1e-3, 0.5, 1.5, 5.0});
  EXPECT_TRUE(r.violations.empty());
  for (const auto& c : r.checks) EXPECT_EQ(c.jacobian_rank, c.weight_rank);
  for (const auto& t : r.thresholds) EXPECT_EQ(t.largest_valid_eps, 5.0);
}

TEST(RankLemma, HugeEpsGivesZeroRanks) {
  const MlpParams p = test::random_relu_net({5, 6, 3}, 2);
  Rng rng(1);
  const LemmaReport r = verify_rank_lemma(p, random_matrix(3, 5, rng), {1e6});
  for (const auto& c : r.checks) {
    EXPECT_EQ(c.jacobian_rank, 0u);
    EXPECT_EQ(c.weight_rank, 0u);
  }
  EXPECT_THROW(verify_rank_lemma(p, random_matrix(3, 5, rng), {}), std::invalid_argument);
  EXPECT_THROW(verify_rank_lemma(p, random_matrix(3, 5, rng), {0.0}), std::invalid_argument);
}

// The lemma in its exact-rank form: no violations at the 1e-10-scaled proxy.
TEST(RankLemma, ExactProxyHoldsOnHundredRandomNets) {
  Rng rng(77);
  std::size_t checks = 0, violations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t depth = 1 + rng.below(5);
    std::vector<std::size_t> sizes{1 + rng.below(64)};
    for (std::size_t l = 0; l < depth; ++l) sizes.push_back(1 + rng.below(64));
    MlpParams p = test::random_relu_net(sizes, s);
    if (s % 5 == 0 && p.layer_count() > 1) {
      // A rank-deficient middle layer makes the bound bite.
      const std::size_t l = 1;
      p.weights[l] = random_matrix(p.weights[l].rows(), 1, rng) * random_matrix(1, p.weights[l].cols(), rng);
    }
    const LemmaReport r = verify_rank_lemma_exact(p, random_matrix(10, sizes.front(), rng));
    checks += r.checks.size();
    violations += r.violations.size();
  }
  EXPECT_GT(checks, 1000u);
  EXPECT_EQ(violations, 0u);
}

TEST(BoundReport, RankOneLayersHavePositiveSlack) {
  Rng rng(5);
  std::vector<Matrix> ws;
  const std::vector<std::size_t> sizes{6, 8, 8, 3};
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    ws.push_back(random_matrix(sizes[l + 1], 1, rng) * random_matrix(1, sizes[l], rng));
  const MlpParams p = linear_net(ws);
  const Matrix sample = random_matrix(20, 6, rng);
  const NormRatioReport norms = norm_ratios(p);
  for (double r : norms.ratios) EXPECT_NEAR(r, 1.0, 1e-12);
  double b = 0.0;
  for (double f : norms.frobenius) b = std::max(b, f);
  const BoundReport rep = bound_report(p, BoundTask::Classification, b, 2, sample, 1e-8);
  EXPECT_GE(rep.argmin_layer, 1u);
  EXPECT_LE(rep.argmin_layer, 3u);
  EXPECT_LE(rep.measured.mean_rank, 1.0);
  EXPECT_GT(rep.slack, 0.0);
  for (std::size_t l = 1; l <= 3; ++l) EXPECT_LE(local_rank(p, sample, l, 1e-8).mean_rank, 1.0);
  for (double v : rep.rhs) EXPECT_GT(v, 0.0);
}

TEST(BoundReport, ArgminMinimisesRhs) {
  const MlpParams p = test::random_relu_net({4, 7, 5, 2}, 3);
  Rng rng(2);
  const BoundReport rep = bound_report(p, BoundTask::Regression, 3.0, 2, random_matrix(8, 4, rng), 0.1);
  for (double v : rep.rhs) EXPECT_GE(v, rep.rhs[rep.argmin_layer - 1]);
  EXPECT_DOUBLE_EQ(rep.slack, rep.rhs[rep.argmin_layer - 1] - rep.measured.mean_rank);
  EXPECT_DOUBLE_EQ(rep.ratio_bound, regression_ratio_bound(3.0, 2, 3));
}

TEST(Witness, MarginRescalingGivesUnitMargin) {
  Dataset d;
  d.kind = TaskKind::Classification;
  d.class_count = 2;
  d.inputs = Matrix{{1, 0}, {0, 1}};
  d.labels = {0, 1};
  d.digest = "w";
  const MlpParams p = linear_net({Matrix{{2, 0}, {0, 2}}, Matrix{{1, -1}, {-1, 1}}});
  EXPECT_NEAR(min_margin(p, d), 4.0, 1e-14);
  const Witness w = derive_witness(p, d, BoundTask::Classification);
  EXPECT_TRUE(w.valid);
  EXPECT_NEAR(w.scale, 0.25, 1e-15);
  EXPECT_NEAR(min_margin(rescale_output(p, w.scale), d), 1.0, 1e-12);
  EXPECT_EQ(w.depth, 2u);
}

TEST(Witness, RegressionResidual) {
  const Dataset d = synthetic_regression_set(3, 1, 16, 1);
  const Witness w = derive_witness(test::random_relu_net({3, 4, 1}, 1), d, BoundTask::Regression);
  EXPECT_FALSE(w.valid);
  EXPECT_GT(w.fit_quality, 1e-3);
  EXPECT_EQ(bound_task_from_string("regression"), BoundTask::Regression);
  EXPECT_THROW(bound_task_from_string("ranking"), std::invalid_argument);
}

}  // namespace
}  // namespace lrlab
