#include <gtest/gtest.h>

#include <sstream>

#include "lrlab/local_rank.hpp"
#include "test_support.hpp"

namespace lrlab {
namespace {

using test::random_matrix;

MlpParams linear_net(std::vector<Matrix> ws) {
  MlpParams p;
  for (auto& w : ws) {
    p.biases.emplace_back(w.rows(), 0.0);
    p.weights.push_back(std::move(w));
    p.activations.push_back(Activation::Identity);
  }
  return p;
}

TEST(LayerJacobian, IdentityWeightsWithReluMask) {
  MlpParams p;
  p.weights = {Matrix::identity(2), Matrix{{1, 1}}};
  p.biases = {Vector{0, 0}, Vector{0}};
  p.activations = {Activation::ReLU, Activation::Identity};
  const Matrix j = layer_jacobian(p, std::vector<double>{1, -1}, 2);
  EXPECT_EQ(j, (Matrix{{1, 0}}));
  EXPECT_EQ(layer_jacobian(p, std::vector<double>{1, -1}, 1), Matrix::identity(2));
  EXPECT_THROW(layer_jacobian(p, std::vector<double>{1, -1}, 0), std::invalid_argument);
  EXPECT_THROW(layer_jacobian(p, std::vector<double>{1, -1}, 3), std::invalid_argument);
}

TEST(LayerJacobian, LinearNetworkIsWeightProductEverywhere) {
  Rng rng(2);
  const Matrix w1 = random_matrix(4, 3, rng), w2 = random_matrix(5, 4, rng), w3 = random_matrix(2, 5, rng);
  const MlpParams p = linear_net({w1, w2, w3});
  const Matrix expect = w3 * (w2 * w1);
  for (int t = 0; t < 5; ++t) {
    const Matrix x = random_matrix(1, 3, rng);
    EXPECT_LE(test::max_rel_diff(layer_jacobian(p, x.row(0), 3), expect), 1e-14);
    EXPECT_LE(test::max_rel_diff(output_jacobian(p, x.row(0)), expect), 1e-14);
  }
}

// Product formula versus central differences (h = 1e-6) on inputs whose
// pre-activations all stay at least 1e-4 from zero.
TEST(LayerJacobian, MatchesFiniteDifferencesOnFiftyNets) {
  Rng rng(11);
  int nets = 0, points = 0;
  for (std::uint64_t seed = 0; nets < 50; ++seed) {
    std::vector<std::size_t> sizes{1 + rng.below(8)};
    const std::size_t depth = 1 + rng.below(4);
    for (std::size_t l = 0; l < depth; ++l) sizes.push_back(1 + rng.below(8));
    const MlpParams p = test::random_relu_net(sizes, seed);
    ++nets;
    for (int t = 0; t < 4; ++t) {
      const Matrix xm = random_matrix(1, sizes.front(), rng);
      const ForwardTrace tr = forward(p, xm.row(0));
      bool clear = true;
      for (const auto& pre : tr.pre_activations)
        for (double v : pre) clear = clear && std::abs(v) > 1e-4;
      if (!clear) continue;
      ++points;
      const auto jacs = layer_jacobians(p, xm.row(0));
      for (std::size_t l = 1; l <= p.layer_count(); ++l) {
        const Matrix& j = jacs[l - 1];
        EXPECT_EQ(j, layer_jacobian(p, xm.row(0), l));
        for (std::size_t c = 0; c < sizes.front(); ++c) {
          Vector xp(xm.row(0).begin(), xm.row(0).end()), xn = xp;
          xp[c] += 1e-6;
          xn[c] -= 1e-6;
          const Vector fp = forward(p, xp).pre_activations[l - 1];
          const Vector fn = forward(p, xn).pre_activations[l - 1];
          for (std::size_t r = 0; r < fp.size(); ++r) ASSERT_NEAR(j(r, c), (fp[r] - fn[r]) / 2e-6, 1e-5);
        }
      }
    }
  }
  EXPECT_GT(points, 100);
}

TEST(LayerJacobian, OutputSideAccumulationAgrees) {
  Rng rng(5);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const MlpParams p = test::random_relu_net({6, 9, 7, 3}, s);
    const Matrix x = random_matrix(1, 6, rng);
    EXPECT_LE(test::max_rel_diff(output_jacobian(p, x.row(0)), layer_jacobian(p, x.row(0), 3)), 1e-13);
  }
}

TEST(LocalRank, DiagonalSingleLayer) {
  const MlpParams p = linear_net({Matrix::diagonal({3.0, 1.0, 0.1})});
  Rng rng(1);
  const RankEstimate r = local_rank(p, random_matrix(7, 3, rng), 1, 0.5);
  EXPECT_EQ(r.mean_rank, 2.0);
  EXPECT_EQ(r.std_rank, 0.0);
  EXPECT_EQ(r.sample_size, 7u);
  EXPECT_EQ(r.per_sample_ranks, std::vector<std::size_t>(7, 2));
}

TEST(LocalRank, ZeroNetworkHasRankZero) {
  MlpParams p = init_mlp(std::vector<std::size_t>{4, 5, 3}, 1).zeros_like();
  Rng rng(1);
  EXPECT_EQ(local_rank(p, random_matrix(5, 4, rng), 2, 1e-12).mean_rank, 0.0);
}

TEST(LocalRank, TinyEpsEqualsExactRank) {
  // Rank-2 first layer: every Jacobian has exact rank <= 2.
  Rng rng(8);
  MlpParams p = test::random_relu_net({6, 8, 4}, 3);
  p.weights[0] = random_matrix(8, 2, rng) * random_matrix(2, 6, rng);
  const Matrix sample = random_matrix(20, 6, rng);
  const RankEstimate r = local_rank(p, sample, 2, 1e-9);
  double exact = 0.0;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    const Vector sv = singular_values(layer_jacobian(p, sample.row(i), 2));
    exact += static_cast<double>(epsilon_rank(sv, 1e-10 * std::max(sv.front(), 1e-300)));
  }
  EXPECT_DOUBLE_EQ(r.mean_rank, exact / 20.0);
}

TEST(LocalRank, UntrainedHeNetIsInputLimited) {
  const MlpParams p = init_mlp(std::vector<std::size_t>{100, 200, 200, 2}, 42);
  Rng rng(43);
  const Matrix sample = random_matrix(16, 100, rng);
  const auto all = local_rank_all_layers(p, sample, 1e-6);
  EXPECT_EQ(all[0].mean_rank, 100.0);
  // Layer 2 is W2 D1 W1: generically min(input dim, active units of layer 1).
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    const ForwardTrace t = forward(p, sample.row(i));
    const auto& mask = t.relu_masks[0];
    const auto active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    EXPECT_EQ(all[1].per_sample_ranks[i], std::min<std::size_t>(100, active)) << i;
  }
  EXPECT_EQ(all[2].mean_rank, 2.0);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t r : all[l].per_sample_ranks) EXPECT_LE(r, std::min<std::size_t>(p.weights[l].rows(), 100));
}

TEST(LocalRank, InvariantUnderPermutationAndThreads) {
  const MlpParams p = test::random_relu_net({10, 12, 12, 4}, 6);
  Rng rng(2);
  const Matrix sample = random_matrix(30, 10, rng);
  Matrix reversed(30, 10);
  for (std::size_t i = 0; i < 30; ++i)
    std::copy(sample.row(29 - i).begin(), sample.row(29 - i).end(), reversed.row(i).begin());
  for (std::size_t l = 1; l <= 3; ++l) {
    const RankEstimate a = local_rank(p, sample, l, 0.3);
    EXPECT_EQ(a.mean_rank, local_rank(p, reversed, l, 0.3).mean_rank);
    const RankEstimate threaded = local_rank(p, sample, l, 0.3, EpsMode::Absolute, 4);
    EXPECT_EQ(a.per_sample_ranks, threaded.per_sample_ranks);
    EXPECT_EQ(a.mean_rank, threaded.mean_rank);
    EXPECT_EQ(a.std_rank, threaded.std_rank);
  }
}

TEST(LocalRank, NonincreasingInEps) {
  const MlpParams p = test::random_relu_net({8, 10, 10, 3}, 9);
  Rng rng(4);
  const Matrix sample = random_matrix(20, 8, rng);
  for (std::size_t l = 1; l <= 3; ++l) {
    double prev = 1e9;
    for (double eps = 1e-4; eps < 1e2; eps *= 2.0) {
      const double r = local_rank(p, sample, l, eps).mean_rank;
      EXPECT_LE(r, prev);
      prev = r;
    }
  }
}

TEST(LocalRank, RelativeModeScalesWithTopSingularValue) {
  const MlpParams p = linear_net({Matrix::diagonal({100.0, 10.0, 0.5})});
  Rng rng(1);
  const Matrix sample = random_matrix(3, 3, rng);
  EXPECT_EQ(local_rank(p, sample, 1, 0.01, EpsMode::Relative).mean_rank, 2.0);
  EXPECT_EQ(local_rank(p, sample, 1, 0.01, EpsMode::Absolute).mean_rank, 3.0);
}

TEST(LocalRank, Errors) {
  const MlpParams p = test::random_relu_net({3, 3, 1}, 1);
  Rng rng(1);
  const Matrix sample = random_matrix(2, 3, rng);
  EXPECT_THROW(local_rank(p, sample, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(local_rank(p, sample, 1, -1.0), std::invalid_argument);
  EXPECT_THROW(local_rank(p, sample, 3, 0.1), std::invalid_argument);
  EXPECT_THROW(local_rank(p, random_matrix(2, 4, rng), 1, 0.1), std::invalid_argument);
  EXPECT_THROW(eps_mode_from_string("loose"), std::invalid_argument);
  EXPECT_EQ(eps_mode_from_string(to_string(EpsMode::Relative)), EpsMode::Relative);
}

TEST(SummarizeRanks, MeanAndPopulationStd) {
  const RankEstimate r = summarize_ranks(2, 0.1, {1, 3, 3, 1});
  EXPECT_EQ(r.mean_rank, 2.0);
  EXPECT_EQ(r.std_rank, 1.0);
  EXPECT_EQ(r.layer, 2u);
  EXPECT_THROW(summarize_ranks(1, 0.1, {}), std::invalid_argument);
}

TEST(RankTrajectory, SeriesShapeAndCsv) {
  const MlpParams p = test::random_relu_net({4, 5, 2}, 1);
  Rng rng(3);
  const Matrix sample = random_matrix(6, 4, rng);
  const std::vector<Checkpoint> one{{0, p}};
  const RankSeries s1 = rank_trajectory(one, sample, 0.01);
  ASSERT_EQ(s1.layers.size(), 2u);
  EXPECT_EQ(s1.layers[0].size(), 1u);

  MlpParams q = p;
  q.weights[0] = 0.5 * q.weights[0];
  const std::vector<Checkpoint> two{{0, p}, {10, q}};
  const RankSeries s2 = rank_trajectory(two, sample, 0.01, EpsMode::Absolute, 2, "run");
  EXPECT_EQ(s2.layers[1][1].step, 10u);
  const std::string csv = rank_series_csv(s2);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kRankSeriesHeader);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 10), "0,1,0.01,4");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(RankTrajectory, RejectsMixedArchitectures) {
  Rng rng(3);
  const std::vector<Checkpoint> mixed{{0, init_mlp(std::vector<std::size_t>{4, 5, 2}, 1)},
                                      {1, init_mlp(std::vector<std::size_t>{4, 6, 2}, 1)}};
  EXPECT_THROW(rank_trajectory(mixed, random_matrix(2, 4, rng), 0.1), std::invalid_argument);
}

TEST(RankTrajectory, AppendRequiresIncreasingSteps) {
  RankSeries s;
  s.eps = 0.1;
  append_to_series(s, 0, {summarize_ranks(1, 0.1, {1})});
  append_to_series(s, 5, {summarize_ranks(1, 0.1, {1})});
  EXPECT_THROW(append_to_series(s, 5, {summarize_ranks(1, 0.1, {1})}), std::invalid_argument);
}

}  // namespace
}  // namespace lrlab
