#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "pseudolab/numerics/mlp.hpp"
#include "support/oracles.hpp"

namespace pseudolab {
namespace {

TEST(MlpForward, ZeroNetworkGivesZeroLogits) {
  const std::vector<std::size_t> dims{3, 5, 4};
  MlpParams p = zero_mlp(dims);
  const Tensor x = Tensor::matrix({{1, -2, 3}, {0.5, 7, -1}});
  Graph g;
  Var out = mlp_forward(g, p, g.constant(x));
  for (double v : g.value(out).data()) EXPECT_EQ(v, 0.0);
  const Tensor logits = mlp_logits(p, x);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, SingleIdentityLayer) {
  MlpParams p{{DenseLayer{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})}}};
  const Tensor x = Tensor::matrix({{1, 2}});
  Graph g;
  EXPECT_EQ(g.value(mlp_forward(g, p, g.constant(x))), x);
  EXPECT_EQ(mlp_logits(p, x), x);
}

TEST(MlpForward, MatchesStraightLineOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> dims{1 + rng() % 6, 1 + rng() % 9, 2 + rng() % 5};
    MlpParams p = init_mlp(dims, rng());
    for (auto* t : p.parameters())
      for (auto& v : t->data()) v += 0.1 * n(rng);
    Tensor x({1 + rng() % 7, dims[0]});
    for (auto& v : x.data()) v = n(rng);
    const auto expected = oracle::forward(p, oracle::to_matrix(x));
    Graph g;
    const Tensor& got = g.value(mlp_forward(g, p, g.constant(x)));
    const Tensor fast = mlp_logits(p, x);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < dims.back(); ++j) {
        EXPECT_NEAR(got(i, j), expected[i][j], 1e-12);
        EXPECT_NEAR(fast(i, j), expected[i][j], 1e-12);
      }
  }
}

TEST(MlpForward, DimensionErrorNamesLayer) {
  const std::vector<std::size_t> dims{3, 4, 2};
  MlpParams p = init_mlp(dims, 1);
  const Tensor wrong({2, 5});
  Graph g;
  try {
    mlp_forward(g, p, g.constant(wrong));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
  p.layers[1].weight = Tensor({5, 2});
  try {
    (void)mlp_logits(p, Tensor({1, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(MlpInit, GlorotBoundsZeroBiasAndDeterminism) {
  const std::vector<std::size_t> dims{8, 16, 10};
  const MlpParams a = init_mlp(dims, 42), b = init_mlp(dims, 42), c = init_mlp(dims, 43);
  EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
  EXPECT_FALSE(a.layers[0].weight == c.layers[0].weight);
  const double limit0 = std::sqrt(6.0 / 24.0);
  for (double w : a.layers[0].weight.data()) EXPECT_LE(std::abs(w), limit0);
  for (double v : a.layers[1].bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(MlpParamsIo, TextRoundTripIsExact) {
  const std::vector<std::size_t> dims{3, 7, 4};
  const MlpParams p = init_mlp(dims, 99);
  std::stringstream ss;
  write_params(ss, p);
  const MlpParams q = read_params(ss);
  ASSERT_TRUE(q.same_shape(p));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    EXPECT_EQ(q.layers[l].weight, p.layers[l].weight);
    EXPECT_EQ(q.layers[l].bias, p.layers[l].bias);
  }
}

TEST(MlpBackward, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  int checked = 0;
  while (checked < 25) {
    const std::vector<std::size_t> dims{2 + rng() % 4, 2 + rng() % 8, 2 + rng() % 4};
    MlpParams p = init_mlp(dims, rng());
    for (auto& v : p.layers[0].bias.data()) v = 0.3 * n(rng);
    Tensor x({1 + rng() % 5, dims[0]});
    for (auto& v : x.data()) v = n(rng);
    if (oracle::min_abs_preactivation(p, oracle::to_matrix(x)) < 1e-3) continue;
    Tensor target({x.rows(), dims.back()});
    for (std::size_t i = 0; i < x.rows(); ++i) target(i, rng() % dims.back()) = 1.0;

    auto loss_value = [&] {
      Graph g;
      return g.value(g.cross_entropy(mlp_forward(g, p, g.constant(x)), target))[0];
    };
    p.clear_grads();
    {
      Graph g;
      g.backward(g.cross_entropy(mlp_forward(g, p, g.constant(x)), target));
    }
    for (Tensor* t : p.parameters()) {
      const std::vector<double> analytic(t->grad().begin(), t->grad().end());
      const auto numeric = oracle::central_difference(*t, loss_value);
      for (std::size_t i = 0; i < analytic.size(); ++i)
        EXPECT_LT(oracle::relative_error(analytic[i], numeric[i]), 1e-4) << analytic[i] << " vs " << numeric[i];
    }
    ++checked;
  }
}

}  // namespace
}  // namespace pseudolab
