#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pseudolab/datagen/generate.hpp"
#include "pseudolab/trainer/trainer.hpp"
#include "support/oracles.hpp"

namespace pseudolab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Dataset small_train(std::uint64_t seed = 1, int n_ood = 0) {
  MixtureSpec mix{sphere_means(4, 3, 4.0, seed), std::vector<double>(4, 1.0)};
  Dataset ds = split_labeled(make_mixture(mix, std::vector<int>{60, 40, 20, 10}, seed), 0.2, seed);
  if (n_ood > 0) ds = inject_ood(ds, n_ood, default_ood(mix), seed);
  return ds;
}

Dataset small_test(std::uint64_t seed = 1) {
  MixtureSpec mix{sphere_means(4, 3, 4.0, seed), std::vector<double>(4, 1.0)};
  return make_mixture(mix, std::vector<int>(4, 50), seed + 1000);
}

TrainConfig small_config() {
  TrainConfig c;
  c.labeled_batch = 8;
  c.unlabeled_ratio = 3;
  c.total_iters = 120;
  c.eval_every = 40;
  c.hidden = {6};
  c.seed = 5;
  c.group_head = 1;
  c.group_tail = 1;
  c.strategy = GateStrategy::energy(-3.0);
  return c;
}

TEST(SampleBatches, SizesFollowRatio) {
  const Dataset ds = small_train();
  TrainConfig c;
  const Batches b = sample_batches(ds, c, 0);
  EXPECT_EQ(b.labeled_x.rows(), 64u);
  EXPECT_EQ(b.unlabeled_x.rows(), 448u);
  EXPECT_EQ(b.unlabeled_index.size(), 448u);
  for (auto i : b.labeled_index) EXPECT_EQ(ds.origin[i], Origin::labeled);
  for (auto i : b.unlabeled_index) EXPECT_NE(ds.origin[i], Origin::labeled);
}

TEST(SampleBatches, DeterministicInSeedAndIteration) {
  const Dataset ds = small_train();
  TrainConfig c = small_config();
  const Batches a = sample_batches(ds, c, 7), b = sample_batches(ds, c, 7), d = sample_batches(ds, c, 8);
  EXPECT_EQ(a.labeled_index, b.labeled_index);
  EXPECT_EQ(a.unlabeled_index, b.unlabeled_index);
  EXPECT_NE(a.unlabeled_index, d.unlabeled_index);
}

TEST(SampleBatches, OodAppearsAtPoolProportion) {
  const Dataset ds = small_train(1, 50);
  const double pool = static_cast<double>(ds.count(Origin::unlabeled) + ds.count(Origin::ood));
  const double expected = static_cast<double>(ds.count(Origin::ood)) / pool;
  TrainConfig c = small_config();
  BatchSampler sampler(ds, c);
  std::size_t draws = 0, ood = 0;
  for (std::size_t it = 0; draws < 10000; ++it)
    for (auto i : sampler.sample(it).unlabeled_index) {
      ++draws;
      ood += ds.origin[i] == Origin::ood;
    }
  EXPECT_NEAR(static_cast<double>(ood) / static_cast<double>(draws), expected, 0.02);
}

TEST(SampleBatches, EmptyLabeledPool) {
  Dataset ds = small_train();
  for (auto& o : ds.origin) o = Origin::unlabeled;
  EXPECT_THROW(sample_batches(ds, small_config(), 0), ContractError);
}

TEST(SupervisedLoss, ZeroNetworkIsLogK) {
  const std::vector<std::size_t> dims{3, 5, 10};
  MlpParams p = zero_mlp(dims);
  const Tensor x = Tensor::matrix({{1, 2, 3}, {-1, 0, 4}, {0, 0, 0}});
  const std::vector<std::size_t> y{0, 9, 4};
  Graph g;
  EXPECT_NEAR(g.value(supervised_loss(g, p, x, y))[0], std::log(10.0), 1e-15);
  Graph g2;
  EXPECT_THROW(supervised_loss(g2, p, x, std::vector<std::size_t>{}), ContractError);
}

TEST(SupervisedLoss, SaturatedMargin) {
  MlpParams p{{DenseLayer{Tensor::matrix({{100, 0}, {0, 100}}), Tensor::vector({0, 0})}}};
  const Tensor x = Tensor::matrix({{1, 0}, {0, 1}});
  Graph g;
  EXPECT_NEAR(g.value(supervised_loss(g, p, x, std::vector<std::size_t>{0, 1}))[0], 0.0, 1e-40);
}

TEST(SupervisedLoss, MatchesPerSampleOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> dims{4, 7, 5};
    MlpParams p = init_mlp(dims, rng());
    Tensor x({1 + rng() % 10, 4});
    for (auto& v : x.data()) v = n(rng);
    std::vector<std::size_t> y(x.rows());
    for (auto& v : y) v = rng() % 5;
    const auto logits = oracle::forward(p, oracle::to_matrix(x));
    double expected = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) expected += oracle::cross_entropy_row(logits[i], y[i]);
    expected /= static_cast<double>(y.size());
    Graph g;
    EXPECT_NEAR(g.value(supervised_loss(g, p, x, y))[0], expected, 1e-10);
  }
}

TEST(UnsupervisedLoss, NothingGatedIsExactlyZero) {
  const std::vector<std::size_t> dims{3, 4, 5};
  MlpParams p = init_mlp(dims, 2);
  const Tensor x = Tensor::matrix({{1, 2, 3}, {3, 2, 1}});
  Graph g;
  auto u = unsupervised_loss(g, p, x, x, GateStrategy::energy(-kInf));
  EXPECT_EQ(g.value(u.loss)[0], 0.0);
  for (const auto& d : u.decisions) EXPECT_FALSE(d.gated);
}

TEST(UnsupervisedLoss, SelfConsistentSaturatedIsZero) {
  MlpParams p{{DenseLayer{Tensor::matrix({{80, 0}, {0, 80}}), Tensor::vector({0, 0})}}};
  const Tensor x = Tensor::matrix({{1, 0}, {0, 1}, {2, 0.5}});
  Graph g;
  auto u = unsupervised_loss(g, p, x, x, GateStrategy::confidence(0.5));
  for (const auto& d : u.decisions) EXPECT_TRUE(d.gated);
  EXPECT_NEAR(g.value(u.loss)[0], 0.0, 1e-25);
}

TEST(UnsupervisedLoss, FilteredSumOverFullBatch) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0, 1.5);
  for (const GateKind kind : {GateKind::energy, GateKind::confidence}) {
    const std::vector<std::size_t> dims{3, 8, 4};
    MlpParams p = init_mlp(dims, 77);
    Tensor weak({8, 3}), strong({8, 3});
    for (auto& v : weak.data()) v = n(rng);
    for (std::size_t i = 0; i < weak.size(); ++i) strong[i] = weak[i] + 0.5 * n(rng);
    const auto wl = oracle::forward(p, oracle::to_matrix(weak));
    const auto sl = oracle::forward(p, oracle::to_matrix(strong));

    // threshold halfway through the sorted scores so that half the batch passes
    std::vector<double> scores;
    for (const auto& r : wl) scores.push_back(kind == GateKind::energy ? oracle::energy(r, 1.0) : oracle::max_softmax(r));
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const double mid = 0.5 * (sorted[3] + sorted[4]);
    const GateStrategy s = kind == GateKind::energy ? GateStrategy::energy(mid) : GateStrategy::confidence(mid);

    double sum = 0.0;
    std::size_t gated = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      const bool pass = kind == GateKind::energy ? scores[i] < mid : scores[i] >= mid;
      if (!pass) continue;
      ++gated;
      sum += oracle::cross_entropy_row(sl[i], oracle::argmax(wl[i]));
    }
    ASSERT_EQ(gated, 4u);
    Graph g;
    auto u = unsupervised_loss(g, p, weak, strong, s);
    EXPECT_NEAR(g.value(u.loss)[0], sum / 8.0, 1e-10);
  }
}

// The gradient must equal that of the loss with pseudo-labels and mask frozen:
// nothing flows back through the weak-view branch.
TEST(UnsupervisedLoss, GradientOnlyThroughStrongView) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0, 1.5);
  const std::vector<std::size_t> dims{3, 6, 4};
  MlpParams p = init_mlp(dims, 8);
  Tensor weak({8, 3}), strong({8, 3});
  for (auto& v : weak.data()) v = n(rng);
  for (std::size_t i = 0; i < weak.size(); ++i) strong[i] = weak[i] + 0.3 * n(rng);
  const GateStrategy s = GateStrategy::confidence(0.4);

  const auto wl = oracle::forward(p, oracle::to_matrix(weak));
  std::vector<std::size_t> targets(8);
  std::vector<bool> mask(8);
  for (std::size_t i = 0; i < 8; ++i) {
    targets[i] = oracle::argmax(wl[i]);
    mask[i] = oracle::max_softmax(wl[i]) >= s.tau_c;
  }
  auto frozen_loss = [&] {
    const auto sl = oracle::forward(p, oracle::to_matrix(strong));
    double sum = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      if (mask[i]) sum += oracle::cross_entropy_row(sl[i], targets[i]);
    return sum / 8.0;
  };
  p.clear_grads();
  {
    Graph g;
    g.backward(unsupervised_loss(g, p, weak, strong, s).loss);
  }
  for (Tensor* t : p.parameters()) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    const auto numeric = oracle::central_difference(*t, frozen_loss);
    for (std::size_t i = 0; i < analytic.size(); ++i) EXPECT_LT(oracle::relative_error(analytic[i], numeric[i]), 1e-4);
  }
}

TEST(Evaluate, ConstantModelHitsOneClass) {
  const Dataset test = small_test();
  const std::vector<std::size_t> dims{3, 4};
  EXPECT_DOUBLE_EQ(evaluate(zero_mlp(dims), test), 0.25);
}

TEST(Evaluate, PerfectModel) {
  Dataset ds;
  ds.features = Tensor::matrix({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 0, 1}});
  ds.labels = {0, 2, 1, 2};
  ds.origin.assign(4, Origin::labeled);
  recount(ds, 3);
  MlpParams p{{DenseLayer{Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), Tensor({3})}}};
  EXPECT_EQ(evaluate(p, ds), 1.0);
}

TEST(Evaluate, RandomModelOnRandomLabels) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  Dataset ds;
  ds.features = Tensor({10000, 5});
  for (auto& v : ds.features.data()) v = n(rng);
  for (int i = 0; i < 10000; ++i) ds.labels.push_back(static_cast<int>(rng() % 10));
  ds.origin.assign(10000, Origin::labeled);
  recount(ds, 10);
  const std::vector<std::size_t> dims{5, 16, 10};
  EXPECT_NEAR(evaluate(init_mlp(dims, 3), ds), 0.1, 0.01);
}

TEST(Evaluate, SkipsOodAndRejectsEmpty) {
  Dataset only_ood;
  only_ood.features = Tensor({2, 3});
  only_ood.labels = {kUnknownLabel, kUnknownLabel};
  only_ood.origin = {Origin::ood, Origin::ood};
  only_ood.class_counts = {0, 0, 0};
  const std::vector<std::size_t> dims{3, 3};
  EXPECT_THROW(evaluate(zero_mlp(dims), only_ood), ContractError);
}

// Supervised-only reference loop written against the primitives directly.
MlpParams supervised_only(const Dataset& ds, const TrainConfig& cfg, std::size_t steps) {
  std::vector<std::size_t> dims{ds.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(ds.num_classes());
  MlpParams p = init_mlp(dims, cfg.seed);
  OptState opt;
  opt.lr0 = cfg.lr0;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.total_iters = cfg.total_iters;
  opt.schedule = is_long_tailed(ds) ? Schedule::constant : Schedule::cosine;
  BatchSampler sampler(ds, cfg);
  for (std::size_t it = 0; it < steps; ++it) {
    const Batches b = sampler.sample(it);
    const Tensor x = weak_view(b.labeled_x, cfg.augment, derive_seed(cfg.seed, "augment", it, 0));
    Graph g;
    p.clear_grads();
    g.backward(supervised_loss(g, p, x, b.labeled_targets));
    sgd_step(p, opt);
  }
  return p;
}

void expect_same_params(const MlpParams& a, const MlpParams& b) {
  ASSERT_TRUE(a.same_shape(b));
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].weight, b.layers[l].weight);
    EXPECT_EQ(a.layers[l].bias, b.layers[l].bias);
  }
}

TEST(TrainStep, LambdaZeroIsSupervisedOnly) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.strategy = GateStrategy::energy(kInf);  // everything gates, but is weighted by zero
  cfg.lambda_u = 0.0;
  Trainer t(train, test, cfg);
  t.run();
  expect_same_params(t.params(), supervised_only(train, cfg, cfg.total_iters));
}

TEST(TrainStep, EnergyGateAtMinusInfinityIsSupervisedOnly) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.strategy = GateStrategy::energy(-kInf);
  Trainer t(train, test, cfg);
  const auto records = t.run();
  expect_same_params(t.params(), supervised_only(train, cfg, cfg.total_iters));
  for (const auto& r : records) {
    EXPECT_EQ(r.loss_u, 0.0);
    EXPECT_EQ(r.mask_rate, 0.0);
    EXPECT_TRUE(std::isfinite(r.loss_total));
  }
}

TEST(TrainStep, OneStepMatchesComposedOracle) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.strategy = GateStrategy::confidence(0.3);
  cfg.lambda_u = 0.7;
  cfg.schedule = Schedule::cosine;

  std::vector<std::size_t> dims{3, 6, 4};
  MlpParams p = init_mlp(dims, cfg.seed);
  const MlpParams before = p;
  OptState opt;
  opt.lr0 = cfg.lr0;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.total_iters = cfg.total_iters;
  opt.schedule = Schedule::cosine;
  EmaParams ema = make_ema(p, cfg.ema_momentum);
  const Batches b = sample_batches(train, cfg, 0);
  const StepResult r = train_step(p, opt, ema, b, cfg, cfg.strategy);
  ASSERT_GT(r.mask_rate, 0.0);
  ASSERT_LT(r.mask_rate, 1.0);
  EXPECT_NEAR(r.loss_total, r.loss_s + cfg.lambda_u * r.loss_u, 1e-12);

  // Oracle: same views, pseudo-labels frozen from the initial parameters.
  const Tensor xl = weak_view(b.labeled_x, cfg.augment, derive_seed(cfg.seed, "augment", 0, 0));
  const Tensor xw = weak_view(b.unlabeled_x, cfg.augment, derive_seed(cfg.seed, "augment", 0, 1));
  const Tensor xs = strong_view(b.unlabeled_x, cfg.augment, derive_seed(cfg.seed, "augment", 0, 2));
  MlpParams q = before;
  const auto wl = oracle::forward(q, oracle::to_matrix(xw));
  const std::size_t bu = xw.rows();
  std::vector<std::size_t> targets(bu);
  std::vector<bool> mask(bu);
  for (std::size_t i = 0; i < bu; ++i) {
    targets[i] = oracle::argmax(wl[i]);
    mask[i] = oracle::max_softmax(wl[i]) >= cfg.strategy.tau_c;
  }
  auto loss = [&] {
    const auto ll = oracle::forward(q, oracle::to_matrix(xl));
    double ls = 0.0;
    for (std::size_t i = 0; i < ll.size(); ++i) ls += oracle::cross_entropy_row(ll[i], b.labeled_targets[i]);
    ls /= static_cast<double>(ll.size());
    const auto sl = oracle::forward(q, oracle::to_matrix(xs));
    double lu = 0.0;
    for (std::size_t i = 0; i < bu; ++i)
      if (mask[i]) lu += oracle::cross_entropy_row(sl[i], targets[i]);
    return ls + cfg.lambda_u * lu / static_cast<double>(bu);
  };
  EXPECT_NEAR(loss(), r.loss_total, 1e-10);
  auto qp = q.parameters();
  auto after = p.parameters();
  for (std::size_t k = 0; k < qp.size(); ++k) {
    const auto grad = oracle::central_difference(*qp[k], loss);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      // first step from zero velocity: delta = -lr0 * (grad + wd * w)
      const double delta = -cfg.lr0 * (grad[i] + cfg.weight_decay * (*qp[k])[i]);
      EXPECT_NEAR((*after[k])[i] - (*qp[k])[i], delta, 1e-4);
    }
  }
}

TEST(Trainer, LossDecompositionAndMaskRate) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.lambda_u = 1.3;
  Trainer t(train, test, cfg);
  while (!t.done()) {
    const StepResult r = t.step();
    EXPECT_NEAR(r.loss_total, r.loss_s + 1.3 * r.loss_u, 1e-12);
    std::size_t gated = 0;
    for (const auto& d : r.decisions) gated += d.gated;
    EXPECT_EQ(r.mask_rate, static_cast<double>(gated) / static_cast<double>(cfg.unlabeled_batch()));
  }
}

TEST(Trainer, SeededRunsAreBitIdentical) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  Trainer a(train, test, cfg), b(train, test, cfg);
  EXPECT_EQ(a.run(), b.run());
  expect_same_params(a.params(), b.params());
  expect_same_params(a.ema().shadow, b.ema().shadow);
  cfg.seed = 6;
  Trainer c(train, test, cfg);
  c.run();
  EXPECT_FALSE(c.params().layers[0].weight == a.params().layers[0].weight);
}

TEST(Trainer, RecordCadence) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.total_iters = 90;
  cfg.eval_every = 40;
  Trainer t(train, test, cfg);
  const auto recs = t.run();
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].iteration, 40u);
  EXPECT_EQ(recs[1].iteration, 80u);
  EXPECT_EQ(recs[2].iteration, 90u);
}

TEST(Trainer, LongTailedDataDefaultsToConstantSchedule) {
  const Dataset train = small_train(), test = small_test();
  Trainer lt(train, test, small_config());
  EXPECT_EQ(lt.optimizer().schedule, Schedule::constant);
  MixtureSpec mix{sphere_means(4, 3, 4.0, 1), std::vector<double>(4, 1.0)};
  const Dataset balanced = split_labeled(make_mixture(mix, std::vector<int>(4, 30), 1), 0.2, 1);
  Trainer bal(balanced, test, small_config());
  EXPECT_EQ(bal.optimizer().schedule, Schedule::cosine);
}

TEST(Trainer, EmptyGateStaysFinite) {
  const Dataset train = small_train(1, 20), test = small_test();
  TrainConfig cfg = small_config();
  cfg.strategy = GateStrategy::confidence(1.0);
  cfg.total_iters = 300;
  Trainer t(train, test, cfg);
  for (const auto& r : t.run()) {
    EXPECT_TRUE(std::isfinite(r.loss_total));
    EXPECT_EQ(r.ood_included, 0);
  }
  for (const auto* p : t.params().parameters()) EXPECT_TRUE(p->all_finite());
}

TEST(Trainer, DivergenceAbortsWithStateDump) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.lr0 = 1e30;
  Trainer t(train, test, cfg);
  try {
    t.run();
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(e.state_dump().find("loss_s"), std::string::npos);
    EXPECT_NE(e.state_dump().find("param 0"), std::string::npos);
  }
}

TEST(Trainer, FlexibleProgressTracksGatedPredictions) {
  const Dataset train = small_train(), test = small_test();
  TrainConfig cfg = small_config();
  cfg.strategy = GateStrategy::flexible(0.5, 4);
  Trainer t(train, test, cfg);
  const StepResult r = t.step();
  std::vector<long> expected(4, 0);
  for (const auto& d : r.decisions)
    if (d.gated) ++expected[d.predicted_class];
  EXPECT_EQ(t.strategy().class_progress, expected);
}

TEST(Trainer, DecisionsCarryDatasetIndicesAndTruth) {
  const Dataset train = small_train(1, 15), test = small_test();
  TrainConfig cfg = small_config();
  cfg.total_iters = 5;
  Trainer t(train, test, cfg);
  std::size_t calls = 0;
  t.run([&](std::size_t it, std::span<const PseudoLabelDecision> ds) {
    EXPECT_EQ(it, ++calls);
    EXPECT_EQ(ds.size(), cfg.unlabeled_batch());
    for (const auto& d : ds) {
      EXPECT_NE(train.origin[d.sample_index], Origin::labeled);
      EXPECT_EQ(d.true_class, train.labels[d.sample_index]);
    }
  });
  EXPECT_EQ(calls, 5u);
}

}  // namespace
}  // namespace pseudolab
