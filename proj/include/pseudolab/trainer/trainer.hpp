#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pseudolab/analytics/metrics.hpp"
#include "pseudolab/datagen/augment.hpp"
#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gating/gate.hpp"
#include "pseudolab/numerics/autodiff.hpp"
#include "pseudolab/numerics/mlp.hpp"
#include "pseudolab/numerics/optim.hpp"
#include "pseudolab/rng.hpp"
#include "pseudolab/trainer/config.hpp"

namespace pseudolab {

/// One iteration's inputs. Unlabeled rows carry dataset indices, never labels.
struct Batches {
  Tensor labeled_x;
  std::vector<std::size_t> labeled_targets;
  std::vector<std::size_t> labeled_index;
  Tensor unlabeled_x;
  std::vector<std::size_t> unlabeled_index;
};

/// Draws batches uniformly with replacement from the labeled pool and from
/// the unlabeled-plus-ood pool. Deterministic in (seed, iteration).
class BatchSampler {
 public:
  BatchSampler(const Dataset& ds, const TrainConfig& cfg)
      : ds_(&ds), labeled_batch_(cfg.labeled_batch), unlabeled_batch_(cfg.unlabeled_batch()), seed_(cfg.seed) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.origin[i] == Origin::labeled) labeled_.push_back(i);
      else unlabeled_.push_back(i);
    }
    if (labeled_.empty()) throw ContractError("sample_batches: labeled pool is empty");
  }

  Batches sample(std::size_t iteration) const {
    Engine rng = substream(seed_, "batch", iteration);
    Batches b;
    std::uniform_int_distribution<std::size_t> pick_l(0, labeled_.size() - 1);
    b.labeled_index.resize(labeled_batch_);
    for (auto& i : b.labeled_index) i = labeled_[pick_l(rng)];
    b.labeled_x = ds_->features.gather_rows(b.labeled_index);
    b.labeled_targets.reserve(labeled_batch_);
    for (auto i : b.labeled_index) b.labeled_targets.push_back(static_cast<std::size_t>(ds_->labels[i]));
    if (!unlabeled_.empty()) {
      std::uniform_int_distribution<std::size_t> pick_u(0, unlabeled_.size() - 1);
      b.unlabeled_index.resize(unlabeled_batch_);
      for (auto& i : b.unlabeled_index) i = unlabeled_[pick_u(rng)];
      b.unlabeled_x = ds_->features.gather_rows(b.unlabeled_index);
    }
    return b;
  }

  std::size_t unlabeled_pool_size() const noexcept { return unlabeled_.size(); }

 private:
  const Dataset* ds_;
  std::size_t labeled_batch_, unlabeled_batch_;
  std::uint64_t seed_;
  std::vector<std::size_t> labeled_, unlabeled_;
};

inline Batches sample_batches(const Dataset& ds, const TrainConfig& cfg, std::size_t iteration) {
  return BatchSampler(ds, cfg).sample(iteration);
}

/// (1/B_s) sum_b H(y_b, p(y | x_b)) recorded on `g`.
inline Var supervised_loss(Graph& g, MlpParams& params, const Tensor& x, std::span<const std::size_t> targets) {
  if (targets.empty()) throw ContractError("supervised_loss: empty batch");
  Var logits = mlp_forward(g, params, g.constant(x.detached()));
  const std::vector<double> ones(targets.size(), 1.0);
  return g.weighted_cross_entropy(logits, targets, ones, static_cast<double>(targets.size()));
}

struct UnsupervisedLoss {
  Var loss;
  std::vector<PseudoLabelDecision> decisions;
};

/**
 * (1/B_u) sum_b gate(weak_b) * H(argmax weak_b, p(y | strong_b)).
 *
 * Weak logits are computed off the graph, so pseudo-labels and the gate carry
 * no gradient; only the strong-view forward pass is differentiated. Non-gated
 * rows still count in the 1/B_u denominator.
 */
inline UnsupervisedLoss unsupervised_loss(Graph& g, MlpParams& params, const Tensor& weak_x, const Tensor& strong_x,
                                          const GateStrategy& strategy) {
  if (!weak_x.same_shape(strong_x)) throw DimensionError("weak and strong views differ in shape");
  const Tensor weak_logits = mlp_logits(params, weak_x);
  UnsupervisedLoss out{{}, apply_gate(weak_logits, strategy)};
  const std::size_t b = out.decisions.size();
  std::vector<std::size_t> targets(b);
  std::vector<double> mask(b);
  bool any = false;
  for (std::size_t i = 0; i < b; ++i) {
    targets[i] = out.decisions[i].predicted_class;
    mask[i] = out.decisions[i].gated ? 1.0 : 0.0;
    any = any || out.decisions[i].gated;
  }
  if (!any) {
    out.loss = g.constant(Tensor({1}, 0.0));
    return out;
  }
  Var strong_logits = mlp_forward(g, params, g.constant(strong_x.detached()));
  out.loss = g.weighted_cross_entropy(strong_logits, targets, mask, static_cast<double>(b));
  return out;
}

/// Top-1 accuracy over the non-ood samples of `test`.
inline double evaluate(const MlpParams& params, const Dataset& test) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test.origin[i] != Origin::ood) rows.push_back(i);
  if (rows.empty()) throw ContractError("evaluate: test set has no labeled samples");
  const Tensor logits = mlp_logits(params, test.features.gather_rows(rows));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows.size(); ++r)
    hits += static_cast<int>(argmax(logits.row(r))) == test.labels[rows[r]];
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct StepResult {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_total = 0.0;
  double mask_rate = 0.0;
  double lr = 0.0;
  std::vector<PseudoLabelDecision> decisions;  // sample_index = dataset row
};

namespace detail {

inline std::string state_dump(const MlpParams& params, const OptState& opt, double ls, double lu, double total) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration " << opt.iter << " lr " << learning_rate(opt) << '\n'
     << "loss_s " << ls << " loss_u " << lu << " loss_total " << total << '\n';
  std::size_t i = 0;
  for (const auto* p : params.parameters()) {
    double sq = 0.0;
    std::size_t bad = 0;
    for (double v : p->data()) {
      if (std::isfinite(v)) sq += v * v;
      else ++bad;
    }
    os << "param " << i++ << ' ' << to_string(p->shape()) << " norm " << std::sqrt(sq) << " nonfinite " << bad << '\n';
  }
  return os.str();
}

}  // namespace detail

/**
 * One training iteration: L = L_s + lambda_u * L_u, backward, SGD step at the
 * scheduled rate, EMA update. Views use seeds derived from (config seed,
 * iteration), independent of the batch and init streams.
 */
inline StepResult train_step(MlpParams& params, OptState& opt, EmaParams& ema, const Batches& batches,
                             const TrainConfig& cfg, const GateStrategy& strategy) {
  const std::size_t it = opt.iter;
  Graph g;
  const Tensor xl = weak_view(batches.labeled_x, cfg.augment, derive_seed(cfg.seed, "augment", it, 0));
  Var ls = supervised_loss(g, params, xl, batches.labeled_targets);

  StepResult r;
  Var total = ls;
  if (!batches.unlabeled_index.empty()) {
    const Tensor xw = weak_view(batches.unlabeled_x, cfg.augment, derive_seed(cfg.seed, "augment", it, 1));
    const Tensor xs = strong_view(batches.unlabeled_x, cfg.augment, derive_seed(cfg.seed, "augment", it, 2));
    auto u = unsupervised_loss(g, params, xw, xs, strategy);
    r.decisions = std::move(u.decisions);
    for (auto& d : r.decisions) d.sample_index = batches.unlabeled_index[d.sample_index];
    r.loss_u = g.value(u.loss)[0];
    std::size_t gated = 0;
    for (const auto& d : r.decisions) gated += d.gated;
    r.mask_rate = static_cast<double>(gated) / static_cast<double>(r.decisions.size());
    if (cfg.lambda_u != 0.0 && gated > 0) total = g.add(ls, g.scale(u.loss, cfg.lambda_u));
  }
  r.loss_s = g.value(ls)[0];
  r.loss_total = r.loss_s + cfg.lambda_u * r.loss_u;
  if (!std::isfinite(r.loss_total))
    throw NonFiniteError("non-finite loss at iteration " + std::to_string(it),
                         detail::state_dump(params, opt, r.loss_s, r.loss_u, r.loss_total));

  params.clear_grads();
  g.backward(total);
  r.lr = learning_rate(opt);
  sgd_step(params, opt);
  for (const auto* p : params.parameters())
    if (!p->all_finite())
      throw NonFiniteError("non-finite parameters after iteration " + std::to_string(it),
                           detail::state_dump(params, opt, r.loss_s, r.loss_u, r.loss_total));
  ema_update(ema, params);
  return r;
}

inline bool is_long_tailed(const Dataset& ds) {
  const auto [lo, hi] = std::minmax_element(ds.class_counts.begin(), ds.class_counts.end());
  return *hi > *lo;
}

/**
 * A single training run: owns parameters, optimizer, EMA and the flexible
 * gate's per-class progress. Emits a RunRecord every eval_every iterations
 * and at the last one, with pseudo-label metrics over the decisions made
 * since the previous record.
 */
class Trainer {
 public:
  using DecisionSink = std::function<void(std::size_t iteration, std::span<const PseudoLabelDecision>)>;

  Trainer(const Dataset& train, const Dataset& test, TrainConfig cfg)
      : train_(&train), test_(&test), cfg_(std::move(cfg)), sampler_(train, cfg_) {
    cfg_.validate();
    train.validate();
    std::vector<std::size_t> dims{train.dim()};
    dims.insert(dims.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    dims.push_back(train.num_classes());
    params_ = init_mlp(dims, cfg_.seed);
    opt_.lr0 = cfg_.lr0;
    opt_.momentum = cfg_.momentum;
    opt_.weight_decay = cfg_.weight_decay;
    opt_.total_iters = cfg_.total_iters;
    opt_.schedule = cfg_.schedule.value_or(is_long_tailed(train) ? Schedule::constant : Schedule::cosine);
    ema_ = make_ema(params_, cfg_.ema_momentum);
    strategy_ = cfg_.strategy;
    if (strategy_.kind == GateKind::flexible) strategy_.class_progress.assign(train.num_classes(), 0);
    groups_ = make_groups(train.class_counts, cfg_.group_head, cfg_.group_tail);
    const std::size_t bu = cfg_.unlabeled_batch();
    epoch_iters_ = std::max<std::size_t>(1, (sampler_.unlabeled_pool_size() + bu - 1) / bu);
  }

  bool done() const noexcept { return opt_.iter >= cfg_.total_iters; }

  StepResult step() {
    if (strategy_.kind == GateKind::flexible && opt_.iter % epoch_iters_ == 0)
      std::fill(strategy_.class_progress.begin(), strategy_.class_progress.end(), 0);
    StepResult r = train_step(params_, opt_, ema_, sampler_.sample(opt_.iter), cfg_, strategy_);
    if (strategy_.kind == GateKind::flexible) update_flexible_progress(r.decisions, strategy_);
    return r;
  }

  /// Runs to completion. `sink` sees every iteration's annotated decisions.
  std::vector<RunRecord> run(const DecisionSink& sink = {}) {
    std::vector<RunRecord> records;
    std::vector<PseudoLabelDecision> window;
    while (!done()) {
      StepResult r = step();
      annotate_truth(r.decisions, *train_);
      const std::size_t t = opt_.iter;
      if (sink) sink(t, r.decisions);
      window.insert(window.end(), r.decisions.begin(), r.decisions.end());
      if (t % cfg_.eval_every == 0 || t == cfg_.total_iters) {
        RunRecord rec;
        rec.iteration = t;
        rec.loss_s = r.loss_s;
        rec.loss_u = r.loss_u;
        rec.loss_total = r.loss_total;
        rec.mask_rate = r.mask_rate;
        rec.set_pr(pseudo_pr(window, groups_));
        rec.ood_included = ood_inclusion(window);
        rec.acc_raw = evaluate(params_, *test_);
        rec.acc_ema = evaluate(ema_.shadow, *test_);
        records.push_back(rec);
        window.clear();
      }
    }
    return records;
  }

  const MlpParams& params() const noexcept { return params_; }
  const EmaParams& ema() const noexcept { return ema_; }
  const OptState& optimizer() const noexcept { return opt_; }
  const GateStrategy& strategy() const noexcept { return strategy_; }
  const ClassGroups& groups() const noexcept { return groups_; }
  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  const Dataset* train_;
  const Dataset* test_;
  TrainConfig cfg_;
  BatchSampler sampler_;
  MlpParams params_;
  OptState opt_;
  EmaParams ema_;
  GateStrategy strategy_;
  ClassGroups groups_;
  std::size_t epoch_iters_ = 1;
};

}  // namespace pseudolab
