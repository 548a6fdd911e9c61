#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "pseudolab/error.hpp"
#include "pseudolab/numerics/mlp.hpp"

namespace pseudolab {

enum class Schedule { cosine, constant };

inline std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }

inline Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "constant") return Schedule::constant;
  throw ContractError("unknown schedule '" + s + "' (expected cosine or constant)");
}

/// SGD-with-momentum state. velocity[i] mirrors MlpParams::parameters()[i].
struct OptState {
  double lr0 = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t iter = 0;
  std::size_t total_iters = 1;
  Schedule schedule = Schedule::cosine;
  std::vector<Tensor> velocity;

  void validate() const {
    detail::require(lr0 > 0.0, "lr0 must be positive");
    detail::require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    detail::require(weight_decay >= 0.0, "weight_decay must be nonnegative");
    detail::require(total_iters > 0, "total_iters must be positive");
    detail::require(iter <= total_iters, "iter exceeds total_iters");
  }
};

/// lr0 * cos(7*pi*iter / (16*total_iters)).
inline double cosine_lr(const OptState& s) {
  return s.lr0 * std::cos(7.0 * std::numbers::pi * static_cast<double>(s.iter) /
                          (16.0 * static_cast<double>(s.total_iters)));
}

inline double learning_rate(const OptState& s) { return s.schedule == Schedule::cosine ? cosine_lr(s) : s.lr0; }

/**
 * One SGD step at the learning rate of the current iteration:
 *
 *   v <- momentum * v + grad + weight_decay * param
 *   param <- param - lr * v
 *
 * Consumes the gradients (they are cleared afterwards), so a second step
 * without a fresh backward pass is an error.
 */
inline void sgd_step(MlpParams& params, OptState& state) {
  state.validate();
  if (state.iter >= state.total_iters) throw ContractError("sgd_step past total_iters");
  auto ps = params.parameters();
  if (state.velocity.empty())
    for (const auto* p : ps) state.velocity.emplace_back(p->shape());
  if (state.velocity.size() != ps.size()) throw DimensionError("velocity buffers do not match parameter count");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!state.velocity[i].same_shape(*ps[i])) throw DimensionError("velocity buffer " + std::to_string(i) + " shape mismatch");
    if (!ps[i]->has_grad()) throw ContractError("sgd_step: parameter " + std::to_string(i) + " has no gradient");
  }

  const double lr = learning_rate(state);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto w = ps[i]->data();
    auto g = ps[i]->grad();
    auto v = state.velocity[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j] + state.weight_decay * w[j];
      w[j] -= lr * v[j];
    }
    ps[i]->clear_grad();
  }
  ++state.iter;
}

struct EmaParams {
  MlpParams shadow;
  double momentum = 0.999;
};

inline EmaParams make_ema(const MlpParams& live, double momentum) {
  detail::require(momentum >= 0.0 && momentum <= 1.0, "EMA momentum must lie in [0, 1]");
  EmaParams e{live, momentum};
  e.shadow.clear_grads();
  return e;
}

/// shadow <- momentum * shadow + (1 - momentum) * live
inline void ema_update(EmaParams& ema, const MlpParams& live) {
  if (!ema.shadow.same_shape(live)) throw DimensionError("EMA shadow does not match live parameters");
  auto sh = ema.shadow.parameters();
  auto lv = live.parameters();
  const double m = ema.momentum;
  for (std::size_t i = 0; i < sh.size(); ++i) {
    auto s = sh[i]->data();
    auto l = lv[i]->data();
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = m * s[j] + (1.0 - m) * l[j];
  }
}

}  // namespace pseudolab
