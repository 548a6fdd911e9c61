#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/numerics/autodiff.hpp"
#include "pseudolab/numerics/tensor.hpp"

namespace pseudolab {

/// Free energy per row: -T * log sum_i exp(f_i / T).
inline std::vector<double> energy_score(const Tensor& logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ContractError("energy temperature must be positive");
  const std::size_t m = logits.rows(), k = logits.cols();
  std::vector<double> out(m), scaled(k);
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = logits.row(i);
    for (std::size_t j = 0; j < k; ++j) scaled[j] = r[j] / temperature;
    out[i] = -temperature * detail::logsumexp(scaled);
  }
  return out;
}

/// Max softmax probability per row.
inline std::vector<double> confidence_score(const Tensor& logits) {
  const std::size_t m = logits.rows(), k = logits.cols();
  if (k < 2) throw DimensionError("confidence_score needs at least two classes");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    out[i] = 1.0 / s;
  }
  return out;
}

/// Index of the largest logit; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(logits.row(i));
  return out;
}

enum class GateKind { confidence, energy, flexible };

inline std::string to_string(GateKind k) {
  switch (k) {
    case GateKind::confidence: return "confidence";
    case GateKind::energy: return "energy";
    case GateKind::flexible: return "flexible";
  }
  return "?";
}

inline GateKind parse_gate_kind(const std::string& s) {
  if (s == "confidence") return GateKind::confidence;
  if (s == "energy") return GateKind::energy;
  if (s == "flexible") return GateKind::flexible;
  throw ContractError("unknown gating strategy '" + s + "' (expected confidence, energy or flexible)");
}

/**
 * Pseudo-label gating rule. Only the fields of the active kind are read:
 * confidence uses tau_c, energy uses tau_e and temperature, flexible uses
 * tau_c and class_progress.
 */
struct GateStrategy {
  GateKind kind = GateKind::energy;
  double tau_c = 0.95;
  double tau_e = -8.0;
  double temperature = 1.0;
  std::vector<long> class_progress;

  static GateStrategy confidence(double tau_c) {
    GateStrategy s;
    s.kind = GateKind::confidence;
    s.tau_c = tau_c;
    return s;
  }
  static GateStrategy energy(double tau_e, double temperature = 1.0) {
    GateStrategy s;
    s.tau_e = tau_e;
    s.temperature = temperature;
    return s;
  }
  static GateStrategy flexible(double tau_c, std::size_t num_classes) {
    return {GateKind::flexible, tau_c, -8.0, 1.0, std::vector<long>(num_classes, 0)};
  }

  void validate() const {
    switch (kind) {
      case GateKind::confidence:
      case GateKind::flexible:
        detail::require(tau_c > 0.0 && tau_c <= 1.0, "tau_c must lie in (0, 1]");
        break;
      case GateKind::energy:
        detail::require(temperature > 0.0, "temperature must be positive");
        detail::require(!std::isnan(tau_e), "tau_e must not be NaN");
        break;
    }
  }
};

struct PseudoLabelDecision {
  std::size_t sample_index = 0;
  double score = 0.0;
  bool gated = false;
  std::size_t predicted_class = 0;
  int true_class = kUnknownLabel;

  friend bool operator==(const PseudoLabelDecision&, const PseudoLabelDecision&) = default;
};

/// Flexible baseline scaling: (p_c + 1) / (max_c p + 1).
inline double flexible_scale(const std::vector<long>& progress, std::size_t cls) {
  const long mx = *std::max_element(progress.begin(), progress.end());
  return static_cast<double>(progress[cls] + 1) / static_cast<double>(mx + 1);
}

/**
 * Gates each row of weak-view logits. Confidence passes at score >= tau_c,
 * energy passes at score < tau_e, flexible passes at confidence >= tau_c
 * scaled by the predicted class's relative progress.
 * sample_index is the row position; callers remap it to dataset indices.
 */
inline std::vector<PseudoLabelDecision> apply_gate(const Tensor& logits, const GateStrategy& strategy) {
  strategy.validate();
  const std::size_t m = logits.rows(), k = logits.cols();
  const auto predicted = argmax_rows(logits);
  std::vector<double> scores;
  if (strategy.kind == GateKind::energy) {
    scores = energy_score(logits, strategy.temperature);
  } else {
    scores = confidence_score(logits);
  }
  if (strategy.kind == GateKind::flexible && strategy.class_progress.size() != k)
    throw ContractError("flexible gate: class_progress not initialized for " + std::to_string(k) + " classes");

  std::vector<PseudoLabelDecision> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto& d = out[i];
    d.sample_index = i;
    d.score = scores[i];
    d.predicted_class = predicted[i];
    switch (strategy.kind) {
      case GateKind::confidence: d.gated = scores[i] >= strategy.tau_c; break;
      case GateKind::energy: d.gated = scores[i] < strategy.tau_e; break;
      case GateKind::flexible:
        d.gated = scores[i] >= strategy.tau_c * flexible_scale(strategy.class_progress, predicted[i]);
        break;
    }
  }
  return out;
}

/// class_progress[c] += number of gated decisions predicting c.
inline void update_flexible_progress(std::span<const PseudoLabelDecision> decisions, GateStrategy& strategy) {
  if (strategy.kind != GateKind::flexible) throw ContractError("update_flexible_progress requires the flexible strategy");
  for (const auto& d : decisions) {
    if (!d.gated) continue;
    if (d.predicted_class >= strategy.class_progress.size())
      throw ContractError("flexible progress: predicted class out of range");
    ++strategy.class_progress[d.predicted_class];
  }
}

}  // namespace pseudolab
