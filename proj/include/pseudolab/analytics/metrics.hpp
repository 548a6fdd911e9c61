#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gating/gate.hpp"

namespace pseudolab {

/// Head / body / tail partition of the class indices by training frequency.
struct ClassGroups {
  std::vector<std::size_t> head, body, tail;
  std::vector<int> group_of;  // per class: 0 head, 1 body, 2 tail

  std::size_t num_classes() const noexcept { return group_of.size(); }
};

/**
 * Sorts classes by count (descending, ties to the lower index); the first
 * n_head are head, the last n_tail are tail, the rest body.
 */
inline ClassGroups make_groups(std::span<const int> class_counts, std::size_t n_head = 3, std::size_t n_tail = 3) {
  const std::size_t k = class_counts.size();
  if (n_head + n_tail > k)
    throw ContractError("head+tail group sizes (" + std::to_string(n_head + n_tail) + ") exceed class count " +
                        std::to_string(k));
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return class_counts[a] > class_counts[b]; });
  ClassGroups g;
  g.group_of.assign(k, 1);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t c = order[r];
    if (r < n_head) {
      g.head.push_back(c);
      g.group_of[c] = 0;
    } else if (r >= k - n_tail) {
      g.tail.push_back(c);
      g.group_of[c] = 2;
    } else {
      g.body.push_back(c);
    }
  }
  return g;
}

struct Ratio {
  long numerator = 0;
  long denominator = 0;

  std::optional<double> value() const {
    if (denominator == 0) return std::nullopt;
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

struct GroupPR {
  Ratio precision;
  Ratio recall;
};

enum Group : std::size_t { kOverall = 0, kHead = 1, kBody = 2, kTail = 3 };

/// Precision/recall indexed by Group.
struct PrTable {
  GroupPR group[4];

  const GroupPR& operator[](Group g) const { return group[g]; }
};

/**
 * Pseudo-label precision and recall, overall and per class group.
 *
 * Precision for G counts gated decisions predicting a class in G; recall for G
 * counts decisions whose true class is in G. OOD decisions (kUnknownLabel)
 * are always wrong and never enter a recall denominator.
 */
inline PrTable pseudo_pr(std::span<const PseudoLabelDecision> decisions, const ClassGroups& groups) {
  PrTable t;
  const std::size_t k = groups.num_classes();
  for (const auto& d : decisions) {
    const bool ood = d.true_class == kUnknownLabel;
    if (!ood && (d.true_class < 0 || static_cast<std::size_t>(d.true_class) >= k))
      throw ContractError("pseudo_pr: true class out of range");
    if (d.predicted_class >= k) throw ContractError("pseudo_pr: predicted class out of range");
    const bool correct = !ood && d.predicted_class == static_cast<std::size_t>(d.true_class);
    if (d.gated) {
      const Group pg = static_cast<Group>(1 + groups.group_of[d.predicted_class]);
      for (Group g : {kOverall, pg}) {
        ++t.group[g].precision.denominator;
        if (correct) ++t.group[g].precision.numerator;
      }
    }
    if (!ood) {
      const Group tg = static_cast<Group>(1 + groups.group_of[static_cast<std::size_t>(d.true_class)]);
      for (Group g : {kOverall, tg}) {
        ++t.group[g].recall.denominator;
        if (d.gated && correct) ++t.group[g].recall.numerator;
      }
    }
  }
  return t;
}

/// Gated decisions whose true class is the OOD sentinel.
inline long ood_inclusion(std::span<const PseudoLabelDecision> decisions) {
  return std::count_if(decisions.begin(), decisions.end(),
                       [](const PseudoLabelDecision& d) { return d.gated && d.true_class == kUnknownLabel; });
}

inline long gated_count(std::span<const PseudoLabelDecision> decisions) {
  return std::count_if(decisions.begin(), decisions.end(), [](const PseudoLabelDecision& d) { return d.gated; });
}

/// Fills true_class from the dataset; the one place hidden labels are read.
inline void annotate_truth(std::span<PseudoLabelDecision> decisions, const Dataset& ds) {
  for (auto& d : decisions) {
    if (d.sample_index >= ds.size()) throw DataError("decision sample index " + std::to_string(d.sample_index) + " out of range");
    d.true_class = ds.labels[d.sample_index];
  }
}

/// Metrics emitted at every evaluation point of a run.
struct RunRecord {
  std::size_t iteration = 0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_total = 0.0;
  double mask_rate = 0.0;
  std::optional<double> precision[4];  // indexed by Group
  std::optional<double> recall[4];
  long ood_included = 0;
  double acc_raw = 0.0;
  double acc_ema = 0.0;

  void set_pr(const PrTable& t) {
    for (std::size_t g = 0; g < 4; ++g) {
      precision[g] = t.group[g].precision.value();
      recall[g] = t.group[g].recall.value();
    }
  }

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

}  // namespace pseudolab
