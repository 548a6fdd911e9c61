#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/rng.hpp"

namespace pseudolab {

/// Isotropic Gaussian mixture, one component per class.
struct MixtureSpec {
  std::vector<std::vector<double>> means;  // K x D
  std::vector<double> scales;              // K
};

/**
 * Draws n_per_class[k] samples from N(means[k], scales[k]^2 I) for every
 * class k. All samples are tagged labeled; use split_labeled() to partition.
 */
inline Dataset make_mixture(const MixtureSpec& spec, std::span<const int> n_per_class, std::uint64_t seed) {
  const std::size_t k = spec.means.size();
  detail::require(k >= 2, "make_mixture needs at least two classes");
  detail::require(spec.scales.size() == k && n_per_class.size() == k, "make_mixture: means/scales/counts disagree on K");
  const std::size_t d = spec.means[0].size();
  detail::require(d >= 1, "make_mixture: dimension must be positive");
  std::size_t n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    detail::require(spec.means[c].size() == d, "make_mixture: ragged means");
    detail::require(spec.scales[c] > 0.0, "make_mixture: scales must be positive");
    detail::require(n_per_class[c] > 0, "make_mixture: per-class counts must be positive");
    n += static_cast<std::size_t>(n_per_class[c]);
  }

  Engine rng = substream(seed, "data");
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.features = Tensor({n, d});
  ds.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (int s = 0; s < n_per_class[c]; ++s, ++row) {
      for (std::size_t j = 0; j < d; ++j) ds.features(row, j) = spec.means[c][j] + spec.scales[c] * normal(rng);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.origin.assign(n, Origin::labeled);
  recount(ds, k);
  return ds;
}

/// K class means drawn uniformly on the sphere of the given radius in R^D.
inline std::vector<std::vector<double>> sphere_means(std::size_t k, std::size_t d, double radius, std::uint64_t seed) {
  detail::require(k >= 2 && d >= 1 && radius > 0.0, "sphere_means: need K >= 2, D >= 1, radius > 0");
  Engine rng = substream(seed, "means");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(k, std::vector<double>(d));
  for (auto& m : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : m) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& v : m) v *= radius / norm;
  }
  return means;
}

struct ImbalanceSpec {
  double gamma = 1.0;
  int n1 = 0;
  std::size_t num_classes = 0;
  double labeled_fraction = 1.0;
};

/// N_k = round(n1 * gamma^(-(k-1)/(K-1))), clamped to at least 1.
inline std::vector<int> longtail_counts(const ImbalanceSpec& spec) {
  detail::require(spec.num_classes >= 2, "longtail_counts needs K >= 2");
  detail::require(spec.gamma >= 1.0, "imbalance ratio gamma must be >= 1");
  detail::require(spec.n1 >= 1, "n1 must be positive");
  const double km1 = static_cast<double>(spec.num_classes - 1);
  std::vector<int> counts(spec.num_classes);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double nk = static_cast<double>(spec.n1) * std::pow(spec.gamma, -static_cast<double>(k) / km1);
    counts[k] = std::max(1, static_cast<int>(std::lround(nk)));
  }
  return counts;
}

/**
 * Per class, tags max(1, round(fraction * N_k)) randomly chosen samples as
 * labeled and the rest unlabeled. OOD samples keep their tag.
 */
inline Dataset split_labeled(Dataset ds, double fraction, std::uint64_t seed) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "labeled fraction must lie in (0, 1]");
  const std::size_t k = ds.num_classes();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.origin[i] != Origin::ood) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Engine rng = substream(seed, "split", c);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_lab = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size()))), 1, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) ds.origin[idx[j]] = j < n_lab ? Origin::labeled : Origin::unlabeled;
  }
  return ds;
}

/// Isotropic Gaussian source of out-of-distribution samples.
struct OodSpec {
  std::vector<double> mean;
  double scale = 1.0;
};

/**
 * OOD source whose mean is at least `min_scales` x (largest class scale) from
 * every class mean: the mixture centroid if that is far enough, otherwise
 * the centroid pushed along the first axis until it is.
 */
inline OodSpec default_ood(const MixtureSpec& mix, double min_scales = 10.0) {
  const std::size_t k = mix.means.size();
  detail::require(k >= 1, "default_ood: empty mixture");
  const std::size_t d = mix.means[0].size();
  const double max_scale = *std::max_element(mix.scales.begin(), mix.scales.end());
  const double r = min_scales * max_scale;
  std::vector<double> c(d, 0.0);
  for (const auto& m : mix.means)
    for (std::size_t j = 0; j < d; ++j) c[j] += m[j] / static_cast<double>(k);
  // |c + t e0 - m|^2 >= r^2  <=>  t^2 + 2 t (c0 - m0) + |c - m|^2 - r^2 >= 0
  double t = 0.0;
  for (const auto& m : mix.means) {
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) dist2 += (c[j] - m[j]) * (c[j] - m[j]);
    const double b = c[0] - m[0];
    const double cc = dist2 - r * r;
    if (cc >= 0.0) continue;
    t = std::max(t, -b + std::sqrt(b * b - cc));
  }
  c[0] += t;
  return OodSpec{c, max_scale};
}

/// OOD source at the mixture centroid with the largest class scale: a compact
/// cluster sitting between the classes rather than beyond them.
inline OodSpec centroid_ood(const MixtureSpec& mix) {
  detail::require(!mix.means.empty(), "centroid_ood: empty mixture");
  const std::size_t k = mix.means.size(), d = mix.means[0].size();
  std::vector<double> c(d, 0.0);
  for (const auto& m : mix.means)
    for (std::size_t j = 0; j < d; ++j) c[j] += m[j] / static_cast<double>(k);
  return OodSpec{c, *std::max_element(mix.scales.begin(), mix.scales.end())};
}

/// Appends n_ood samples from `source`, tagged ood with kUnknownLabel.
inline Dataset inject_ood(Dataset ds, int n_ood, const OodSpec& source, std::uint64_t seed) {
  detail::require(n_ood >= 0, "n_ood must be nonnegative");
  if (n_ood == 0) return ds;
  const std::size_t d = ds.dim();
  detail::require(source.mean.size() == d, "ood source dimension does not match dataset");
  detail::require(source.scale > 0.0, "ood source scale must be positive");
  const std::size_t n0 = ds.size(), n = n0 + static_cast<std::size_t>(n_ood);
  std::vector<double> data(ds.features.data().begin(), ds.features.data().end());
  data.resize(n * d);
  Engine rng = substream(seed, "ood");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = n0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) data[i * d + j] = source.mean[j] + source.scale * normal(rng);
  ds.features = Tensor({n, d}, std::move(data));
  ds.labels.resize(n, kUnknownLabel);
  ds.origin.resize(n, Origin::ood);
  return ds;
}

}  // namespace pseudolab
