#pragma once

#include <cstdint>
#include <random>

#include "pseudolab/error.hpp"
#include "pseudolab/numerics/tensor.hpp"
#include "pseudolab/rng.hpp"

namespace pseudolab {

/// Weak view: Gaussian jitter. Strong view: harsher jitter plus feature dropout.
struct AugmentSpec {
  double weak_sigma = 0.1;
  double strong_sigma = 0.5;
  double strong_dropout = 0.2;

  void validate() const {
    detail::require(weak_sigma >= 0.0, "weak_sigma must be nonnegative");
    detail::require(strong_sigma >= weak_sigma, "strong_sigma must be >= weak_sigma");
    detail::require(strong_dropout >= 0.0 && strong_dropout < 1.0, "strong_dropout must lie in [0, 1)");
  }
};

inline Tensor weak_view(const Tensor& x, const AugmentSpec& spec, std::uint64_t seed) {
  detail::require(spec.weak_sigma >= 0.0, "weak_sigma must be nonnegative");
  Tensor out = x.detached();
  if (spec.weak_sigma == 0.0) return out;
  Engine rng = substream(seed, "weak");
  std::normal_distribution<double> noise(0.0, spec.weak_sigma);
  for (auto& v : out.data()) v += noise(rng);
  return out;
}

inline Tensor strong_view(const Tensor& x, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  Tensor out = x.detached();
  Engine rng = substream(seed, "strong");
  if (spec.strong_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.strong_sigma);
    for (auto& v : out.data()) v += noise(rng);
  }
  if (spec.strong_dropout > 0.0) {
    std::bernoulli_distribution drop(spec.strong_dropout);
    for (auto& v : out.data())
      if (drop(rng)) v = 0.0;
  }
  return out;
}

}  // namespace pseudolab
