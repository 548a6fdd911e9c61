#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/error.hpp"
#include "pseudolab/numerics/autodiff.hpp"
#include "pseudolab/numerics/tensor.hpp"
#include "pseudolab/rng.hpp"

namespace pseudolab {

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// Fully connected rectifier network; identity activation on the last layer.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t num_classes() const { return layers.back().out_dim(); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  bool same_shape(const MlpParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (!layers[i].weight.same_shape(other.layers[i].weight) || !layers[i].bias.same_shape(other.layers[i].bias))
        return false;
    return true;
  }

  void clear_grads() {
    for (auto* p : parameters()) p->clear_grad();
  }

  /// Throws DimensionError unless layer dimensions chain.
  void validate() const {
    if (layers.empty()) throw DimensionError("MLP has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.cols())
        throw DimensionError("layer " + std::to_string(i) + " weight/bias shapes disagree");
      if (i > 0 && layers[i - 1].out_dim() != l.in_dim())
        throw DimensionError("layer " + std::to_string(i) + " expects in-dim " + std::to_string(l.in_dim()) +
                             " but layer " + std::to_string(i - 1) + " produces " +
                             std::to_string(layers[i - 1].out_dim()));
    }
  }
};

/// Glorot-uniform weights, zero biases. `dims` = {in, hidden..., K}.
inline MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ContractError("MLP needs at least input and output dimensions");
  Engine rng = substream(seed, "init");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = dims[i], out = dims[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer layer{Tensor({in, out}), Tensor({out})};
    for (auto& w : layer.weight.data()) w = u(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MlpParams zero_mlp(std::span<const std::size_t> dims) {
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) p.layers.push_back({Tensor({dims[i], dims[i + 1]}), Tensor({dims[i + 1]})});
  return p;
}

namespace detail {

inline void check_input(const MlpParams& params, const Tensor& x) {
  params.validate();
  if (x.rank() != 2 || x.cols() != params.in_dim())
    throw DimensionError("layer 0 expects " + std::to_string(params.in_dim()) + " input columns, got shape " +
                         to_string(x.shape()));
}

}  // namespace detail

/// Records the forward pass on `g`; parameters are bound for backward().
inline Var mlp_forward(Graph& g, MlpParams& params, Var x) {
  detail::check_input(params, g.value(x));
  Var h = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    h = g.add_bias(g.matmul(h, g.parameter(l.weight)), g.parameter(l.bias));
    if (i + 1 < params.layers.size()) h = g.relu(h);
  }
  return h;
}

/// Gradient-free forward pass: raw logits [batch, K].
inline Tensor mlp_logits(const MlpParams& params, const Tensor& x) {
  detail::check_input(params, x);
  Tensor h = x.detached();
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    const std::size_t m = h.rows(), k = l.in_dim(), n = l.out_dim();
    Tensor out({m, n});
    for (std::size_t r = 0; r < m; ++r) std::copy(l.bias.data().begin(), l.bias.data().end(), out.row(r).begin());
    detail::gemm_nn(h.data(), l.weight.data(), out.data(), m, k, n);
    if (i + 1 < params.layers.size())
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    h = std::move(out);
  }
  return h;
}

/// Text dump: layer count, then per layer "in out", weights row-major, biases.
inline void write_params(std::ostream& os, const MlpParams& params) {
  os.precision(17);
  os << params.layers.size() << '\n';
  for (const auto& l : params.layers) {
    os << l.in_dim() << ' ' << l.out_dim() << '\n';
    for (std::size_t r = 0; r < l.in_dim(); ++r) {
      for (std::size_t c = 0; c < l.out_dim(); ++c) os << (c ? " " : "") << l.weight(r, c);
      os << '\n';
    }
    for (std::size_t c = 0; c < l.out_dim(); ++c) os << (c ? " " : "") << l.bias[c];
    os << '\n';
  }
}

inline MlpParams read_params(std::istream& is) {
  std::size_t n = 0;
  if (!(is >> n) || n == 0) throw DataError("parameter file: bad layer count");
  MlpParams p;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t in = 0, out = 0;
    if (!(is >> in >> out) || in == 0 || out == 0) throw DataError("parameter file: bad layer header");
    DenseLayer l{Tensor({in, out}), Tensor({out})};
    for (auto& w : l.weight.data())
      if (!(is >> w)) throw DataError("parameter file: truncated weights");
    for (auto& b : l.bias.data())
      if (!(is >> b)) throw DataError("parameter file: truncated biases");
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

}  // namespace pseudolab
