#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/error.hpp"
#include "pseudolab/numerics/tensor.hpp"

namespace pseudolab {

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

namespace detail {

/// log(sum(exp(v))) with max-subtraction; finite for any finite input.
inline double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// out[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * bp[j];
    }
  }
}

// out[m,k] += g[m,n] * b[k,n]^T
inline void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g.data() + i * n;
    double* o = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      o[p] += acc;
    }
  }
}

// out[k,n] += a[m,k]^T * g[m,n]
inline void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    const double* gi = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* o = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gi[j];
    }
  }
}

}  // namespace detail

/**
 * Tape for reverse-mode differentiation over the small op set the trainer
 * needs: matmul, bias add, rectifier, elementwise add/scale, reductions,
 * row-wise logsumexp and softmax cross-entropy.
 *
 * Parameters are bound by reference; backward() accumulates d(loss)/d(param)
 * into each bound Tensor's grad slot. A graph supports exactly one backward
 * pass; call reset() to record a new one.
 */
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A leaf that never receives gradient.
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// A leaf bound to `param`; backward() writes into param.grad().
  /// The tensor must outlive the graph's backward pass.
  Var parameter(Tensor& param) {
    Var v = push(param.detached(), true, {});
    nodes_[v.id].bound = &param;
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  std::span<const double> adjoint(Var v) const { return node(v).adjoint; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// [m,k] x [k,n] -> [m,n]
  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      throw DimensionError("matmul shape mismatch: " + to_string(A.shape()) + " x " + to_string(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    detail::gemm_nn(A.data(), B.data(), out.data(), m, k, n);
    return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      if (g.needs(a)) detail::gemm_nt(go, g.value(b).data(), g.grad_of(a), m, k, n);
      if (g.needs(b)) detail::gemm_tn(g.value(a).data(), go, g.grad_of(b), m, k, n);
    });
  }

  /// a[m,n] + bias[n] broadcast over rows.
  Var add_bias(Var a, Var bias) {
    const Tensor& A = value(a);
    const Tensor& b = value(bias);
    if (A.rank() != 2 || b.size() != A.cols())
      throw DimensionError("add_bias shape mismatch: " + to_string(A.shape()) + " + " + to_string(b.shape()));
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = A.detached();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += b[j];
    return push(std::move(out), needs(a) || needs(bias), [a, bias, m, n](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      if (g.needs(a)) {
        auto ga = g.grad_of(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (g.needs(bias)) {
        auto gb = g.grad_of(bias);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw DimensionError("add shape mismatch: " + to_string(A.shape()) + " + " + to_string(B.shape()));
    Tensor out = A.detached();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      for (Var v : {a, b}) {
        if (!g.needs(v)) continue;
        auto gv = g.grad_of(v);
        for (std::size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a).detached();
    for (auto& x : out.data()) x *= s;
    return push(std::move(out), needs(a), [a, s](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      auto ga = g.grad_of(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
    });
  }

  Var relu(Var a) {
    Tensor out = value(a).detached();
    for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      auto ga = g.grad_of(a);
      const auto in = g.value(a).data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (in[i] > 0.0) ga[i] += go[i];
    });
  }

  /// Sum of all entries -> shape [1].
  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data()) s += x;
    return push(Tensor({1}, s), needs(a), [a](Graph& g, std::size_t self) {
      const double go = g.nodes_[self].adjoint[0];
      for (auto& x : g.grad_of(a)) x += go;
    });
  }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

  /// Row-wise log(sum_j exp(a[i,j] / T)) -> shape [m].
  Var logsumexp_rows(Var a, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw ContractError("logsumexp temperature must be positive");
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out({m});
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) scaled[j] = A(i, j) / temperature;
      out[i] = detail::logsumexp(scaled);
    }
    return push(std::move(out), needs(a), [a, m, n, temperature](Graph& g, std::size_t self) {
      auto go = g.nodes_[self].adjoint;
      const Tensor& A = g.value(a);
      const Tensor& lse = g.nodes_[self].value;
      auto ga = g.grad_of(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] += go[i] * std::exp(A(i, j) / temperature - lse[i]) / temperature;
    });
  }

  /**
   * (1/denominator) * sum_b weight[b] * -log softmax(logits[b])[target[b]].
   *
   * Rows with zero weight contribute nothing but still count in the
   * denominator, which is how the gated pseudo-label loss averages.
   */
  Var weighted_cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const double> weights,
                             double denominator) {
    const Tensor& L = value(logits);
    if (L.rank() != 2) throw DimensionError("cross entropy expects [batch, K] logits");
    const std::size_t m = L.rows(), n = L.cols();
    if (targets.size() != m || weights.size() != m)
      throw DimensionError("cross entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                           " rows");
    if (!(denominator > 0.0)) throw ContractError("cross entropy denominator must be positive");
    std::vector<double> probs(m * n);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (targets[i] >= n) throw ContractError("cross entropy target class out of range");
      const auto r = L.row(i);
      const double lse = detail::logsumexp(r);
      for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(r[j] - lse);
      if (weights[i] != 0.0) total += weights[i] * (lse - r[targets[i]]);
    }
    std::vector<std::size_t> t(targets.begin(), targets.end());
    std::vector<double> w(weights.begin(), weights.end());
    return push(Tensor({1}, total / denominator), needs(logits),
                [logits, m, n, denominator, probs = std::move(probs), t = std::move(t), w = std::move(w)](
                    Graph& g, std::size_t self) {
                  const double go = g.nodes_[self].adjoint[0] / denominator;
                  auto gl = g.grad_of(logits);
                  for (std::size_t i = 0; i < m; ++i) {
                    if (w[i] == 0.0) continue;
                    const double c = go * w[i];
                    for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += c * (probs[i * n + j] - (j == t[i] ? 1.0 : 0.0));
                  }
                });
  }

  /// Mean softmax cross-entropy against a one-hot target matrix.
  Var cross_entropy(Var logits, const Tensor& one_hot) {
    const Tensor& L = value(logits);
    if (!L.same_shape(one_hot))
      throw DimensionError("cross entropy target shape " + to_string(one_hot.shape()) + " != logits " +
                           to_string(L.shape()));
    const std::size_t m = L.rows(), n = L.cols();
    std::vector<std::size_t> targets(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t nonzero = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = one_hot(i, j);
        if (v == 1.0) {
          targets[i] = j;
          ++nonzero;
        } else if (v != 0.0) {
          nonzero = 2;
        }
      }
      if (nonzero != 1) throw ContractError("cross entropy target row " + std::to_string(i) + " is not one-hot");
    }
    const std::vector<double> ones(m, 1.0);
    return weighted_cross_entropy(logits, targets, ones, static_cast<double>(m));
  }

  /// Propagates d(loss)/d(node) through the tape and accumulates into every
  /// bound parameter's grad slot.
  void backward(Var loss) {
    if (backward_done_) throw ContractError("backward called twice on the same graph; call reset() first");
    if (value(loss).size() != 1) throw ContractError("backward requires a scalar loss, got " + to_string(value(loss).shape()));
    backward_done_ = true;
    for (auto& n : nodes_)
      if (n.requires_grad) n.adjoint.assign(n.value.size(), 0.0);
    if (!node(loss).requires_grad) return;
    nodes_[loss.id].adjoint[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.bound) {
        auto pg = n.bound->ensure_grad();
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.adjoint[j];
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    std::vector<double> adjoint;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    if (backward_done_) throw ContractError("graph already differentiated; call reset() before recording");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr, requires_grad ? std::move(fn) : BackwardFn{}});
    return Var{nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
    return nodes_[v.id];
  }

  bool needs(Var v) const { return node(v).requires_grad; }
  std::span<double> grad_of(Var v) { return nodes_[v.id].adjoint; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace pseudolab
