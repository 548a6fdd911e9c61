#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pseudolab/error.hpp"

namespace pseudolab {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/**
 * Dense row-major array of doubles with an optional gradient slot.
 *
 * Every extent is positive and product(shape) == data.size(). The gradient,
 * when present, always has the same length as the data.
 */
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
  }

  /// Row-major matrix from nested initializer lists; rows must be equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(flat));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * shape_[1], shape_[1]); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  bool has_grad() const noexcept { return grad_.has_value(); }

  std::span<double> grad() {
    if (!grad_) throw ContractError("tensor has no gradient");
    return *grad_;
  }
  std::span<const double> grad() const {
    if (!grad_) throw ContractError("tensor has no gradient");
    return *grad_;
  }

  /// Allocates a zeroed gradient if absent; returns it.
  std::span<double> ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    return *grad_;
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  void clear_grad() noexcept { grad_.reset(); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  /// Copy of the values without the gradient slot.
  Tensor detached() const { return Tensor(shape_, data_); }

  /// Rows `indices` gathered into a new [indices.size(), cols] matrix.
  Tensor gather_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = cols();
    std::vector<double> out(indices.size() * c);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= shape_[0]) throw DimensionError("gather_rows index out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return Tensor({indices.size(), c}, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
      n *= e;
    }
    return n;
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r)
      throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got shape " + to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

}  // namespace pseudolab
