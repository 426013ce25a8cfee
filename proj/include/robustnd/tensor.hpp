// Copyright 2026 The robustnd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "robustnd/error.hpp"

namespace robustnd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major N-dimensional array. Every extent is positive and the
/// element count equals the product of the extents. A default-constructed
/// tensor is the empty placeholder with rank 0 and no data.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T{0}) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(shape_numel(dims_), fill);
  }

  Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (shape_numel(dims_) != data_.size()) {
      throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                            " does not match dims " + shape_str(dims_));
    }
  }

  Tensor(Shape dims, std::initializer_list<T> values) : Tensor(std::move(dims), std::vector<T>(values)) {}

  const Shape& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Row `i` along the leading axis, as a flat view.
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = data_.size() / dims_.at(0);
    return std::span<const T>(data_).subspan(i * stride, stride);
  }
  std::span<T> row(std::size_t i) {
    const std::size_t stride = data_.size() / dims_.at(0);
    return std::span<T>(data_).subspan(i * stride, stride);
  }

  Tensor reshape(Shape dims) const {
    if (shape_numel(dims) != data_.size()) {
      throw ValidationError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    if (dims_.empty() && data_.empty()) return Tensor<U>();  // default-constructed stays empty
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  bool all_finite() const noexcept {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void validate_dims() const {
    for (const std::size_t d : dims_) {
      if (d == 0) throw ValidationError("tensor dims must be positive, got " + shape_str(dims_));
    }
  }

  Shape dims_;
  std::vector<T> data_;
};

/// Throws NumericError naming `where` when `t` holds NaN or Inf.
template <typename T>
void require_finite(const Tensor<T>& t, std::string_view where) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + std::string(where));
}

/// Stacks equally-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ValidationError("stack of zero tensors");
  Shape dims = items.front().dims();
  dims.insert(dims.begin(), items.size());
  std::vector<T> out;
  out.reserve(shape_numel(dims));
  for (const auto& t : items) {
    if (t.dims() != items.front().dims()) {
      throw ValidationError("stack shape mismatch: " + shape_str(t.dims()) + " vs " +
                            shape_str(items.front().dims()));
    }
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  return Tensor<T>(std::move(dims), std::move(out));
}

/// Copies leading-axis slice `i` out of `t` (e.g. one image from a batch).
template <typename T>
Tensor<T> slice0(const Tensor<T>& t, std::size_t i) {
  Shape dims(t.dims().begin() + 1, t.dims().end());
  if (dims.empty()) dims.push_back(1);
  auto r = t.row(i);
  return Tensor<T>(std::move(dims), std::vector<T>(r.begin(), r.end()));
}

/// Gathers the listed leading-axis rows into a new tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& t, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("gather of zero rows");
  Shape dims = t.dims();
  dims[0] = rows.size();
  std::vector<T> out;
  out.reserve(shape_numel(dims));
  for (const std::size_t r : rows) {
    if (r >= t.dim(0)) throw ValidationError("row index out of range");
    auto v = t.row(r);
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor<T>(std::move(dims), std::move(out));
}

}  // namespace robustnd
