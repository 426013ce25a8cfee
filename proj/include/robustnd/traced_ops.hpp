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

// Recording wrappers around the kernels in ops.hpp. Each call computes the
// forward value and appends exactly one entry to the trace. Parameter tensors
// are captured by reference and must outlive the trace.

#include <string>
#include <utility>
#include <vector>

#include "robustnd/ops.hpp"
#include "robustnd/trace.hpp"

namespace robustnd::traced {

template <typename T>
struct Node {
  std::size_t slot;
  Tensor<T> value;
};

template <typename T>
Node<T> input(OpTrace<T>& trace, Tensor<T> value) {
  const std::size_t slot = trace.leaf(value.dims());
  return {slot, std::move(value)};
}

template <typename T>
Node<T> conv2d(OpTrace<T>& trace, std::string label, const Node<T>& x, const Tensor<T>& weight,
               const Tensor<T>& bias, ops::Conv2dParams p) {
  auto y = ops::conv2d(x.value, weight, bias, p);
  const Shape in_dims = x.value.dims();
  const std::size_t slot = trace.record(OpKind::conv2d, std::move(label), {x.slot}, y.dims(),
                                        [in_dims, &weight, p](const Tensor<T>& g) {
                                          // Input values only matter for parameter gradients.
                                          Tensor<T> shape_only(in_dims);
                                          return std::vector<Tensor<T>>{
                                              ops::conv2d_backward(g, shape_only, weight, p).input};
                                        });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> batchnorm_eval(OpTrace<T>& trace, std::string label, const Node<T>& x, const ops::BatchNormParams<T>& p) {
  auto y = ops::batchnorm_eval(x.value, p);
  const std::size_t slot = trace.record(OpKind::batchnorm_eval, std::move(label), {x.slot}, y.dims(),
                                        [&p](const Tensor<T>& g) {
                                          return std::vector<Tensor<T>>{ops::batchnorm_eval_backward(g, p)};
                                        });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> relu(OpTrace<T>& trace, std::string label, const Node<T>& x) {
  auto r = ops::relu(x.value);
  const auto pattern = pattern_of(r.mask);
  const std::size_t slot = trace.record(
      OpKind::relu, std::move(label), {x.slot}, r.output.dims(),
      [mask = std::move(r.mask)](const Tensor<T>& g) { return std::vector<Tensor<T>>{ops::relu_backward(g, mask)}; },
      pattern);
  return {slot, std::move(r.output)};
}

template <typename T>
Node<T> maxpool2d(OpTrace<T>& trace, std::string label, const Node<T>& x, ops::MaxPoolParams p) {
  auto r = ops::maxpool2d(x.value, p);
  const auto pattern = pattern_of(r.argmax);
  const std::size_t slot = trace.record(
      OpKind::maxpool2d, std::move(label), {x.slot}, r.output.dims(),
      [argmax = std::move(r.argmax), in_dims = x.value.dims()](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{ops::maxpool2d_backward(g, argmax, in_dims)};
      },
      pattern);
  return {slot, std::move(r.output)};
}

template <typename T>
Node<T> global_avgpool(OpTrace<T>& trace, std::string label, const Node<T>& x) {
  auto y = ops::global_avgpool(x.value);
  const std::size_t slot = trace.record(OpKind::global_avgpool, std::move(label), {x.slot}, y.dims(),
                                        [in_dims = x.value.dims()](const Tensor<T>& g) {
                                          return std::vector<Tensor<T>>{ops::global_avgpool_backward(g, in_dims)};
                                        });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> flatten(OpTrace<T>& trace, std::string label, const Node<T>& x) {
  auto y = ops::flatten(x.value);
  const std::size_t slot = trace.record(OpKind::flatten, std::move(label), {x.slot}, y.dims(),
                                        [in_dims = x.value.dims()](const Tensor<T>& g) {
                                          return std::vector<Tensor<T>>{g.reshape(in_dims)};
                                        });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> linear(OpTrace<T>& trace, std::string label, const Node<T>& x, const Tensor<T>& weight,
               const Tensor<T>& bias) {
  auto y = ops::linear(x.value, weight, bias);
  const std::size_t slot = trace.record(OpKind::linear, std::move(label), {x.slot}, y.dims(),
                                        [&weight](const Tensor<T>& g) {
                                          return std::vector<Tensor<T>>{ops::linear_backward_input(g, weight)};
                                        });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> add(OpTrace<T>& trace, std::string label, const Node<T>& a, const Node<T>& b) {
  auto y = ops::add(a.value, b.value);
  const std::size_t slot = trace.record(OpKind::add, std::move(label), {a.slot, b.slot}, y.dims(),
                                        [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g, g}; });
  return {slot, std::move(y)};
}

template <typename T>
Node<T> normalize(OpTrace<T>& trace, std::string label, const Node<T>& x, const Tensor<T>& mean,
                  const Tensor<T>& std_dev) {
  auto y = ops::normalize(x.value, mean, std_dev);
  const std::size_t slot = trace.record(OpKind::normalize, std::move(label), {x.slot}, y.dims(),
                                        [&std_dev](const Tensor<T>& g) {
                                          return std::vector<Tensor<T>>{ops::normalize_backward(g, std_dev)};
                                        });
  return {slot, std::move(y)};
}

}  // namespace robustnd::traced
