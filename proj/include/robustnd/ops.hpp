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

// Forward and backward kernels for the layer vocabulary a backbone graph may
// contain. Images are NCHW. Every kernel writes each output element from a
// single fixed-order reduction, so results do not depend on how
// parallel_for splits the work.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "robustnd/error.hpp"
#include "robustnd/parallel.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd::ops {

namespace detail {

inline void require_rank(const Shape& dims, std::size_t rank, std::string_view op, std::string_view what) {
  if (dims.size() != rank) {
    throw ValidationError(std::string(op) + ": " + std::string(what) + " must have rank " +
                          std::to_string(rank) + ", got " + shape_str(dims));
  }
}

inline std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                                 std::string_view op) {
  if (stride < 1) throw ValidationError(std::string(op) + ": stride must be >= 1");
  if (in + 2 * pad < window) {
    throw ValidationError(std::string(op) + ": window " + std::to_string(window) +
                          " exceeds padded extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - window) / stride + 1;
}

}  // namespace detail

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output spatial extent of a convolution or pooling window (floor mode).
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return detail::pooled_extent(in, kernel, stride, pad, "conv2d");
}

/// Cross-correlation. `bias` may be the empty tensor for a bias-free layer.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dParams p) {
  detail::require_rank(input.dims(), 4, "conv2d", "input");
  detail::require_rank(weight.dims(), 4, "conv2d", "weight");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    throw ValidationError("conv2d: input channels " + std::to_string(c) + " (input " + shape_str(input.dims()) +
                          ") != weight channels " + std::to_string(weight.dim(1)) + " (weight " +
                          shape_str(weight.dims()) + ")");
  }
  if (!bias.empty() && bias.dims() != Shape{k}) {
    throw ValidationError("conv2d: bias " + shape_str(bias.dims()) + " does not match " + std::to_string(k) +
                          " output channels");
  }
  const std::size_t oh = detail::pooled_extent(h, kh, p.stride, p.padding, "conv2d");
  const std::size_t ow = detail::pooled_extent(w, kw, p.stride, p.padding, "conv2d");
  Tensor<T> out(Shape{n, k, oh, ow});
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  T* y = out.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);

  parallel::parallel_for(n * k, [&](std::size_t plane) {
    const std::size_t in_n = plane / k, out_k = plane % k;
    const double b = bias.empty() ? 0.0 : static_cast<double>(bias[out_k]);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = b;
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T* xc = x + (in_n * c + ci) * h * w;
          const T* wc = wt + (out_k * c + ci) * kh * kw;
          for (std::size_t r = 0; r < kh; ++r) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * p.stride + r) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t s = 0; s < kw; ++s) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * p.stride + s) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += static_cast<double>(xc[iy * static_cast<std::ptrdiff_t>(w) + ix]) *
                     static_cast<double>(wc[r * kw + s]);
            }
          }
        }
        y[(plane * oh + oy) * ow + ox] = static_cast<T>(acc);
      }
    }
  });
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;  // empty unless requested
  Tensor<T> bias;    // empty unless requested
};

/// Gradients of conv2d. The input gradient is always produced; weight and
/// bias gradients only when `with_params` is set.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                               Conv2dParams p, bool with_params = false) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t oh = detail::pooled_extent(h, kh, p.stride, p.padding, "conv2d");
  const std::size_t ow = detail::pooled_extent(w, kw, p.stride, p.padding, "conv2d");
  if (grad_out.dims() != Shape{n, k, oh, ow}) {
    throw ValidationError("conv2d backward: grad " + shape_str(grad_out.dims()) + " != output " +
                          shape_str(Shape{n, k, oh, ow}));
  }
  const T* g = grad_out.data().data();
  const T* wt = weight.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const auto stride = static_cast<std::ptrdiff_t>(p.stride);

  Conv2dGrads<T> grads{Tensor<T>(input.dims()), {}, {}};
  T* gx = grads.input.data().data();
  parallel::parallel_for(n * c, [&](std::size_t plane) {
    const std::size_t in_n = plane / c, ci = plane % c;
    for (std::size_t iy = 0; iy < h; ++iy) {
      for (std::size_t ix = 0; ix < w; ++ix) {
        double acc = 0.0;
        for (std::size_t ko = 0; ko < k; ++ko) {
          const T* gk = g + (in_n * k + ko) * oh * ow;
          const T* wk = wt + (ko * c + ci) * kh * kw;
          for (std::size_t r = 0; r < kh; ++r) {
            const std::ptrdiff_t num_y = static_cast<std::ptrdiff_t>(iy) + pad - static_cast<std::ptrdiff_t>(r);
            if (num_y < 0 || num_y % stride != 0) continue;
            const std::ptrdiff_t oy = num_y / stride;
            if (oy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t s = 0; s < kw; ++s) {
              const std::ptrdiff_t num_x = static_cast<std::ptrdiff_t>(ix) + pad - static_cast<std::ptrdiff_t>(s);
              if (num_x < 0 || num_x % stride != 0) continue;
              const std::ptrdiff_t ox = num_x / stride;
              if (ox >= static_cast<std::ptrdiff_t>(ow)) continue;
              acc += static_cast<double>(gk[oy * static_cast<std::ptrdiff_t>(ow) + ox]) *
                     static_cast<double>(wk[r * kw + s]);
            }
          }
        }
        gx[(plane * h + iy) * w + ix] = static_cast<T>(acc);
      }
    }
  });

  if (with_params) {
    grads.weight = Tensor<T>(weight.dims());
    grads.bias = Tensor<T>(Shape{k});
    const T* x = input.data().data();
    T* gw = grads.weight.data().data();
    parallel::parallel_for(k * c * kh * kw, [&](std::size_t idx) {
      const std::size_t s = idx % kw, r = (idx / kw) % kh, ci = (idx / (kw * kh)) % c, ko = idx / (kw * kh * c);
      double acc = 0.0;
      for (std::size_t in_n = 0; in_n < n; ++in_n) {
        const T* gk = g + (in_n * k + ko) * oh * ow;
        const T* xc = x + (in_n * c + ci) * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(r) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(s) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            acc += static_cast<double>(gk[oy * ow + ox]) * static_cast<double>(xc[iy * static_cast<std::ptrdiff_t>(w) + ix]);
          }
        }
      }
      gw[idx] = static_cast<T>(acc);
    });
    for (std::size_t ko = 0; ko < k; ++ko) {
      double acc = 0.0;
      for (std::size_t in_n = 0; in_n < n; ++in_n) {
        const T* gk = g + (in_n * k + ko) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += static_cast<double>(gk[i]);
      }
      grads.bias[ko] = static_cast<T>(acc);
    }
  }
  return grads;
}

/// Inference-mode batch normalization with frozen statistics.
template <typename T>
struct BatchNormParams {
  Tensor<T> mean, var, gamma, beta;
  double eps = 1e-5;
};

namespace detail {
template <typename T>
std::vector<double> bn_scale(const Tensor<T>& input, const BatchNormParams<T>& p) {
  require_rank(input.dims(), 4, "batchnorm_eval", "input");
  const std::size_t c = input.dim(1);
  for (const Tensor<T>* t : {&p.mean, &p.var, &p.gamma, &p.beta}) {
    if (t->dims() != Shape{c}) {
      throw ValidationError("batchnorm_eval: parameter " + shape_str(t->dims()) + " does not match " +
                            std::to_string(c) + " channels");
    }
  }
  if (!(p.eps >= 0.0)) throw ValidationError("batchnorm_eval: eps must be non-negative");
  std::vector<double> scale(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double v = static_cast<double>(p.var[ch]);
    if (v < 0.0) throw ValidationError("batchnorm_eval: negative variance in channel " + std::to_string(ch));
    if (v + p.eps <= 0.0) throw ValidationError("batchnorm_eval: var + eps must be positive");
    scale[ch] = static_cast<double>(p.gamma[ch]) / std::sqrt(v + p.eps);
  }
  return scale;
}
}  // namespace detail

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& input, const BatchNormParams<T>& p) {
  const auto scale = detail::bn_scale(input, p);
  const std::size_t c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out(input.dims());
  parallel::parallel_for(input.dim(0) * c, [&](std::size_t plane) {
    const std::size_t ch = plane % c;
    const double m = p.mean[ch], b = p.beta[ch];
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t at = plane * hw + i;
      out[at] = static_cast<T>((static_cast<double>(input[at]) - m) * scale[ch] + b);
    }
  });
  return out;
}

template <typename T>
Tensor<T> batchnorm_eval_backward(const Tensor<T>& grad_out, const BatchNormParams<T>& p) {
  const auto scale = detail::bn_scale(grad_out, p);
  const std::size_t c = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> gx(grad_out.dims());
  for (std::size_t plane = 0; plane < grad_out.dim(0) * c; ++plane) {
    const double sc = scale[plane % c];
    for (std::size_t i = 0; i < hw; ++i) {
      gx[plane * hw + i] = static_cast<T>(static_cast<double>(grad_out[plane * hw + i]) * sc);
    }
  }
  return gx;
}

/// ReLU. The mask records x > 0; the subgradient at exactly 0 is 0.
template <typename T>
struct ReluResult {
  Tensor<T> output;
  std::vector<std::uint8_t> mask;
};

template <typename T>
ReluResult<T> relu(const Tensor<T>& input) {
  ReluResult<T> r{Tensor<T>(input.dims()), std::vector<std::uint8_t>(input.size())};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool on = input[i] > T{0};
    r.mask[i] = on ? 1 : 0;
    r.output[i] = on ? input[i] : T{0};
  }
  return r;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const std::vector<std::uint8_t>& mask) {
  if (grad_out.size() != mask.size()) throw ValidationError("relu backward: grad size does not match mask");
  Tensor<T> gx(grad_out.dims());
  for (std::size_t i = 0; i < mask.size(); ++i) gx[i] = mask[i] ? grad_out[i] : T{0};
  return gx;
}

struct MaxPoolParams {
  std::size_t window = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

/// Max pooling. `argmax` holds, per output element, the flat input index that
/// won; ties go to the first candidate in row-major window order. Padded
/// positions never win.
template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool2d(const Tensor<T>& input, MaxPoolParams p) {
  detail::require_rank(input.dims(), 4, "maxpool2d", "input");
  if (p.window < 1) throw ValidationError("maxpool2d: window must be >= 1");
  if (2 * p.padding > p.window) throw ValidationError("maxpool2d: padding must be at most half the window");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = detail::pooled_extent(h, p.window, p.stride, p.padding, "maxpool2d");
  const std::size_t ow = detail::pooled_extent(w, p.window, p.stride, p.padding, "maxpool2d");
  MaxPoolResult<T> r{Tensor<T>(Shape{n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  parallel::parallel_for(n * c, [&](std::size_t plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        bool found = false;
        T best{};
        std::size_t best_at = 0;
        for (std::size_t r2 = 0; r2 < p.window; ++r2) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * p.stride + r2) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t s = 0; s < p.window; ++s) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * p.stride + s) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t at = base + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (!found || input[at] > best) {
              found = true;
              best = input[at];
              best_at = at;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        r.output[o] = best;
        r.argmax[o] = best_at;
      }
    }
  });
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_dims) {
  if (grad_out.size() != argmax.size()) throw ValidationError("maxpool2d backward: grad size does not match argmax");
  Tensor<T> gx(input_dims);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_out[o];
  return gx;
}

/// Mean over the spatial axes: [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& input) {
  detail::require_rank(input.dims(), 4, "global_avgpool", "input");
  const std::size_t nc = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out(Shape{input.dim(0), input.dim(1)});
  for (std::size_t i = 0; i < nc; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += static_cast<double>(input[i * hw + j]);
    out[i] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return out;
}

template <typename T>
Tensor<T> global_avgpool_backward(const Tensor<T>& grad_out, const Shape& input_dims) {
  const std::size_t nc = input_dims.at(0) * input_dims.at(1), hw = input_dims.at(2) * input_dims.at(3);
  if (grad_out.size() != nc) throw ValidationError("global_avgpool backward: grad " + shape_str(grad_out.dims()));
  Tensor<T> gx(input_dims);
  for (std::size_t i = 0; i < nc; ++i) {
    const T v = static_cast<T>(static_cast<double>(grad_out[i]) / static_cast<double>(hw));
    for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = v;
  }
  return gx;
}

/// [N, ...] -> [N, prod(...)]
template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
  return input.reshape(Shape{input.dim(0), input.size() / input.dim(0)});
}

/// y = x W^T + b with x [N,D], W [M,D], b [M] (b may be empty).
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(input.dims(), 2, "linear", "input");
  detail::require_rank(weight.dims(), 2, "linear", "weight");
  const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(0);
  if (weight.dim(1) != d) {
    throw ValidationError("linear: input features " + std::to_string(d) + " (input " + shape_str(input.dims()) +
                          ") != weight columns " + std::to_string(weight.dim(1)) + " (weight " +
                          shape_str(weight.dims()) + ")");
  }
  if (!bias.empty() && bias.dims() != Shape{m}) {
    throw ValidationError("linear: bias " + shape_str(bias.dims()) + " does not match " + std::to_string(m) +
                          " outputs");
  }
  Tensor<T> out(Shape{n, m});
  parallel::parallel_for(n * m, [&](std::size_t idx) {
    const std::size_t row = idx / m, col = idx % m;
    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[col]);
    for (std::size_t j = 0; j < d; ++j) {
      acc += static_cast<double>(input[row * d + j]) * static_cast<double>(weight[col * d + j]);
    }
    out[idx] = static_cast<T>(acc);
  });
  return out;
}

template <typename T>
Tensor<T> linear_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight) {
  const std::size_t n = grad_out.dim(0), m = weight.dim(0), d = weight.dim(1);
  if (grad_out.dim(1) != m) throw ValidationError("linear backward: grad " + shape_str(grad_out.dims()));
  Tensor<T> gx(Shape{n, d});
  parallel::parallel_for(n * d, [&](std::size_t idx) {
    const std::size_t row = idx / d, col = idx % d;
    double acc = 0.0;
    for (std::size_t o = 0; o < m; ++o) {
      acc += static_cast<double>(grad_out[row * m + o]) * static_cast<double>(weight[o * d + col]);
    }
    gx[idx] = static_cast<T>(acc);
  });
  return gx;
}

/// Weight gradient [M,D] of linear.
template <typename T>
Tensor<T> linear_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& input) {
  const std::size_t n = input.dim(0), d = input.dim(1), m = grad_out.dim(1);
  Tensor<T> gw(Shape{m, d});
  for (std::size_t o = 0; o < m; ++o) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t row = 0; row < n; ++row) {
        acc += static_cast<double>(grad_out[row * m + o]) * static_cast<double>(input[row * d + j]);
      }
      gw[o * d + j] = static_cast<T>(acc);
    }
  }
  return gw;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw ValidationError("add: shape mismatch " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// Per-channel (x - mean) / std on [N,C,H,W].
template <typename T>
Tensor<T> normalize(const Tensor<T>& input, const Tensor<T>& mean, const Tensor<T>& std_dev) {
  detail::require_rank(input.dims(), 4, "normalize", "input");
  const std::size_t c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (mean.dims() != Shape{c} || std_dev.dims() != Shape{c}) {
    throw ValidationError("normalize: channel stats " + shape_str(mean.dims()) + "/" + shape_str(std_dev.dims()) +
                          " do not match " + std::to_string(c) + " channels");
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (!(std_dev[ch] > T{0})) throw ValidationError("normalize: channel std must be positive");
  }
  Tensor<T> out(input.dims());
  for (std::size_t plane = 0; plane < input.dim(0) * c; ++plane) {
    const double m = mean[plane % c], s = std_dev[plane % c];
    for (std::size_t i = 0; i < hw; ++i) {
      out[plane * hw + i] = static_cast<T>((static_cast<double>(input[plane * hw + i]) - m) / s);
    }
  }
  return out;
}

template <typename T>
Tensor<T> normalize_backward(const Tensor<T>& grad_out, const Tensor<T>& std_dev) {
  const std::size_t c = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> gx(grad_out.dims());
  for (std::size_t plane = 0; plane < grad_out.dim(0) * c; ++plane) {
    const double s = std_dev[plane % c];
    for (std::size_t i = 0; i < hw; ++i) {
      gx[plane * hw + i] = static_cast<T>(static_cast<double>(grad_out[plane * hw + i]) / s);
    }
  }
  return gx;
}

}  // namespace robustnd::ops
