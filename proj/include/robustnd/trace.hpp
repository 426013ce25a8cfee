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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "robustnd/error.hpp"
#include "robustnd/hash.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd {

enum class OpKind { input, normalize, conv2d, batchnorm_eval, relu, maxpool2d, global_avgpool, flatten, linear, add };

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::normalize: return "normalize";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm_eval: return "batchnorm_eval";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::global_avgpool: return "global_avgpool";
    case OpKind::flatten: return "flatten";
    case OpKind::linear: return "linear";
    case OpKind::add: return "add";
  }
  return "?";
}

inline std::optional<OpKind> parse_op_kind(std::string_view s) {
  for (OpKind k : {OpKind::input, OpKind::normalize, OpKind::conv2d, OpKind::batchnorm_eval, OpKind::relu,
                   OpKind::maxpool2d, OpKind::global_avgpool, OpKind::flatten, OpKind::linear, OpKind::add}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Reverse-mode record of one forward pass. Slot 0..L-1 are leaves created by
/// `leaf()`; every `record()` appends one op entry whose output occupies a new
/// slot. An entry keeps its input slots and a closure mapping the output
/// gradient to one gradient per input; the closure owns whatever auxiliaries
/// the op saved (relu masks, pooling argmax, weights by reference).
template <typename T>
class OpTrace {
 public:
  using BackwardFn = std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out)>;

  struct Entry {
    OpKind kind;
    std::string label;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  std::size_t leaf(Shape dims) {
    slot_dims_.push_back(std::move(dims));
    return slot_dims_.size() - 1;
  }

  /// `pattern` fingerprints the piecewise-linear region the op is in (relu
  /// masks, argmax picks); zero for smooth ops.
  std::size_t record(OpKind kind, std::string label, std::vector<std::size_t> inputs, Shape out_dims,
                     BackwardFn backward, std::uint64_t pattern = 0) {
    for (const std::size_t in : inputs) {
      if (in >= slot_dims_.size()) throw ValidationError("trace: op '" + label + "' reads an unknown slot");
    }
    slot_dims_.push_back(std::move(out_dims));
    entries_.push_back(Entry{kind, std::move(label), std::move(inputs), slot_dims_.size() - 1, std::move(backward)});
    pattern_.update_u64(pattern);
    return slot_dims_.size() - 1;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Shape& slot_dims(std::size_t slot) const { return slot_dims_.at(slot); }
  std::size_t slot_count() const noexcept { return slot_dims_.size(); }

  /// Combined fingerprint of every recorded op's activation pattern. Two
  /// passes with equal signatures ran through the same linear region.
  std::uint64_t pattern_signature() const noexcept { return pattern_.digest(); }

  /// Replays the entries in reverse, seeding `output` with `output_grad`, and
  /// returns the gradient accumulated at slot `wrt` (zeros if unreachable).
  Tensor<T> backward(std::size_t output, const Tensor<T>& output_grad, std::size_t wrt = 0) const {
    if (output >= slot_dims_.size() || wrt >= slot_dims_.size()) throw ValidationError("trace: slot out of range");
    if (output_grad.dims() != slot_dims_[output]) {
      throw ValidationError("trace: output grad " + shape_str(output_grad.dims()) + " does not match output " +
                            shape_str(slot_dims_[output]));
    }
    std::vector<std::optional<Tensor<T>>> grads(slot_dims_.size());
    grads[output] = output_grad;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      auto& g = grads[it->output];
      if (!g) continue;
      auto input_grads = it->backward(*g);
      if (input_grads.size() != it->inputs.size()) {
        throw ValidationError("trace: op '" + it->label + "' returned the wrong number of gradients");
      }
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        const std::size_t slot = it->inputs[i];
        if (input_grads[i].dims() != slot_dims_[slot]) {
          throw ValidationError("trace: op '" + it->label + "' gradient " + shape_str(input_grads[i].dims()) +
                                " does not match input " + shape_str(slot_dims_[slot]));
        }
        if (!grads[slot]) {
          grads[slot] = std::move(input_grads[i]);
        } else {
          auto& acc = *grads[slot];
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += input_grads[i][j];
        }
      }
      if (it->output != wrt) g.reset();
    }
    if (!grads[wrt]) return Tensor<T>(slot_dims_[wrt]);
    return std::move(*grads[wrt]);
  }

 private:
  std::vector<Shape> slot_dims_;
  std::vector<Entry> entries_;
  Fnv1a64 pattern_;
};

/// Fingerprint helpers for `OpTrace::record`'s pattern argument.
inline std::uint64_t pattern_of(const std::vector<std::uint8_t>& mask) {
  return fnv1a64(mask);
}
inline std::uint64_t pattern_of(const std::vector<std::size_t>& picks) {
  Fnv1a64 h;
  for (const std::size_t p : picks) h.update_u64(p);
  return h.digest();
}

}  // namespace robustnd
