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

// Feed-forward backbone: a topologically ordered layer list loaded from a JSON
// manifest plus a keyed ZWB weight blob. Runs images to feature vectors and
// back-propagates feature-space gradients to the raw pixels.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "robustnd/binary_io.hpp"
#include "robustnd/error.hpp"
#include "robustnd/hash.hpp"
#include "robustnd/ops.hpp"
#include "robustnd/tensor.hpp"
#include "robustnd/trace.hpp"
#include "robustnd/traced_ops.hpp"

namespace robustnd {

/// Kind-specific layer settings. Only the fields relevant to a kind are read
/// or serialized for it.
struct LayerParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;         // maxpool2d
  std::size_t out_channels = 0;   // conv2d
  std::size_t kernel_h = 0;       // conv2d
  std::size_t kernel_w = 0;       // conv2d
  std::size_t out_features = 0;   // linear
  bool bias = true;               // conv2d, linear
  double eps = 1e-5;              // batchnorm_eval
  std::vector<double> mean;       // normalize
  std::vector<double> std_dev;    // normalize

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct LayerSpec {
  std::string id;
  OpKind kind = OpKind::input;
  std::vector<std::string> inputs;
  LayerParams params;
  Shape out_shape;  // per-sample, filled by shape inference

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Provenance {
  std::string source;  // free text, e.g. checkpoint id
  std::string hash;    // FNV-1a of the weight blob, hex
};

/// One named parameter tensor, as stored in a ZWB blob.
struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

namespace zwb {

inline constexpr std::string_view kMagic = "ZWB1";

/// Serializes entries in the given order.
inline std::vector<std::uint8_t> encode(std::span<const NamedTensor> entries) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32_le(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw ValidationError("weight name too long: " + e.name.substr(0, 32));
    if (e.value.rank() > 0xff) throw ValidationError("weight '" + e.name + "' has too many dims");
    w.u16_le(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (const std::size_t d : e.value.dims()) w.u32_le(static_cast<std::uint32_t>(d));
    for (const float v : e.value.data()) w.f32_le(v);
  }
  return w.take();
}

/// Parses a blob, preserving entry order. Duplicate names are rejected.
inline std::vector<NamedTensor> decode(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "weight blob");
  if (r.remaining() < kMagic.size() || r.str(kMagic.size()) != kMagic) throw FormatError("weight blob: bad magic");
  const std::uint32_t count = r.u32_le();
  std::vector<NamedTensor> out;
  std::set<std::string, std::less<>> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16_le();
    std::string name(r.str(len));
    const std::uint8_t ndim = r.u8();
    if (ndim == 0) throw FormatError("weight blob: entry '" + name + "' has zero dims");
    Shape dims;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint32_t extent = r.u32_le();
      if (extent == 0) throw FormatError("weight blob: entry '" + name + "' has a zero extent");
      if (numel > r.remaining() / extent) throw FormatError("weight blob: entry '" + name + "' is truncated");
      numel *= extent;
      dims.push_back(extent);
    }
    if (numel > r.remaining() / 4) throw FormatError("weight blob: entry '" + name + "' is truncated");
    std::vector<float> data(numel);
    for (auto& v : data) v = r.f32_le();
    if (!seen.insert(name).second) throw FormatError("weight blob: duplicate entry '" + name + "'");
    out.push_back(NamedTensor{std::move(name), Tensor<float>(std::move(dims), std::move(data))});
  }
  if (r.remaining() != 0) {
    throw FormatError("weight blob: " + std::to_string(r.remaining()) + " trailing bytes after last entry");
  }
  return out;
}

}  // namespace zwb

namespace detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

template <typename T>
void bn_check_var(const ops::BatchNormParams<T>& p, const std::string& layer_id) {
  for (std::size_t i = 0; i < p.var.size(); ++i) {
    if (!(p.var[i] >= T{0})) {
      throw ValidationError("layer '" + layer_id + "': negative batchnorm variance in channel " + std::to_string(i));
    }
  }
}

inline std::size_t line_of(std::string_view text, std::size_t byte) {
  const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size()));
  return 1 + static_cast<std::size_t>(std::count(text.begin(), end, '\n'));
}

inline std::size_t get_count(const json& obj, const char* key, const std::string& ctx, bool positive) {
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ValidationError(ctx + "." + key + ": expected a non-negative integer");
  }
  const auto n = v.get<std::size_t>();
  if (positive && n == 0) throw ValidationError(ctx + "." + key + ": must be >= 1");
  return n;
}

inline std::vector<double> get_reals(const json& obj, const char* key, const std::string& ctx) {
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ValidationError(ctx + "." + key + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ValidationError(ctx + "." + key + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline void reject_unknown(const json& obj, const std::vector<std::string_view>& allowed, const std::string& ctx) {
  for (const auto& [k, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ValidationError(ctx + ": unknown key '" + k + "'");
    }
  }
}

inline std::vector<std::string_view> param_keys(OpKind kind) {
  switch (kind) {
    case OpKind::normalize: return {"mean", "std"};
    case OpKind::conv2d: return {"out_channels", "kernel", "stride", "padding", "bias"};
    case OpKind::batchnorm_eval: return {"eps"};
    case OpKind::maxpool2d: return {"window", "stride", "padding"};
    case OpKind::linear: return {"out_features", "bias"};
    default: return {};
  }
}

inline LayerParams parse_params(OpKind kind, const json& p, const std::string& ctx) {
  if (!p.is_object()) throw ValidationError(ctx + ": expected an object");
  reject_unknown(p, param_keys(kind), ctx);
  LayerParams out;
  auto opt_count = [&](const char* key, std::size_t& dst, bool positive) {
    if (p.contains(key)) dst = get_count(p, key, ctx, positive);
  };
  auto opt_bool = [&](const char* key, bool& dst) {
    if (!p.contains(key)) return;
    if (!p.at(key).is_boolean()) throw ValidationError(ctx + "." + key + ": expected a boolean");
    dst = p.at(key).get<bool>();
  };
  switch (kind) {
    case OpKind::normalize:
      if (!p.contains("mean") || !p.contains("std")) throw ValidationError(ctx + ": normalize needs mean and std");
      out.mean = get_reals(p, "mean", ctx);
      out.std_dev = get_reals(p, "std", ctx);
      for (const double s : out.std_dev) {
        if (!(s > 0.0)) throw ValidationError(ctx + ".std: channel std must be positive");
      }
      break;
    case OpKind::conv2d: {
      if (!p.contains("out_channels") || !p.contains("kernel")) {
        throw ValidationError(ctx + ": conv2d needs out_channels and kernel");
      }
      out.out_channels = get_count(p, "out_channels", ctx, true);
      const auto& k = p.at("kernel");
      if (k.is_array()) {
        if (k.size() != 2) throw ValidationError(ctx + ".kernel: expected [kh, kw]");
        json pair = {{"h", k[0]}, {"w", k[1]}};
        out.kernel_h = get_count(pair, "h", ctx + ".kernel", true);
        out.kernel_w = get_count(pair, "w", ctx + ".kernel", true);
      } else {
        out.kernel_h = out.kernel_w = get_count(p, "kernel", ctx, true);
      }
      opt_count("stride", out.stride, true);
      opt_count("padding", out.padding, false);
      opt_bool("bias", out.bias);
      break;
    }
    case OpKind::batchnorm_eval:
      if (p.contains("eps")) {
        if (!p.at("eps").is_number()) throw ValidationError(ctx + ".eps: expected a number");
        out.eps = p.at("eps").get<double>();
        if (!(out.eps >= 0.0)) throw ValidationError(ctx + ".eps: must be non-negative");
      }
      break;
    case OpKind::maxpool2d:
      opt_count("window", out.window, true);
      out.stride = out.window;
      opt_count("stride", out.stride, true);
      opt_count("padding", out.padding, false);
      break;
    case OpKind::linear:
      if (!p.contains("out_features")) throw ValidationError(ctx + ": linear needs out_features");
      out.out_features = get_count(p, "out_features", ctx, true);
      opt_bool("bias", out.bias);
      break;
    default:
      break;
  }
  return out;
}

inline ojson params_to_json(const LayerSpec& l) {
  const auto& p = l.params;
  ojson j = ojson::object();
  switch (l.kind) {
    case OpKind::normalize:
      j["mean"] = p.mean;
      j["std"] = p.std_dev;
      break;
    case OpKind::conv2d:
      j["out_channels"] = p.out_channels;
      if (p.kernel_h == p.kernel_w) {
        j["kernel"] = p.kernel_h;
      } else {
        j["kernel"] = {p.kernel_h, p.kernel_w};
      }
      j["stride"] = p.stride;
      j["padding"] = p.padding;
      j["bias"] = p.bias;
      break;
    case OpKind::batchnorm_eval:
      j["eps"] = p.eps;
      break;
    case OpKind::maxpool2d:
      j["window"] = p.window;
      j["stride"] = p.stride;
      j["padding"] = p.padding;
      break;
    case OpKind::linear:
      j["out_features"] = p.out_features;
      j["bias"] = p.bias;
      break;
    default:
      break;
  }
  return j;
}

}  // namespace detail

/// A loaded backbone. Immutable once weights are loaded; concurrent forward
/// and backward calls on a shared instance are safe.
template <typename T>
class Backbone {
 public:
  /// Parses and validates a manifest, running shape inference. The returned
  /// graph has no weights yet unless it needs none.
  static Backbone from_manifest(std::string_view text) {
    detail::json doc;
    try {
      doc = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
      throw ValidationError("manifest parse error at line " + std::to_string(detail::line_of(text, e.byte)) + ": " +
                            e.what());
    }
    try {
      return from_json(doc);
    } catch (const detail::json::exception& e) {
      throw ValidationError(std::string("manifest: ") + e.what());
    }
  }

  /// Serializes the structure (not the weights) back to manifest JSON.
  std::string to_manifest() const {
    detail::ojson j;
    j["version"] = 1;
    j["input_shape"] = input_shape_;
    j["feature_layer"] = feature_layer_;
    if (!provenance_.source.empty()) j["provenance"] = provenance_.source;
    auto& arr = j["layers"] = detail::ojson::array();
    for (const auto& l : layers_) {
      detail::ojson e;
      e["id"] = l.id;
      e["kind"] = std::string(to_string(l.kind));
      e["inputs"] = l.inputs;
      e["params"] = detail::params_to_json(l);
      arr.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
  }

  /// Attaches weights from a ZWB blob. Entries are matched by name, so their
  /// order in the blob is irrelevant; a missing, surplus, or mis-shaped entry
  /// is an error naming the layer.
  Backbone with_weights(std::span<const std::uint8_t> blob) const {
    Backbone g = *this;
    g.weights_.clear();
    g.weight_order_.clear();
    auto entries = zwb::decode(blob);
    std::map<std::string, Shape> expected = expected_blob_entries();
    for (auto& e : entries) {
      auto it = expected.find(e.name);
      if (it == expected.end()) throw ValidationError("weight blob: unexpected entry '" + e.name + "'");
      if (e.value.dims() != it->second) {
        const auto dot = e.name.rfind('.');
        throw ValidationError("weight shape mismatch for layer '" + e.name.substr(0, dot) + "' (" + e.name + "): got " +
                              shape_str(e.value.dims()) + ", expected " + shape_str(it->second));
      }
      g.weight_order_.push_back(e.name);
      g.weights_.emplace(e.name, e.value.template cast<T>());
    }
    for (const auto& [name, dims] : expected) {
      if (!g.weights_.count(name)) {
        throw ValidationError("weight blob: missing entry '" + name + "' for layer '" + name.substr(0, name.rfind('.')) +
                              "'");
      }
    }
    g.provenance_.hash = hex64(fnv1a64(blob));
    g.loaded_ = true;
    g.bind();
    return g;
  }

  /// Blob with the same entry order the weights were loaded in (manifest
  /// order when the graph was never given a blob).
  std::vector<std::uint8_t> save_weights() const {
    std::vector<NamedTensor> entries;
    for (const auto& name : weight_order_) {
      entries.push_back(NamedTensor{name, weights_.at(name).template cast<float>()});
    }
    return zwb::encode(entries);
  }

  bool ready() const noexcept { return loaded_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::string& feature_layer() const noexcept { return feature_layer_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t feature_dim() const { return shape_numel(layer(feature_layer_).out_shape); }
  const Provenance& provenance() const noexcept { return provenance_; }
  const std::string& hash() const noexcept { return provenance_.hash; }
  const Tensor<T>& weight(const std::string& name) const {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ValidationError("no weight named '" + name + "'");
    return it->second;
  }

  const LayerSpec& layer(std::string_view id) const {
    for (const auto& l : layers_) {
      if (l.id == id) return l;
    }
    throw ValidationError("no layer '" + std::string(id) + "'");
  }

  /// Structural equality: layers, shapes, feature layer. Weights are not compared.
  bool same_structure(const Backbone& o) const {
    return layers_ == o.layers_ && feature_layer_ == o.feature_layer_ && input_shape_ == o.input_shape_;
  }

  /// Features [N, D] for images [N, C, H, W] with pixels in [0, 1].
  Tensor<T> extract_features(const Tensor<T>& images) const {
    OpTrace<T> trace;
    auto out = run(trace, images);
    return out.value.reshape(Shape{images.dim(0), feature_dim()});
  }

  struct TracedForward {
    OpTrace<T> trace;
    std::size_t input_slot = 0;
    std::size_t output_slot = 0;
    Shape output_dims;
    Tensor<T> features;  // [D]
  };

  /// Single-image forward that keeps the trace for `input_gradient`.
  TracedForward forward(const Tensor<T>& image) const {
    TracedForward f;
    auto batch = as_batch(image);
    auto out = run(f.trace, batch);
    f.input_slot = 0;
    f.output_slot = out.slot;
    f.output_dims = out.value.dims();
    f.features = out.value.reshape(Shape{feature_dim()});
    return f;
  }

  /// (dh/dx)^T g for the image the trace was recorded on; returns [C, H, W].
  Tensor<T> input_gradient(const TracedForward& f, const Tensor<T>& feature_grad) const {
    if (f.trace.entries().empty() && f.trace.slot_count() == 0) throw ValidationError("input_gradient: missing trace");
    if (feature_grad.size() != feature_dim()) {
      throw ValidationError("input_gradient: feature grad has " + std::to_string(feature_grad.size()) +
                            " elements, feature dim is " + std::to_string(feature_dim()));
    }
    auto g = f.trace.backward(f.output_slot, feature_grad.reshape(f.output_dims), f.input_slot);
    require_finite(g, "input gradient");
    return g.reshape(input_shape_);
  }

  Tensor<T> input_gradient(const Tensor<T>& image, const Tensor<T>& feature_grad) const {
    return input_gradient(forward(image), feature_grad);
  }

 private:
  static Backbone from_json(const detail::json& doc) {
    if (!doc.is_object()) throw ValidationError("manifest: top level must be an object");
    detail::reject_unknown(doc, {"version", "input_shape", "feature_layer", "layers", "provenance"}, "manifest");
    if (!doc.contains("version") || doc.at("version") != 1) throw ValidationError("manifest: version must be 1");
    Backbone g;
    if (!doc.contains("input_shape") || !doc.at("input_shape").is_array() || doc.at("input_shape").size() != 3) {
      throw ValidationError("manifest.input_shape: expected [C, H, W]");
    }
    for (std::size_t i = 0; i < 3; ++i) {
      detail::json wrap = {{"v", doc.at("input_shape")[i]}};
      g.input_shape_.push_back(detail::get_count(wrap, "v", "manifest.input_shape[" + std::to_string(i) + "]", true));
    }
    if (doc.contains("provenance")) {
      if (!doc.at("provenance").is_string()) throw ValidationError("manifest.provenance: expected a string");
      g.provenance_.source = doc.at("provenance").get<std::string>();
    }
    if (!doc.contains("layers") || !doc.at("layers").is_array() || doc.at("layers").empty()) {
      throw ValidationError("manifest.layers: expected a non-empty array");
    }
    const auto& layers = doc.at("layers");
    std::vector<std::string> all_ids;
    for (const auto& l : layers) {
      if (l.is_object() && l.contains("id") && l.at("id").is_string()) all_ids.push_back(l.at("id").get<std::string>());
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string ctx = "manifest.layers[" + std::to_string(i) + "]";
      const auto& l = layers[i];
      if (!l.is_object()) throw ValidationError(ctx + ": expected an object");
      detail::reject_unknown(l, {"id", "kind", "inputs", "params"}, ctx);
      LayerSpec spec;
      if (!l.contains("id") || !l.at("id").is_string() || l.at("id").get<std::string>().empty()) {
        throw ValidationError(ctx + ".id: expected a non-empty string");
      }
      spec.id = l.at("id").get<std::string>();
      for (const auto& prev : g.layers_) {
        if (prev.id == spec.id) throw ValidationError(ctx + ".id: duplicate layer id '" + spec.id + "'");
      }
      if (!l.contains("kind") || !l.at("kind").is_string()) throw ValidationError(ctx + ".kind: expected a string");
      const auto kind = parse_op_kind(l.at("kind").get<std::string>());
      if (!kind) throw ValidationError(ctx + ".kind: unsupported layer kind '" + l.at("kind").get<std::string>() + "'");
      spec.kind = *kind;
      if (l.contains("inputs")) {
        if (!l.at("inputs").is_array()) throw ValidationError(ctx + ".inputs: expected an array of ids");
        for (const auto& in : l.at("inputs")) {
          if (!in.is_string()) throw ValidationError(ctx + ".inputs: expected an array of ids");
          spec.inputs.push_back(in.get<std::string>());
        }
      }
      spec.params = detail::parse_params(spec.kind, l.contains("params") ? l.at("params") : detail::json::object(),
                                         ctx + ".params");
      const std::size_t want = spec.kind == OpKind::input ? 0 : spec.kind == OpKind::add ? 2 : 1;
      if (spec.inputs.size() != want) {
        throw ValidationError(ctx + ": layer '" + spec.id + "' of kind " + std::string(to_string(spec.kind)) +
                              " needs " + std::to_string(want) + " inputs, got " + std::to_string(spec.inputs.size()));
      }
      for (const auto& in : spec.inputs) {
        if (in == spec.id) throw ValidationError(ctx + ": cycle, layer '" + spec.id + "' consumes itself");
        const bool declared = std::any_of(g.layers_.begin(), g.layers_.end(), [&](const LayerSpec& s) { return s.id == in; });
        if (declared) continue;
        if (std::find(all_ids.begin(), all_ids.end(), in) != all_ids.end()) {
          throw ValidationError(ctx + ": forward reference to '" + in + "' from layer '" + spec.id + "'");
        }
        throw ValidationError(ctx + ": dangling input reference '" + in + "' from layer '" + spec.id + "'");
      }
      g.infer_shape(spec, ctx);
      g.layers_.push_back(std::move(spec));
    }
    const auto input_count = std::count_if(g.layers_.begin(), g.layers_.end(),
                                           [](const LayerSpec& s) { return s.kind == OpKind::input; });
    if (input_count != 1) throw ValidationError("manifest: expected exactly one input layer, got " + std::to_string(input_count));

    if (doc.contains("feature_layer")) {
      if (!doc.at("feature_layer").is_string()) throw ValidationError("manifest.feature_layer: expected a string");
      g.feature_layer_ = doc.at("feature_layer").get<std::string>();
      g.layer(g.feature_layer_);
    } else if (g.layers_.back().kind == OpKind::linear) {
      g.feature_layer_ = g.layers_.back().inputs.front();  // drop the classifier head
    } else {
      g.feature_layer_ = g.layers_.back().id;
    }
    g.plan();
    g.set_normalize_stats();
    if (g.expected_blob_entries().empty()) {
      g.provenance_.hash = hex64(fnv1a64(zwb::encode({})));
      g.loaded_ = true;
      g.bind();
    }
    return g;
  }

  void infer_shape(LayerSpec& spec, const std::string& ctx) const {
    auto in_shape = [&](std::size_t i) -> const Shape& { return layer(spec.inputs.at(i)).out_shape; };
    auto need_rank = [&](const Shape& s, std::size_t r) {
      if (s.size() != r) {
        throw ValidationError(ctx + ": layer '" + spec.id + "' (" + std::string(to_string(spec.kind)) +
                              ") expects rank-" + std::to_string(r) + " input, got " + shape_str(s));
      }
    };
    const auto& p = spec.params;
    switch (spec.kind) {
      case OpKind::input:
        spec.out_shape = input_shape_;
        break;
      case OpKind::normalize:
        need_rank(in_shape(0), 3);
        if (p.mean.size() != in_shape(0)[0] || p.std_dev.size() != in_shape(0)[0]) {
          throw ValidationError(ctx + ": normalize stats length does not match " + std::to_string(in_shape(0)[0]) +
                                " channels");
        }
        spec.out_shape = in_shape(0);
        break;
      case OpKind::conv2d: {
        need_rank(in_shape(0), 3);
        const auto& s = in_shape(0);
        try {
          spec.out_shape = {p.out_channels, ops::conv_out_extent(s[1], p.kernel_h, p.stride, p.padding),
                            ops::conv_out_extent(s[2], p.kernel_w, p.stride, p.padding)};
        } catch (const ValidationError& e) {
          throw ValidationError(ctx + ": layer '" + spec.id + "': " + e.what());
        }
        break;
      }
      case OpKind::batchnorm_eval:
      case OpKind::relu:
        spec.out_shape = in_shape(0);
        if (spec.kind == OpKind::batchnorm_eval) need_rank(in_shape(0), 3);
        break;
      case OpKind::maxpool2d: {
        need_rank(in_shape(0), 3);
        const auto& s = in_shape(0);
        if (2 * p.padding > p.window) throw ValidationError(ctx + ": maxpool2d padding exceeds half the window");
        try {
          spec.out_shape = {s[0], ops::conv_out_extent(s[1], p.window, p.stride, p.padding),
                            ops::conv_out_extent(s[2], p.window, p.stride, p.padding)};
        } catch (const ValidationError& e) {
          throw ValidationError(ctx + ": layer '" + spec.id + "': " + e.what());
        }
        break;
      }
      case OpKind::global_avgpool:
        need_rank(in_shape(0), 3);
        spec.out_shape = {in_shape(0)[0]};
        break;
      case OpKind::flatten:
        spec.out_shape = {shape_numel(in_shape(0))};
        break;
      case OpKind::linear:
        need_rank(in_shape(0), 1);
        spec.out_shape = {p.out_features};
        break;
      case OpKind::add:
        if (in_shape(0) != in_shape(1)) {
          throw ValidationError(ctx + ": add '" + spec.id + "' shape contradiction " + shape_str(in_shape(0)) + " vs " +
                                shape_str(in_shape(1)));
        }
        spec.out_shape = in_shape(0);
        break;
    }
  }

  /// Blob entries the manifest requires, keyed "layerid.param".
  std::map<std::string, Shape> expected_blob_entries() const {
    std::map<std::string, Shape> out;
    for (const auto& l : layers_) {
      const auto& p = l.params;
      switch (l.kind) {
        case OpKind::conv2d: {
          const std::size_t c = layer(l.inputs[0]).out_shape[0];
          out[l.id + ".weight"] = {p.out_channels, c, p.kernel_h, p.kernel_w};
          if (p.bias) out[l.id + ".bias"] = {p.out_channels};
          break;
        }
        case OpKind::batchnorm_eval: {
          const std::size_t c = l.out_shape[0];
          for (const char* n : {".mean", ".var", ".gamma", ".beta"}) out[l.id + n] = {c};
          break;
        }
        case OpKind::linear: {
          const std::size_t d = layer(l.inputs[0]).out_shape[0];
          out[l.id + ".weight"] = {p.out_features, d};
          if (p.bias) out[l.id + ".bias"] = {p.out_features};
          break;
        }
        default:
          break;
      }
    }
    return out;
  }

  void set_normalize_stats() {
    for (const auto& l : layers_) {
      if (l.kind != OpKind::normalize) continue;
      const Shape c{l.params.mean.size()};
      norm_stats_[l.id] = {Tensor<T>(c, std::vector<T>(l.params.mean.begin(), l.params.mean.end())),
                           Tensor<T>(c, std::vector<T>(l.params.std_dev.begin(), l.params.std_dev.end()))};
    }
  }

  /// Marks layers the feature output depends on.
  void plan() {
    needed_.assign(layers_.size(), false);
    std::vector<std::string> stack{feature_layer_};
    while (!stack.empty()) {
      const std::string id = stack.back();
      stack.pop_back();
      for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].id != id || needed_[i]) continue;
        needed_[i] = true;
        for (const auto& in : layers_[i].inputs) stack.push_back(in);
      }
    }
  }

  /// Resolves per-layer parameter references after the weight map settles.
  void bind() {
    bn_.clear();
    for (const auto& l : layers_) {
      if (l.kind != OpKind::batchnorm_eval) continue;
      ops::BatchNormParams<T> p{weights_.at(l.id + ".mean"), weights_.at(l.id + ".var"), weights_.at(l.id + ".gamma"),
                                weights_.at(l.id + ".beta"), l.params.eps};
      detail::bn_check_var(p, l.id);
      bn_.emplace(l.id, std::move(p));
    }
  }

  Tensor<T> as_batch(const Tensor<T>& image) const {
    if (image.dims() == input_shape_) {
      Shape b = input_shape_;
      b.insert(b.begin(), 1);
      return image.reshape(b);
    }
    if (image.rank() == 4 && image.dim(0) == 1) return as_batch(image.reshape(input_shape_));
    throw ValidationError("image shape " + shape_str(image.dims()) + " does not match expected input " +
                          shape_str(input_shape_));
  }

  traced::Node<T> run(OpTrace<T>& trace, const Tensor<T>& images) const {
    if (!loaded_) throw ValidationError("backbone weights are not loaded");
    if (images.rank() != 4 || Shape(images.dims().begin() + 1, images.dims().end()) != input_shape_) {
      throw ValidationError("images " + shape_str(images.dims()) + " do not match expected input [N," +
                            shape_str(input_shape_).substr(1));
    }
    static const Tensor<T> no_bias;
    std::vector<std::optional<traced::Node<T>>> nodes(layers_.size());
    std::map<std::string, std::size_t, std::less<>> index;
    std::vector<std::size_t> last_use(layers_.size(), 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      index[layers_[i].id] = i;
      if (!needed_[i]) continue;
      for (const auto& in : layers_[i].inputs) last_use[index.at(in)] = i;
    }
    auto in = [&](const LayerSpec& l, std::size_t k) -> const traced::Node<T>& { return *nodes[index.at(l.inputs[k])]; };
    std::size_t feature_index = index.at(feature_layer_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!needed_[i]) continue;
      const auto& l = layers_[i];
      const auto& p = l.params;
      auto bias_of = [&]() -> const Tensor<T>& { return p.bias ? weights_.at(l.id + ".bias") : no_bias; };
      switch (l.kind) {
        case OpKind::input:
          nodes[i] = traced::input(trace, images);
          break;
        case OpKind::normalize: {
          const auto& st = norm_stats_.at(l.id);
          nodes[i] = traced::normalize(trace, l.id, in(l, 0), st.first, st.second);
          break;
        }
        case OpKind::conv2d:
          nodes[i] = traced::conv2d(trace, l.id, in(l, 0), weights_.at(l.id + ".weight"), bias_of(),
                                    ops::Conv2dParams{p.stride, p.padding});
          break;
        case OpKind::batchnorm_eval:
          nodes[i] = traced::batchnorm_eval(trace, l.id, in(l, 0), bn_.at(l.id));
          break;
        case OpKind::relu:
          nodes[i] = traced::relu(trace, l.id, in(l, 0));
          break;
        case OpKind::maxpool2d:
          nodes[i] = traced::maxpool2d(trace, l.id, in(l, 0), ops::MaxPoolParams{p.window, p.stride, p.padding});
          break;
        case OpKind::global_avgpool:
          nodes[i] = traced::global_avgpool(trace, l.id, in(l, 0));
          break;
        case OpKind::flatten:
          nodes[i] = traced::flatten(trace, l.id, in(l, 0));
          break;
        case OpKind::linear:
          nodes[i] = traced::linear(trace, l.id, in(l, 0), weights_.at(l.id + ".weight"), bias_of());
          break;
        case OpKind::add:
          nodes[i] = traced::add(trace, l.id, in(l, 0), in(l, 1));
          break;
      }
      if (!nodes[i]->value.all_finite()) throw NumericError("non-finite activation in layer '" + l.id + "'");
      for (const auto& name : l.inputs) {
        const std::size_t j = index.at(name);
        if (last_use[j] == i && j != feature_index) nodes[j].reset();
      }
    }
    return std::move(*nodes[feature_index]);
  }

  std::vector<LayerSpec> layers_;
  std::string feature_layer_;
  Shape input_shape_;
  Provenance provenance_;
  std::map<std::string, Tensor<T>> weights_;
  std::vector<std::string> weight_order_;
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> norm_stats_;
  std::map<std::string, ops::BatchNormParams<T>> bn_;
  std::vector<bool> needed_;
  bool loaded_ = false;
};

/// Loads weights into a manifest-only graph.
template <typename T>
Backbone<T> load_weights(const Backbone<T>& graph, std::span<const std::uint8_t> blob) {
  return graph.with_weights(blob);
}

}  // namespace robustnd
