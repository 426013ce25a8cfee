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

// On-disk formats: IDX (MNIST-style, big-endian, u8 payload) for images and
// labels, and ZTB (little-endian f32) for arbitrary tensors and feature banks.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustnd/binary_io.hpp"
#include "robustnd/error.hpp"
#include "robustnd/hash.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd::formats {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// IDX u8 images -> [n, 1, rows, cols] in [0, 1].
inline Tensor<float> decode_idx_images(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "idx images");
  const std::uint32_t magic = r.u32_be();
  if (magic != kIdxImageMagic) {
    throw FormatError("idx images: bad magic 0x" + hex64(magic).substr(8) +
                      (magic == kIdxLabelMagic ? " (this is a label file)" : ""));
  }
  const std::uint32_t n = r.u32_be(), rows = r.u32_be(), cols = r.u32_be();
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("idx images: zero dimension");
  const std::uint64_t total = static_cast<std::uint64_t>(n) * rows * cols;
  if (total > std::numeric_limits<std::uint32_t>::max() * 16ULL) throw FormatError("idx images: dim overflow");
  if (total != r.remaining()) {
    throw FormatError("idx images: payload has " + std::to_string(r.remaining()) + " bytes, header says " +
                      std::to_string(total));
  }
  auto payload = r.take(static_cast<std::size_t>(total));
  std::vector<float> data(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) data[i] = static_cast<float>(payload[i]) / 255.0f;
  return Tensor<float>(Shape{n, 1, rows, cols}, std::move(data));
}

/// Inverse of decode_idx_images; pixels must be multiples of 1/255.
inline std::vector<std::uint8_t> encode_idx_images(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ValidationError("idx images: expected [n, 1, rows, cols], got " + shape_str(images.dims()));
  }
  io::ByteWriter w;
  w.u32_be(kIdxImageMagic);
  w.u32_be(static_cast<std::uint32_t>(images.dim(0)));
  w.u32_be(static_cast<std::uint32_t>(images.dim(2)));
  w.u32_be(static_cast<std::uint32_t>(images.dim(3)));
  for (const float v : images.data()) {
    const double level = std::round(static_cast<double>(v) * 255.0);
    if (!(level >= 0.0 && level <= 255.0)) throw ValidationError("idx images: pixel outside [0, 1]");
    w.u8(static_cast<std::uint8_t>(level));
  }
  return w.take();
}

inline std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "idx labels");
  const std::uint32_t magic = r.u32_be();
  if (magic != kIdxLabelMagic) {
    throw FormatError("idx labels: bad magic 0x" + hex64(magic).substr(8) +
                      (magic == kIdxImageMagic ? " (this is an image file)" : ""));
  }
  const std::uint32_t n = r.u32_be();
  if (n != r.remaining()) {
    throw FormatError("idx labels: payload has " + std::to_string(r.remaining()) + " bytes, header says " +
                      std::to_string(n));
  }
  auto payload = r.take(n);
  return std::vector<int>(payload.begin(), payload.end());
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  io::ByteWriter w;
  w.u32_be(kIdxLabelMagic);
  w.u32_be(static_cast<std::uint32_t>(labels.size()));
  for (const int l : labels) {
    if (l < 0 || l > 255) throw ValidationError("idx labels: label out of u8 range");
    w.u8(static_cast<std::uint8_t>(l));
  }
  return w.take();
}

inline Tensor<float> load_idx(const std::filesystem::path& path) { return decode_idx_images(io::read_file(path)); }
inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  return decode_idx_labels(io::read_file(path));
}
inline void save_idx(const Tensor<float>& images, const std::filesystem::path& path) {
  io::write_file(path, encode_idx_images(images));
}
inline void save_idx_labels(std::span<const int> labels, const std::filesystem::path& path) {
  io::write_file(path, encode_idx_labels(labels));
}

inline constexpr std::string_view kZtbMagic = "ZTB1";
inline constexpr std::uint8_t kZtbF32 = 0;

inline std::vector<std::uint8_t> encode_ztb(const Tensor<float>& t) {
  if (t.rank() == 0 || t.rank() > 255) throw ValidationError("ztb: tensor rank must be in [1, 255]");
  io::ByteWriter w;
  w.bytes(kZtbMagic);
  w.u8(kZtbF32);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (const std::size_t d : t.dims()) w.u32_le(static_cast<std::uint32_t>(d));
  for (const float v : t.data()) w.f32_le(v);
  return w.take();
}

inline Tensor<float> decode_ztb(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "ztb");
  if (r.remaining() < kZtbMagic.size() || r.str(kZtbMagic.size()) != kZtbMagic) throw FormatError("ztb: bad magic");
  const std::uint8_t dtype = r.u8();
  if (dtype != kZtbF32) throw FormatError("ztb: unsupported dtype tag " + std::to_string(dtype));
  const std::uint8_t ndim = r.u8();
  if (ndim == 0) throw FormatError("ztb: zero-rank tensor");
  Shape dims;
  std::uint64_t numel = 1;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = r.u32_le();
    if (d == 0) throw FormatError("ztb: empty dimension " + std::to_string(i));
    numel *= d;
    if (numel > r.remaining()) throw FormatError("ztb: truncated payload");
    dims.push_back(d);
  }
  if (numel * 4 != r.remaining()) {
    throw FormatError("ztb: payload has " + std::to_string(r.remaining()) + " bytes, dims need " +
                      std::to_string(numel * 4));
  }
  std::vector<float> data(static_cast<std::size_t>(numel));
  for (auto& v : data) v = r.f32_le();
  return Tensor<float>(std::move(dims), std::move(data));
}

inline Tensor<float> load_ztb(const std::filesystem::path& path) { return decode_ztb(io::read_file(path)); }
inline void save_ztb(const Tensor<float>& t, const std::filesystem::path& path) { io::write_file(path, encode_ztb(t)); }

/// Images from either format, chosen by extension (.ztb, otherwise IDX).
inline Tensor<float> load_images(const std::filesystem::path& path) {
  if (path.extension() == ".ztb") {
    auto t = load_ztb(path);
    if (t.rank() != 4) throw FormatError("ztb images: expected [n, C, H, W], got " + shape_str(t.dims()));
    return t;
  }
  return load_idx(path);
}

/// Defaults recorded next to a persisted bank.
struct BankMetadata {
  BankSource source;
  std::size_t k = 2;
  std::size_t gmm_components = 5;
};

inline std::filesystem::path bank_sidecar(const std::filesystem::path& bank_path) {
  auto p = bank_path;
  p += ".json";
  return p;
}

/// Writes the bank as ZTB plus a "<path>.json" metadata sidecar.
inline void save_bank(const FeatureBank<float>& bank, const BankMetadata& meta, const std::filesystem::path& path) {
  save_ztb(bank.features(), path);
  nlohmann::ordered_json j;
  j["backbone_hash"] = bank.source().backbone_hash;
  j["dataset_tag"] = bank.source().dataset_tag;
  j["k"] = meta.k;
  j["gmm_components"] = meta.gmm_components;
  j["rows"] = bank.n();
  j["dim"] = bank.d();
  io::write_text(bank_sidecar(path), j.dump(2) + "\n");
}

struct LoadedBank {
  std::shared_ptr<const FeatureBank<float>> bank;
  BankMetadata meta;
};

/// Reads a bank; a missing sidecar leaves the bank unbound to any backbone.
inline LoadedBank load_bank(const std::filesystem::path& path) {
  auto features = load_ztb(path);
  if (features.rank() != 2) throw FormatError("bank: expected [n, d], got " + shape_str(features.dims()));
  BankMetadata meta;
  const auto side = bank_sidecar(path);
  if (std::filesystem::exists(side)) {
    try {
      const auto j = nlohmann::json::parse(io::read_text(side));
      meta.source.backbone_hash = j.value("backbone_hash", "");
      meta.source.dataset_tag = j.value("dataset_tag", "");
      meta.k = j.value("k", std::size_t{2});
      meta.gmm_components = j.value("gmm_components", std::size_t{5});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bank sidecar '" + side.string() + "': " + e.what());
    }
  }
  meta.source.dataset_tag = meta.source.dataset_tag.empty() ? path.stem().string() : meta.source.dataset_tag;
  auto bank = std::make_shared<const FeatureBank<float>>(std::move(features), meta.source);
  return {std::move(bank), meta};
}

}  // namespace robustnd::formats
