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


// Parity records: probe images plus the features the exporting framework
// computed for them. `robustnd check --parity` replays the probes through the
// engine and compares.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "robustnd/backbone.hpp"
#include "robustnd/binary_io.hpp"
#include "robustnd/error.hpp"
#include "robustnd/formats.hpp"

namespace robustnd {

struct ParityRecord {
  Tensor<float> probes;    // [n, c, h, w]
  Tensor<float> features;  // [n, d]
  double tolerance = 1e-3;
  std::string backbone_hash;  // optional
};

struct ParityResult {
  std::size_t probes = 0;
  double max_abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// {"format": "robustnd-parity", "version": 1, "probes": <ztb>, "features": <ztb>,
///  "tolerance": 1e-3, "backbone_hash": ...}. Paths are relative to the record.
inline ParityRecord load_parity_record(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("parity record '" + path.string() + "': " + e.what());
  }
  try {
    if (j.value("format", "") != "robustnd-parity" || j.value("version", 0) != 1) {
      throw FormatError("parity record '" + path.string() + "': unsupported format");
    }
    auto resolve = [&](const char* key) {
      std::filesystem::path p = j.at(key).get<std::string>();
      return p.is_absolute() ? p : path.parent_path() / p;
    };
    ParityRecord r;
    r.probes = formats::load_ztb(resolve("probes"));
    r.features = formats::load_ztb(resolve("features"));
    r.tolerance = j.value("tolerance", 1e-3);
    r.backbone_hash = j.value("backbone_hash", "");
    if (r.probes.rank() != 4 || r.features.rank() != 2 || r.probes.dim(0) != r.features.dim(0)) {
      throw FormatError("parity record: probes " + shape_str(r.probes.dims()) + " and features " +
                        shape_str(r.features.dims()) + " do not pair up");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("parity record '" + path.string() + "': " + e.what());
  }
}

inline ParityResult check_parity(const Backbone<float>& graph, const ParityRecord& rec) {
  if (!rec.backbone_hash.empty() && rec.backbone_hash != graph.hash()) {
    throw ValidationError("parity: record was made for backbone " + rec.backbone_hash + ", loaded " + graph.hash());
  }
  if (rec.features.dim(1) != graph.feature_dim()) {
    throw ValidationError("parity: record has " + std::to_string(rec.features.dim(1)) + " features, backbone gives " +
                          std::to_string(graph.feature_dim()));
  }
  const auto got = graph.extract_features(rec.probes);
  ParityResult r;
  r.probes = rec.probes.dim(0);
  r.tolerance = rec.tolerance;
  for (std::size_t i = 0; i < got.size(); ++i) {
    r.max_abs_diff = std::max(r.max_abs_diff, std::abs(static_cast<double>(got[i]) - rec.features[i]));
  }
  r.pass = r.max_abs_diff <= r.tolerance;
  return r;
}

}  // namespace robustnd
