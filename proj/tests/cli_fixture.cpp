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


// Writes a small on-disk fixture for the CLI smoke test: a two-class IDX
// dataset, an identity backbone, an experiment config and a parity record.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "json.hpp"
#include "robustnd.hpp"
#include "robustnd/testing/synthetic.hpp"

namespace fs = std::filesystem;
namespace rn = robustnd;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: robustnd_fixture <dir>\n");
    return 2;
  }
  const fs::path dir = argv[1];
  fs::create_directories(dir);
  rn::testing::SyntheticOptions opt;
  const auto data = rn::testing::synthetic_dataset<float>("synth", 3, opt);
  rn::formats::save_idx(data.train.images, dir / "train-images.idx");
  rn::formats::save_idx_labels(data.train.labels, dir / "train-labels.idx");
  rn::formats::save_idx(data.test.images, dir / "test-images.idx");
  rn::formats::save_idx_labels(data.test.labels, dir / "test-labels.idx");
  rn::io::write_text(dir / "manifest.json", rn::testing::identity_manifest(opt.chw));

  nlohmann::ordered_json cfg = {
      {"kind", "one_class"},
      {"backbone", {{"manifest", "manifest.json"}}},
      {"dataset",
       {{"name", "synth"},
        {"train_images", "train-images.idx"},
        {"train_labels", "train-labels.idx"},
        {"test_images", "test-images.idx"},
        {"test_labels", "test-labels.idx"}}},
      {"scorer", {{"kind", "knn"}, {"k", 2}}},
      {"attack", {{"epsilon", 0.1}, {"steps", 20}}}};
  rn::io::write_text(dir / "config.json", cfg.dump(2) + "\n");
  rn::io::write_text(dir / "bad-config.json", R"({"kind": "one_class", "backbone": {"manifest": "manifest.json"},
 "unknown_key": 1})");

  // Identity backbone: features are the flattened probe pixels.
  const auto probes = rn::gather_rows(data.test.images, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  rn::formats::save_ztb(probes, dir / "probes.ztb");
  rn::formats::save_ztb(probes.reshape({8, rn::shape_numel(opt.chw)}), dir / "probe-features.ztb");
  nlohmann::ordered_json parity = {{"format", "robustnd-parity"},
                                   {"version", 1},
                                   {"probes", "probes.ztb"},
                                   {"features", "probe-features.ztb"},
                                   {"tolerance", 1e-3}};
  rn::io::write_text(dir / "parity.json", parity.dump(2) + "\n");

  auto bad = probes;
  bad[5] = std::numeric_limits<float>::quiet_NaN();
  rn::formats::save_ztb(bad, dir / "nan-images.ztb");
  rn::io::write_text(dir / "truncated.idx", "\x00\x00\x08\x03");
  return 0;
}
