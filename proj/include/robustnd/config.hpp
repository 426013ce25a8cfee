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

// Experiment configuration files: JSON mirroring ProtocolSpec and
// AttackConfig. Relative paths resolve against the config file's directory.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustnd/attack.hpp"
#include "robustnd/backbone.hpp"
#include "robustnd/binary_io.hpp"
#include "robustnd/error.hpp"
#include "robustnd/formats.hpp"
#include "robustnd/protocol.hpp"

namespace robustnd {

struct DatasetFiles {
  std::string name;
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // any may be empty
};

struct BackboneFiles {
  std::filesystem::path manifest;
  std::filesystem::path weights;  // empty: the manifest needs no weights
};

struct ExperimentConfig {
  ProtocolSpec spec;
  BackboneFiles backbone;
  DatasetFiles dataset;      // one_class
  DatasetFiles in_dataset;   // ood
  DatasetFiles out_dataset;  // ood
  int threads = 1;
  nlohmann::json echo;  // the config as read, after overrides
};

namespace detail {

inline void only_keys(const nlohmann::json& j, const std::vector<std::string_view>& keys, const std::string& ctx) {
  if (!j.is_object()) throw ValidationError(ctx + ": expected an object");
  reject_unknown(j, keys, ctx);
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  std::filesystem::path p = j.at(key).get<std::string>();
  return p.is_absolute() ? p : base / p;
}

inline DatasetFiles parse_dataset(const nlohmann::json& j, const std::filesystem::path& base, const std::string& ctx) {
  only_keys(j, {"name", "train_images", "train_labels", "test_images", "test_labels"}, ctx);
  DatasetFiles d;
  d.name = j.value("name", "");
  if (d.name.empty()) throw ValidationError(ctx + ".name: required");
  d.train_images = resolve(base, j, "train_images");
  d.train_labels = resolve(base, j, "train_labels");
  d.test_images = resolve(base, j, "test_images");
  d.test_labels = resolve(base, j, "test_labels");
  return d;
}

}  // namespace detail

inline AttackConfig attack_from_json(const nlohmann::json& a) {
  detail::only_keys(a, {"epsilon", "steps", "alpha", "restarts", "seed", "pixel_min", "pixel_max", "iterate_selection"},
                    "attack");
  AttackConfig cfg;
  cfg.epsilon = a.value("epsilon", cfg.epsilon);
  cfg.steps = a.value("steps", cfg.steps);
  if (a.contains("alpha") && !a.at("alpha").is_null()) cfg.alpha = a.at("alpha").get<double>();
  cfg.restarts = a.value("restarts", cfg.restarts);
  cfg.seed = a.value("seed", cfg.seed);
  cfg.pixel_min = a.value("pixel_min", cfg.pixel_min);
  cfg.pixel_max = a.value("pixel_max", cfg.pixel_max);
  const std::string sel = a.value("iterate_selection", "best");
  if (sel != "best" && sel != "last") throw ValidationError("attack.iterate_selection: expected 'best' or 'last'");
  cfg.selection = sel == "best" ? IterateSelection::best : IterateSelection::last;
  return cfg;
}

inline nlohmann::ordered_json attack_to_json(const AttackConfig& c) {
  nlohmann::ordered_json a;
  a["epsilon"] = c.epsilon;
  a["steps"] = c.steps;
  a["alpha"] = c.step_size();
  a["restarts"] = c.restarts;
  a["seed"] = c.seed;
  a["pixel_min"] = c.pixel_min;
  a["pixel_max"] = c.pixel_max;
  a["iterate_selection"] = c.selection == IterateSelection::best ? "best" : "last";
  return a;
}

/// Parses an experiment config. `base` is the directory relative paths are
/// resolved against.
inline ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base) {
  try {
    detail::only_keys(j, {"kind", "backbone", "dataset", "in_dataset", "out_dataset", "normal_classes", "scorer", "attack",
                          "caps", "seed", "threads"},
                      "config");
    ExperimentConfig cfg;
    auto& spec = cfg.spec;
    const std::string kind = j.value("kind", "one_class");
    if (kind == "one_class") {
      spec.kind = ProtocolKind::one_class;
    } else if (kind == "ood") {
      spec.kind = ProtocolKind::ood;
    } else {
      throw ValidationError("config.kind: expected 'one_class' or 'ood'");
    }
    if (!j.contains("backbone")) throw ValidationError("config.backbone: required");
    const auto& b = j.at("backbone");
    detail::only_keys(b, {"manifest", "weights"}, "config.backbone");
    cfg.backbone.manifest = detail::resolve(base, b, "manifest");
    cfg.backbone.weights = detail::resolve(base, b, "weights");
    if (cfg.backbone.manifest.empty()) throw ValidationError("config.backbone.manifest: required");

    if (spec.kind == ProtocolKind::one_class) {
      if (!j.contains("dataset")) throw ValidationError("config.dataset: required for one_class");
      cfg.dataset = detail::parse_dataset(j.at("dataset"), base, "config.dataset");
      spec.datasets = {cfg.dataset.name};
    } else {
      if (!j.contains("in_dataset") || !j.contains("out_dataset")) {
        throw ValidationError("config: ood needs in_dataset and out_dataset");
      }
      cfg.in_dataset = detail::parse_dataset(j.at("in_dataset"), base, "config.in_dataset");
      cfg.out_dataset = detail::parse_dataset(j.at("out_dataset"), base, "config.out_dataset");
      spec.datasets = {cfg.in_dataset.name, cfg.out_dataset.name};
    }
    if (j.contains("normal_classes") && !j.at("normal_classes").is_null()) {
      spec.normal_classes = j.at("normal_classes").get<std::vector<int>>();
    }
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      detail::only_keys(s, {"kind", "k", "components", "max_iters", "tol", "variance_floor", "seed"}, "config.scorer");
      const std::string sk = s.value("kind", "knn");
      if (sk != "knn" && sk != "gmm") throw ValidationError("config.scorer.kind: expected 'knn' or 'gmm'");
      spec.scorer.kind = sk == "knn" ? ScorerKind::knn : ScorerKind::gmm;
      spec.scorer.k = s.value("k", spec.scorer.k);
      spec.scorer.gmm.components = s.value("components", spec.scorer.gmm.components);
      spec.scorer.gmm.max_iters = s.value("max_iters", spec.scorer.gmm.max_iters);
      spec.scorer.gmm.tol = s.value("tol", spec.scorer.gmm.tol);
      spec.scorer.gmm.variance_floor = s.value("variance_floor", spec.scorer.gmm.variance_floor);
      spec.scorer.gmm.seed = s.value("seed", spec.scorer.gmm.seed);
    }
    if (j.contains("attack") && !j.at("attack").is_null()) spec.attack = attack_from_json(j.at("attack"));
    if (j.contains("caps")) {
      const auto& c = j.at("caps");
      detail::only_keys(c, {"train", "test"}, "config.caps");
      if (c.contains("train") && !c.at("train").is_null()) spec.caps.train = c.at("train").get<std::size_t>();
      if (c.contains("test") && !c.at("test").is_null()) spec.caps.test = c.at("test").get<std::size_t>();
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    cfg.threads = j.value("threads", 1);
    cfg.echo = j;
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
  return parse_experiment(j, path.parent_path());
}

inline Backbone<float> load_backbone(const BackboneFiles& files) {
  auto graph = Backbone<float>::from_manifest(io::read_text(files.manifest));
  if (files.weights.empty()) {
    if (!graph.ready()) throw ValidationError("backbone needs a weight blob");
    return graph;
  }
  return graph.with_weights(io::read_file(files.weights));
}

inline Split<float> load_split(const std::filesystem::path& images, const std::filesystem::path& labels) {
  Split<float> s;
  if (images.empty()) throw ValidationError("dataset split has no image file");
  s.images = formats::load_images(images);
  if (!labels.empty()) {
    s.labels = formats::load_idx_labels(labels);
    if (s.labels.size() != s.images.dim(0)) throw FormatError("label count does not match image count");
  }
  return s;
}

inline Dataset<float> load_dataset(const DatasetFiles& f, bool need_train) {
  Dataset<float> d;
  d.name = f.name;
  if (need_train) d.train = load_split(f.train_images, f.train_labels);
  d.test = load_split(f.test_images, f.test_labels);
  return d;
}

}  // namespace robustnd
