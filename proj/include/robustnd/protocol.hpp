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

// Evaluation protocols. One-class: each class in turn is normal, every other
// class is an outlier, results macro-averaged. OOD: the bank comes from one
// dataset's training split and a second dataset supplies the outliers.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "robustnd/attack.hpp"
#include "robustnd/auroc.hpp"
#include "robustnd/backbone.hpp"
#include "robustnd/error.hpp"
#include "robustnd/gmm.hpp"
#include "robustnd/parallel.hpp"
#include "robustnd/report.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/version.hpp"

namespace robustnd {

enum class ProtocolKind { one_class, ood };
enum class ScorerKind { knn, gmm };

struct ScorerSpec {
  ScorerKind kind = ScorerKind::knn;
  std::size_t k = 2;
  GmmFitOptions gmm;
};

struct SampleCaps {
  std::optional<std::size_t> train;  // per bank
  std::optional<std::size_t> test;   // per evaluated side (whole test split for one-class)
};

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::one_class;
  std::vector<std::string> datasets;          // one_class: {name}; ood: {in, out}
  std::optional<std::vector<int>> normal_classes;  // one_class; default every class
  ScorerSpec scorer;
  std::optional<AttackConfig> attack;  // unset: clean evaluation only
  SampleCaps caps;
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == ProtocolKind::ood) {
      if (datasets.size() != 2) throw ValidationError("ood protocol needs an in and an out dataset");
      if (datasets[0] == datasets[1]) throw ValidationError("ood protocol: in and out datasets must differ");
    }
    if ((caps.train && *caps.train < 1) || (caps.test && *caps.test < 1)) {
      throw ValidationError("sample caps must be >= 1");
    }
    if (scorer.kind == ScorerKind::knn && scorer.k < 1) throw ValidationError("knn: k must be >= 1");
    if (attack) attack->validate();
  }
};

template <typename T>
struct Split {
  Tensor<T> images;         // [n, C, H, W]
  std::vector<int> labels;  // empty for unlabeled data
};

template <typename T>
struct Dataset {
  std::string name;
  Split<T> train;
  Split<T> test;
};

/// Optional progress sink.
using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

/// Seeded subsample of [0, n) of size min(cap, n), returned in ascending order.
inline std::vector<std::size_t> capped_indices(std::size_t n, std::optional<std::size_t> cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (!cap || *cap >= n) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < *cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(*cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
Tensor<T> features_in_chunks(const Backbone<T>& graph, const Tensor<T>& images, std::span<const std::size_t> rows) {
  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (rows.size() + kChunk - 1) / kChunk;
  std::vector<Tensor<T>> parts(chunks);
  parallel::parallel_for(chunks, [&](std::size_t c) {
    const auto begin = rows.begin() + static_cast<std::ptrdiff_t>(c * kChunk);
    const auto end = rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), (c + 1) * kChunk));
    std::vector<std::size_t> sub(begin, end);
    parts[c] = graph.extract_features(gather_rows(images, sub));
  });
  std::vector<T> all;
  for (const auto& p : parts) all.insert(all.end(), p.values().begin(), p.values().end());
  return Tensor<T>(Shape{rows.size(), graph.feature_dim()}, std::move(all));
}

/// Either scorer behind one interface for the protocol loops.
template <typename T>
class AnyScorer {
 public:
  explicit AnyScorer(KnnScorer<T> s) : impl_(std::move(s)) {}
  explicit AnyScorer(GmmScorer<T> s) : impl_(std::move(s)) {}

  ScoreResult score(std::span<const T> z) const {
    return std::visit([&](const auto& s) { return s.score(z); }, impl_);
  }
  std::pair<ScoreResult, Tensor<T>> score_and_gradient(std::span<const T> z) const {
    return std::visit([&](const auto& s) { return s.score_and_gradient(z); }, impl_);
  }
  std::string backbone_hash() const {
    return std::visit([](const auto& s) { return s.backbone_hash(); }, impl_);
  }

 private:
  std::variant<KnnScorer<T>, GmmScorer<T>> impl_;
};

template <typename T>
AnyScorer<T> build_scorer(const ScorerSpec& spec, Tensor<T> bank_features, BankSource source) {
  auto bank = std::make_shared<const FeatureBank<T>>(std::move(bank_features), std::move(source));
  if (spec.kind == ScorerKind::knn) return AnyScorer<T>(KnnScorer<T>(bank, spec.k));
  auto model = gmm_fit(*bank, spec.gmm);
  return AnyScorer<T>(GmmScorer<T>(std::move(model), bank->source().backbone_hash));
}

inline std::string scorer_label(const ScorerSpec& s) {
  if (s.kind == ScorerKind::knn) return "knn(k=" + std::to_string(s.k) + ")";
  return "gmm(m=" + std::to_string(s.gmm.components) + ")";
}

/// Clean and (optionally) attacked AUROC for one bank and one labeled test set.
/// `roles[i]` is 0 for normal, 1 for outlier.
template <typename T>
EvalEntry evaluate_setup(const ProtocolSpec& spec, const Backbone<T>& graph, const AnyScorer<T>& scorer,
                         const Tensor<T>& test_images, const Tensor<T>& test_features, const std::vector<int>& roles,
                         std::uint64_t stream_offset, std::string name) {
  const std::size_t n = roles.size();
  std::vector<double> clean(n);
  parallel::parallel_for(n, [&](std::size_t i) { clean[i] = scorer.score(test_features.row(i)).score; });
  auto split = [&](const std::vector<double>& s) {
    std::pair<std::vector<double>, std::vector<double>> out;
    for (std::size_t i = 0; i < n; ++i) (roles[i] == 0 ? out.first : out.second).push_back(s[i]);
    return out;
  };
  EvalEntry e;
  e.name = std::move(name);
  auto [cn, co] = split(clean);
  if (cn.empty() || co.empty()) throw ValidationError("setup '" + e.name + "' has no normal or no outlier test samples");
  e.normals = cn.size();
  e.outliers = co.size();
  e.clean_auroc = auroc(cn, co);
  if (spec.attack) {
    const auto outcomes = pgd_attack_batch(graph, scorer, test_images, roles, *spec.attack, stream_offset);
    std::vector<double> attacked(n);
    for (std::size_t i = 0; i < n; ++i) attacked[i] = outcomes[i].final_score;
    auto [an, ao] = split(attacked);
    e.attacked_auroc = auroc(an, ao);
  }
  return e;
}

inline EvalReport start_report(const ProtocolSpec& spec, const std::string& dataset, const std::string& hash) {
  EvalReport r;
  r.engine_version = kEngineVersion;
  r.protocol = spec.kind == ProtocolKind::one_class ? "one_class" : "ood";
  r.dataset = dataset;
  r.scorer = scorer_label(spec.scorer);
  if (spec.attack) r.iterate_selection = spec.attack->selection == IterateSelection::best ? "best" : "last";
  r.backbone_hash = hash;
  return r;
}

}  // namespace detail

/// One-class protocol over every class of `data` (or `spec.normal_classes`).
/// Banks come from the training split only.
template <typename T>
EvalReport one_class_eval(const ProtocolSpec& spec, const Backbone<T>& graph, const Dataset<T>& data,
                          const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (spec.kind != ProtocolKind::one_class) throw ValidationError("one_class_eval: protocol kind is not one_class");
  spec.validate();
  if (data.train.labels.size() != data.train.images.dim(0) || data.test.labels.size() != data.test.images.dim(0)) {
    throw ValidationError("one_class_eval: dataset needs one label per image in both splits");
  }
  std::set<int> present(data.train.labels.begin(), data.train.labels.end());
  present.insert(data.test.labels.begin(), data.test.labels.end());
  if (present.size() < 2) throw ValidationError("one_class_eval: dataset needs at least two classes");
  std::vector<int> classes = spec.normal_classes ? *spec.normal_classes : std::vector<int>(present.begin(), present.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  const auto test_rows = detail::capped_indices(data.test.images.dim(0), spec.caps.test, spec.seed);
  const Tensor<T> test_images = gather_rows(data.test.images, test_rows);
  if (progress) progress("extracting " + std::to_string(test_rows.size()) + " test features");
  const Tensor<T> test_features = detail::features_in_chunks(graph, data.test.images, test_rows);

  auto report = detail::start_report(spec, data.name, graph.hash());
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const int c = classes[ci];
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.train.labels.size(); ++i) {
      if (data.train.labels[i] == c) members.push_back(i);
    }
    if (members.empty()) throw ValidationError("one_class_eval: class " + std::to_string(c) + " has no training samples");
    const auto pick = detail::capped_indices(members.size(), spec.caps.train, spec.seed ^ (0x9e37ULL + ci));
    std::vector<std::size_t> bank_rows;
    for (const std::size_t p : pick) bank_rows.push_back(members[p]);
    auto scorer = detail::build_scorer(spec.scorer, detail::features_in_chunks(graph, data.train.images, bank_rows),
                                       BankSource{graph.hash(), data.name + ":class" + std::to_string(c)});
    std::vector<int> roles;
    for (const std::size_t r : test_rows) roles.push_back(data.test.labels[r] == c ? 0 : 1);
    if (progress) progress("class " + std::to_string(c) + ": scoring" + (spec.attack ? " and attacking" : ""));
    report.entries.push_back(detail::evaluate_setup(spec, graph, scorer, test_images, test_features, roles,
                                                    ci * test_rows.size(), "class " + std::to_string(c)));
  }
  finalize_macros(report);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Unlabeled OOD protocol: bank from `in.train`, `in.test` normal, `out.test` outlier.
template <typename T>
EvalReport ood_eval(const ProtocolSpec& spec, const Backbone<T>& graph, const Dataset<T>& in, const Dataset<T>& out,
                    const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (spec.kind != ProtocolKind::ood) throw ValidationError("ood_eval: protocol kind is not ood");
  spec.validate();
  const auto bank_rows = detail::capped_indices(in.train.images.dim(0), spec.caps.train, spec.seed);
  const auto in_rows = detail::capped_indices(in.test.images.dim(0), spec.caps.test, spec.seed + 1);
  const auto out_rows = detail::capped_indices(out.test.images.dim(0), spec.caps.test, spec.seed + 2);
  if (progress) progress("extracting features");
  auto scorer = detail::build_scorer(spec.scorer, detail::features_in_chunks(graph, in.train.images, bank_rows),
                                     BankSource{graph.hash(), in.name});
  const auto in_imgs = gather_rows(in.test.images, in_rows);
  const auto out_imgs = gather_rows(out.test.images, out_rows);
  if (Shape(in_imgs.dims().begin() + 1, in_imgs.dims().end()) != Shape(out_imgs.dims().begin() + 1, out_imgs.dims().end())) {
    throw ValidationError("ood_eval: in and out images differ in shape");
  }
  Shape dims = in_imgs.dims();
  dims[0] = in_rows.size() + out_rows.size();
  std::vector<T> joined(in_imgs.values());
  joined.insert(joined.end(), out_imgs.values().begin(), out_imgs.values().end());
  const Tensor<T> test_images(dims, std::move(joined));
  std::vector<std::size_t> all_rows(dims[0]);
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
  const auto test_features = detail::features_in_chunks(graph, test_images, all_rows);
  std::vector<int> roles(in_rows.size(), 0);
  roles.resize(dims[0], 1);
  if (progress) progress("scoring" + std::string(spec.attack ? " and attacking" : ""));
  auto report = detail::start_report(spec, in.name + "->" + out.name, graph.hash());
  report.entries.push_back(
      detail::evaluate_setup(spec, graph, scorer, test_images, test_features, roles, 0, in.name + " vs " + out.name));
  finalize_macros(report);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace robustnd
