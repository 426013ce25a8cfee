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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustnd/error.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd {

struct BankSource {
  std::string backbone_hash;  // empty: not tied to a backbone
  std::string dataset_tag;
};

/// Feature vectors of the normal training samples, one row per sample.
template <typename T>
class FeatureBank {
 public:
  FeatureBank(Tensor<T> features, BankSource source) : features_(std::move(features)), source_(std::move(source)) {
    if (features_.rank() != 2) throw ValidationError("feature bank must be [n, d], got " + shape_str(features_.dims()));
    require_finite(features_, "feature bank");
  }

  std::size_t n() const noexcept { return features_.dim(0); }
  std::size_t d() const noexcept { return features_.dim(1); }
  std::span<const T> row(std::size_t i) const { return features_.row(i); }
  const Tensor<T>& features() const noexcept { return features_; }
  const BankSource& source() const noexcept { return source_; }

 private:
  Tensor<T> features_;
  BankSource source_;
};

struct ScoreResult {
  double score = 0.0;
  std::vector<std::size_t> neighbors;  // k-NN only, nearest first
  std::vector<double> distances;       // k-NN only, matches `neighbors`
  std::string provenance;
};

namespace detail {

template <typename T>
void check_query(std::span<const T> z, std::size_t d, const char* who) {
  if (z.size() != d) {
    throw ValidationError(std::string(who) + ": query has " + std::to_string(z.size()) + " dims, bank has " +
                          std::to_string(d));
  }
  for (const T v : z) {
    if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite query");
  }
}

template <typename T>
double euclidean(std::span<const T> a, std::span<const T> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// Neighbor contributions below this distance are dropped from the gradient.
inline constexpr double kDistanceFloor = 1e-12;

/// Gradient of sum_i ||z - b_i|| over a fixed neighbor set.
template <typename T>
Tensor<T> knn_gradient_for(const FeatureBank<T>& bank, std::span<const T> z, std::span<const std::size_t> neighbors) {
  std::vector<double> g(z.size(), 0.0);
  for (const std::size_t i : neighbors) {
    const auto b = bank.row(i);
    const double dist = detail::euclidean(z, b);
    if (dist < kDistanceFloor) continue;
    for (std::size_t j = 0; j < z.size(); ++j) {
      g[j] += (static_cast<double>(z[j]) - static_cast<double>(b[j])) / dist;
    }
  }
  return Tensor<T>(Shape{z.size()}, std::vector<T>(g.begin(), g.end()));
}

/// Sum of the k smallest Euclidean distances from a query to the bank.
/// Higher means more anomalous.
template <typename T>
class KnnScorer {
 public:
  KnnScorer(std::shared_ptr<const FeatureBank<T>> bank, std::size_t k) : bank_(std::move(bank)), k_(k) {
    if (!bank_) throw ValidationError("knn: null feature bank");
    if (k_ < 1) throw ValidationError("knn: k must be >= 1");
    if (k_ > bank_->n()) {
      throw ValidationError("knn: k = " + std::to_string(k_) + " exceeds bank size " + std::to_string(bank_->n()));
    }
  }

  std::size_t k() const noexcept { return k_; }
  const FeatureBank<T>& bank() const noexcept { return *bank_; }
  std::size_t dim() const noexcept { return bank_->d(); }
  const std::string& backbone_hash() const noexcept { return bank_->source().backbone_hash; }

  ScoreResult score(std::span<const T> z) const {
    detail::check_query(z, bank_->d(), "knn_score");
    std::vector<std::pair<double, std::size_t>> dist(bank_->n());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = {detail::euclidean(z, bank_->row(i)), i};
    // (distance, index) ordering: ties at the k-th distance keep the lowest index.
    const auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k_);
    std::nth_element(dist.begin(), kth - 1, dist.end());
    std::sort(dist.begin(), kth);
    ScoreResult r;
    r.neighbors.reserve(k_);
    r.distances.reserve(k_);
    for (auto it = dist.begin(); it != kth; ++it) {
      r.score += it->first;
      r.distances.push_back(it->first);
      r.neighbors.push_back(it->second);
    }
    r.provenance = "knn k=" + std::to_string(k_) + " bank=" + bank_->source().dataset_tag;
    return r;
  }

  /// Gradient with the neighbor set frozen at the current k nearest.
  Tensor<T> gradient(std::span<const T> z) const {
    const auto r = score(z);
    return knn_gradient_for(*bank_, z, r.neighbors);
  }

  std::pair<ScoreResult, Tensor<T>> score_and_gradient(std::span<const T> z) const {
    auto r = score(z);
    auto g = knn_gradient_for(*bank_, z, r.neighbors);
    return {std::move(r), std::move(g)};
  }

 private:
  std::shared_ptr<const FeatureBank<T>> bank_;
  std::size_t k_;
};

/// 1 (outlier) iff score > threshold.
inline int classify(double score, double threshold) noexcept { return score > threshold ? 1 : 0; }

/// Linear-interpolation quantile, q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Threshold = q-quantile of the scores of `held_out` feature rows.
template <typename Scorer, typename T>
double quantile_threshold(const Scorer& scorer, const Tensor<T>& held_out, double q = 0.95) {
  std::vector<double> s;
  s.reserve(held_out.dim(0));
  for (std::size_t i = 0; i < held_out.dim(0); ++i) s.push_back(scorer.score(held_out.row(i)).score);
  return quantile(std::move(s), q);
}

}  // namespace robustnd
