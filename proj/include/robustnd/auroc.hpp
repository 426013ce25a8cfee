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
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "robustnd/error.hpp"

namespace robustnd {

/// Area under the ROC curve for "higher score = outlier": the probability that
/// a random outlier outscores a random normal, ties credited 1/2
/// (Mann-Whitney U with midranks).
///
/// Rank sums are kept as exact integers (twice the midrank), and the division
/// is done on the smaller of U and nU' so that auroc(a, b) + auroc(b, a)
/// evaluates to exactly 1.
inline double auroc(std::span<const double> normal_scores, std::span<const double> outlier_scores) {
  if (normal_scores.empty() || outlier_scores.empty()) throw ValidationError("auroc: both score lists must be non-empty");
  const std::size_t n0 = normal_scores.size(), n1 = outlier_scores.size(), n = n0 + n1;
  struct Item {
    double score;
    bool outlier;
  };
  std::vector<Item> all;
  all.reserve(n);
  for (const double s : normal_scores) {
    if (!std::isfinite(s)) throw NumericError("auroc: non-finite score");
    all.push_back({s, false});
  }
  for (const double s : outlier_scores) {
    if (!std::isfinite(s)) throw NumericError("auroc: non-finite score");
    all.push_back({s, true});
  }
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Twice the outlier rank sum; a tie block spanning 1-based ranks [lo, hi]
  // gives each member midrank (lo + hi) / 2.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && all[j + 1].score == all[i].score) ++j;
    const std::uint64_t mid2 = (i + 1) + (j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (all[t].outlier) rank_sum2 += mid2;
    }
    i = j + 1;
  }
  const std::uint64_t pairs2 = 2ULL * n0 * n1;
  const std::uint64_t u2 = rank_sum2 - static_cast<std::uint64_t>(n1) * (n1 + 1);
  const std::uint64_t complement2 = pairs2 - u2;
  if (u2 <= complement2) return static_cast<double>(u2) / static_cast<double>(pairs2);
  return 1.0 - static_cast<double>(complement2) / static_cast<double>(pairs2);
}

inline double auroc(const std::vector<double>& normal_scores, const std::vector<double>& outlier_scores) {
  return auroc(std::span<const double>(normal_scores), std::span<const double>(outlier_scores));
}

}  // namespace robustnd
