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

// L-infinity PGD on the anomaly score, differentiated end to end through the
// backbone. Normal samples (y = 0) are pushed toward higher scores, outliers
// (y = 1) toward lower ones.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustnd/backbone.hpp"
#include "robustnd/error.hpp"
#include "robustnd/parallel.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd {

/// Anything the attack can differentiate: a score over feature vectors, its
/// gradient, and the backbone hash the scorer was built against (empty when
/// unbound).
template <typename S, typename T>
concept AnomalyScorer = requires(const S& s, std::span<const T> z) {
  { s.score(z) } -> std::same_as<ScoreResult>;
  { s.score_and_gradient(z) } -> std::same_as<std::pair<ScoreResult, Tensor<T>>>;
  { s.backbone_hash() } -> std::convertible_to<std::string>;
};

enum class IterateSelection { best, last };

struct AttackConfig {
  double epsilon = 4.0 / 255.0;
  int steps = 100;
  std::optional<double> alpha;  // unset: 2.5 * epsilon / steps
  int restarts = 1;
  std::uint64_t seed = 0;
  double pixel_min = 0.0;
  double pixel_max = 1.0;
  IterateSelection selection = IterateSelection::best;
  bool record_trajectory = false;

  double step_size() const { return alpha ? *alpha : 2.5 * epsilon / static_cast<double>(steps); }

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("attack: epsilon must be in [0, 1)");
    if (steps < 1) throw ValidationError("attack: steps must be >= 1");
    if (restarts < 1) throw ValidationError("attack: restarts must be >= 1");
    if (!(pixel_min < pixel_max)) throw ValidationError("attack: empty pixel bounds");
    const double a = step_size();
    if (!(a >= 0.0) || (epsilon > 0.0 && a == 0.0)) throw ValidationError("attack: alpha must be positive");
  }
};

template <typename T>
struct AttackOutcome {
  Tensor<T> adversarial;
  double initial_score = 0.0;  // clean image
  double final_score = 0.0;    // returned image
  std::vector<double> trajectory;  // winning restart, x*_0 .. x*_N, when recorded
  double linf = 0.0;
  int restart = 0;  // winning restart
  int step = -1;    // winning iterate; -1 means the clean image
};

/// +1 for normal samples (raise the score), -1 for outliers (lower it).
inline int beta(int y) {
  if (y == 0) return 1;
  if (y == 1) return -1;
  throw ValidationError("beta: label must be 0 or 1, got " + std::to_string(y));
}

/// Clamp into the epsilon-ball around `x_orig`, then into the pixel box.
template <typename T>
Tensor<T> project_linf(const Tensor<T>& x_adv, const Tensor<T>& x_orig, double epsilon, double lo = 0.0,
                       double hi = 1.0) {
  if (x_adv.dims() != x_orig.dims()) {
    throw ValidationError("project_linf: shape mismatch " + shape_str(x_adv.dims()) + " vs " + shape_str(x_orig.dims()));
  }
  Tensor<T> out(x_adv.dims());
  const T eps = static_cast<T>(epsilon), box_lo = static_cast<T>(lo), box_hi = static_cast<T>(hi);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = std::clamp(x_adv[i], static_cast<T>(x_orig[i] - eps), static_cast<T>(x_orig[i] + eps));
    out[i] = std::clamp(v, box_lo, box_hi);
  }
  return out;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Seed of the random stream for one (sample, restart) pair.
inline std::uint64_t attack_stream_seed(std::uint64_t master, std::uint64_t sample, std::uint64_t restart) {
  return detail::splitmix64(detail::splitmix64(detail::splitmix64(master) ^ sample) ^ (restart + 0x5bd1e995ULL));
}

/// PGD with a uniform random start in the epsilon-ball. `sample_index`
/// selects the random stream so batched runs are reproducible regardless of
/// scheduling.
template <typename T, typename Scorer>
  requires AnomalyScorer<Scorer, T>
AttackOutcome<T> pgd_attack(const Backbone<T>& graph, const Scorer& scorer, const Tensor<T>& image, int y,
                            const AttackConfig& cfg, std::uint64_t sample_index = 0) {
  cfg.validate();
  const int direction = beta(y);
  const Tensor<T> x = image.reshape(graph.input_shape());
  for (const T v : x.data()) {
    if (!(v >= static_cast<T>(cfg.pixel_min) && v <= static_cast<T>(cfg.pixel_max))) {
      throw ValidationError("attack: image pixel outside the pixel bounds");
    }
  }
  const std::string bound = scorer.backbone_hash();
  if (!bound.empty() && bound != graph.hash()) {
    throw ValidationError("attack: scorer was built on backbone " + bound + " but the graph is " + graph.hash());
  }
  const T alpha = static_cast<T>(cfg.step_size());
  auto more_adversarial = [direction](double a, double b) { return direction > 0 ? a > b : a < b; };
  auto score_of = [&](const Tensor<T>& img) {
    const auto f = graph.forward(img);
    return scorer.score(f.features.data()).score;
  };

  AttackOutcome<T> best;
  best.initial_score = score_of(x);
  bool have_best = cfg.selection == IterateSelection::best;
  if (have_best) {
    best.adversarial = x;
    best.final_score = best.initial_score;
  }

  for (int r = 0; r < cfg.restarts; ++r) {
    std::mt19937_64 rng(attack_stream_seed(cfg.seed, sample_index, static_cast<std::uint64_t>(r)));
    Tensor<T> cur(x.dims());
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      cur[i] = static_cast<T>(static_cast<double>(x[i]) + (2.0 * u - 1.0) * cfg.epsilon);
    }
    cur = project_linf(cur, x, cfg.epsilon, cfg.pixel_min, cfg.pixel_max);

    std::vector<double> trajectory;
    Tensor<T> run_best;
    double run_score = 0.0;
    int run_step = -1;
    auto offer = [&](const Tensor<T>& cand, double s, int step) {
      if (cfg.record_trajectory) trajectory.push_back(s);
      if (cfg.selection == IterateSelection::last || run_step < 0 || more_adversarial(s, run_score)) {
        run_best = cand;
        run_score = s;
        run_step = step;
      }
    };

    for (int t = 0; t < cfg.steps; ++t) {
      const auto f = graph.forward(cur);
      auto [res, feature_grad] = scorer.score_and_gradient(f.features.data());
      if (!std::isfinite(res.score) || !feature_grad.all_finite()) {
        throw NumericError("attack: non-finite score gradient at step " + std::to_string(t));
      }
      offer(cur, res.score, t);
      Tensor<T> g;
      try {
        g = graph.input_gradient(f, feature_grad);
      } catch (const NumericError&) {
        throw NumericError("attack: non-finite input gradient at step " + std::to_string(t));
      }
      Tensor<T> next(cur.dims());
      for (std::size_t i = 0; i < next.size(); ++i) {
        const int sign = (g[i] > T{0}) - (g[i] < T{0});
        next[i] = cur[i] + alpha * static_cast<T>(direction * sign);
      }
      cur = project_linf(next, x, cfg.epsilon, cfg.pixel_min, cfg.pixel_max);
    }
    offer(cur, score_of(cur), cfg.steps);

    if (!have_best || more_adversarial(run_score, best.final_score)) {
      have_best = true;
      best.adversarial = std::move(run_best);
      best.final_score = run_score;
      best.restart = r;
      best.step = run_step;
      best.trajectory = std::move(trajectory);
    } else if (r == 0 && cfg.record_trajectory) {
      best.trajectory = std::move(trajectory);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    best.linf = std::max(best.linf, std::abs(static_cast<double>(best.adversarial[i]) - static_cast<double>(x[i])));
  }
  return best;
}

/// Attacks every image of a batch concurrently, sample i using label
/// `labels[i]` and random stream `first_index + i`.
template <typename T, typename Scorer>
  requires AnomalyScorer<Scorer, T>
std::vector<AttackOutcome<T>> pgd_attack_batch(const Backbone<T>& graph, const Scorer& scorer, const Tensor<T>& images,
                                               std::span<const int> labels, const AttackConfig& cfg,
                                               std::uint64_t first_index = 0) {
  if (images.dim(0) != labels.size()) throw ValidationError("attack: label count does not match batch size");
  std::vector<AttackOutcome<T>> out(labels.size());
  parallel::parallel_for(labels.size(), [&](std::size_t i) {
    out[i] = pgd_attack(graph, scorer, slice0(images, i), labels[i], cfg, first_index + i);
  });
  return out;
}

}  // namespace robustnd
