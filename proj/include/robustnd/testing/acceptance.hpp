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


// The acceptance criteria as runnable checks. Shared by the acceptance test
// binary (full sizes) and `robustnd check` (full or reduced sizes).
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "robustnd/attack.hpp"
#include "robustnd/gmm.hpp"
#include "robustnd/parallel.hpp"
#include "robustnd/protocol.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/testing/checks.hpp"
#include "robustnd/testing/random_graphs.hpp"
#include "robustnd/testing/synthetic.hpp"

namespace robustnd::testing {

struct CriterionResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Instance counts; the defaults are the acceptance sizes.
struct AcceptanceSizes {
  std::size_t gradient_backbones = 100;
  std::size_t knn_instances = 1000;
  std::size_t auroc_instances = 500;
  std::size_t attacks = 200;
  int synthetic_steps = 100;
  std::size_t em_fits = 100;

  static AcceptanceSizes quick() { return {10, 100, 50, 20, 100, 10}; }
};

namespace detail {

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

inline CriterionResult timed(std::string name, double budget_seconds,
                             const std::function<bool(std::string&)>& body) {
  CriterionResult r;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.pass = body(r.detail);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0 && r.seconds > budget_seconds) {
    r.pass = false;
    r.detail += fmt("; over the %.0f s budget", budget_seconds);
  }
  return r;
}

}  // namespace detail

/// End-to-end dS/dx vs finite differences over random backbones, both scorers,
/// 32-bit (<= 1e-3) and 64-bit (<= 1e-6). Also requires every layer kind to
/// appear somewhere in the generated set.
inline CriterionResult gradient_suite(std::size_t backbones) {
  return detail::timed("gradient suite", 120.0, [&](std::string& out) {
    double worst32 = 0.0, worst64 = 0.0;
    std::size_t checked = 0, skipped = 0, failures = 0;
    std::set<std::string> kinds;
    for (std::uint64_t seed = 0; seed < backbones; ++seed) {
      for (auto which : {ScorerChoice::knn, ScorerChoice::gmm}) {
        const auto a = end_to_end_gradient_case<float>(seed, which, 1e-3);
        const auto b = end_to_end_gradient_case<double>(seed, which, 1e-5);
        worst32 = std::max(worst32, a.max_rel_error);
        worst64 = std::max(worst64, b.max_rel_error);
        failures += (a.max_rel_error > 1e-3) + (b.max_rel_error > 1e-6);
        checked += a.checked + b.checked;
        skipped += a.skipped + b.skipped;
        kinds.insert(a.kinds.begin(), a.kinds.end());
      }
    }
    const bool full_vocabulary = kinds.size() == 10;
    out = detail::fmt("%zu backbones x {knn,gmm}: max rel err f32 %.2e, f64 %.2e; %zu coords checked, %zu skipped at "
                      "kinks; %zu/10 layer kinds covered",
                      backbones, worst32, worst64, checked, skipped, kinds.size());
    return failures == 0 && full_vocabulary;
  });
}

inline CriterionResult knn_oracle(std::size_t instances) {
  return detail::timed("k-NN oracle", 30.0, [&](std::string& out) {
    std::size_t mismatches = 0;
    for (std::uint64_t seed = 0; seed < instances; ++seed) mismatches += !knn_oracle_case(seed);
    out = detail::fmt("%zu instances (n<=200, d<=16, k<=10), %zu mismatches vs full sort", instances, mismatches);
    return mismatches == 0;
  });
}

inline CriterionResult auroc_oracle(std::size_t instances) {
  return detail::timed("AUROC oracle", 0.0, [&](std::string& out) {
    double worst = 0.0;
    std::size_t complement_failures = 0;
    for (std::uint64_t seed = 0; seed < instances; ++seed) {
      const auto c = auroc_oracle_case(seed);
      worst = std::max(worst, c.abs_error);
      complement_failures += !c.complement_exact;
    }
    out = detail::fmt("%zu tied score-list pairs: max abs err %.1e vs pairwise, %zu complement failures", instances,
                      worst, complement_failures);
    return worst <= 1e-12 && complement_failures == 0;
  });
}

/// Random attacks grouped ten per backbone; every group is run at 1, 4 and 8
/// threads and must agree bit for bit.
inline CriterionResult attack_contract(std::size_t attacks) {
  return detail::timed("attack contract", 0.0, [&](std::string& out) {
    constexpr std::size_t kPerGraph = 10;
    std::size_t done = 0, budget = 0, box = 0, direction = 0, nondeterministic = 0;
    for (std::uint64_t g = 0; done < attacks; ++g) {
      const std::size_t count = std::min(kPerGraph, attacks - done);
      std::mt19937_64 rng(g * 31 + 7);
      const auto graph = load_generated<float>(random_backbone(g + 5000));
      auto bank = std::make_shared<const FeatureBank<float>>(
          graph.extract_features(random_images<float>(g * 3 + 1, 12, graph.input_shape())),
          BankSource{graph.hash(), "random"});
      const auto images = random_images<float>(g * 3 + 2, count, graph.input_shape());
      std::vector<int> labels(count);
      for (auto& y : labels) y = static_cast<int>(rng() % 2);
      AttackConfig cfg;
      cfg.epsilon = (1.0 + static_cast<double>(rng() % 16)) / 255.0;
      cfg.steps = 5 + static_cast<int>(rng() % 16);
      cfg.restarts = 1 + static_cast<int>(rng() % 2);
      cfg.seed = rng();

      std::vector<std::vector<AttackOutcome<float>>> runs;
      auto run_all = [&](const auto& scorer) {
        runs.clear();
        for (int threads : {1, 4, 8}) {
          parallel::ThreadScope scope(threads);
          runs.push_back(pgd_attack_batch(graph, scorer, images, labels, cfg, g * 100));
        }
      };
      if (g % 2 == 0) {
        run_all(KnnScorer<float>(bank, 1 + g % 3));
      } else {
        GmmFitOptions fo;
        fo.components = 1 + g % 3;
        fo.seed = g;
        run_all(GmmScorer<float>(gmm_fit(*bank, fo), graph.hash()));
      }
      for (std::size_t i = 0; i < count; ++i) {
        const auto& o = runs[0][i];
        const auto x = slice0(images, i);
        double linf = 0.0;
        bool in_box = true;
        for (std::size_t p = 0; p < x.size(); ++p) {
          linf = std::max(linf, std::abs(static_cast<double>(o.adversarial[p]) - static_cast<double>(x[p])));
          in_box = in_box && o.adversarial[p] >= 0.0f && o.adversarial[p] <= 1.0f;
        }
        budget += linf > cfg.epsilon + 1e-7;
        box += !in_box;
        direction += labels[i] == 0 ? o.final_score < o.initial_score : o.final_score > o.initial_score;
        for (std::size_t r = 1; r < runs.size(); ++r) {
          nondeterministic += !(runs[r][i].adversarial == o.adversarial) || runs[r][i].final_score != o.final_score;
        }
      }
      done += count;
    }
    out = detail::fmt("%zu attacks: %zu budget, %zu box, %zu direction violations; %zu differ across 1/4/8 threads",
                      done, budget, box, direction, nondeterministic);
    return budget + box + direction + nondeterministic == 0;
  });
}

/// Two-class synthetic images through the identity backbone: clean one-class
/// AUROC and PGD with epsilon at half the class gap.
inline CriterionResult synthetic_end_to_end(int steps) {
  return detail::timed("synthetic end-to-end", 300.0, [&](std::string& out) {
    SyntheticOptions opt;  // levels 0.4 / 0.6, noise 0.05
    const auto data = synthetic_dataset<float>("synthetic", 2024, opt);
    const auto graph = Backbone<float>::from_manifest(identity_manifest(opt.chw));
    ProtocolSpec spec;
    spec.datasets = {"synthetic"};
    spec.seed = 7;
    AttackConfig atk;
    atk.epsilon = 0.5 * (opt.levels[1] - opt.levels[0]);
    atk.steps = steps;
    atk.seed = 11;
    spec.attack = atk;
    bool ok = true;
    for (auto kind : {ScorerKind::knn, ScorerKind::gmm}) {
      spec.scorer.kind = kind;
      spec.scorer.gmm.components = 2;
      const auto r = one_class_eval(spec, graph, data);
      const double drop = r.macro_clean - *r.macro_attacked;
      ok = ok && r.macro_clean >= 0.99 && drop >= 0.2;
      out += detail::fmt("%s%s: clean %.3f, PGD-%d %.3f (drop %.3f)", out.empty() ? "" : "; ",
                         kind == ScorerKind::knn ? "knn k=2" : "gmm m=2", r.macro_clean, steps, *r.macro_attacked, drop);
    }
    out += detail::fmt("; eps %.3f = half the %.2f class gap", atk.epsilon, opt.levels[1] - opt.levels[0]);
    return ok;
  });
}

inline CriterionResult em_suite(std::size_t fits) {
  return detail::timed("EM suite", 0.0, [&](std::string& out) {
    double worst_drop = 0.0;
    std::size_t violations = 0, iterations = 0;
    for (std::uint64_t seed = 0; seed < fits; ++seed) {
      std::mt19937_64 rng(seed);
      const std::size_t n = 20 + rng() % 180, d = 1 + rng() % 8, m = 1 + rng() % 6;
      std::normal_distribution<double> nd;
      const std::size_t clusters = 1 + rng() % 4;
      std::vector<double> centers(clusters * d);
      for (auto& c : centers) c = 4.0 * nd(rng);
      Tensor<float> rows({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) rows[i * d + j] = static_cast<float>(centers[(i % clusters) * d + j] + nd(rng));
      }
      GmmFitOptions opt;
      opt.components = m;
      opt.seed = seed;
      const auto g = gmm_fit(FeatureBank<float>(rows, {}), opt);
      const auto& h = g.info.log_likelihood_history;
      for (std::size_t i = 1; i < h.size(); ++i) {
        worst_drop = std::max(worst_drop, h[i - 1] - h[i]);
        violations += h[i] < h[i - 1] - 1e-7;
      }
      iterations += g.info.iterations;
    }
    // Two clusters 10 apart with unit noise.
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd;
    const std::size_t per = 250, d = 2;
    Tensor<float> rows({2 * per, d});
    for (std::size_t i = 0; i < 2 * per; ++i)
      for (std::size_t j = 0; j < d; ++j) rows[i * d + j] = static_cast<float>((i < per ? -5.0 : 5.0) + nd(rng));
    GmmFitOptions opt;
    opt.components = 2;
    opt.seed = 3;
    const auto g = gmm_fit(FeatureBank<float>(rows, {}), opt);
    double mean_err = 0.0, weight_err = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      const double center = g.means[j][0] < 0 ? -5.0 : 5.0;
      for (const double mu : g.means[j]) mean_err = std::max(mean_err, std::abs(mu - center));
      weight_err = std::max(weight_err, std::abs(g.weights[j] - 0.5));
    }
    const bool split = (g.means[0][0] < 0) != (g.means[1][0] < 0);
    out = detail::fmt("%zu fits, %zu EM iterations, %zu monotonicity violations (largest drop %.1e); two clusters: "
                      "mean err %.3f (<= 0.5), weight err %.3f (<= 0.1)",
                      fits, iterations, violations, worst_drop, mean_err, weight_err);
    return violations == 0 && split && mean_err <= 0.5 && weight_err <= 0.1;
  });
}

inline std::vector<CriterionResult> run_acceptance(const AcceptanceSizes& s,
                                                   const std::function<void(const CriterionResult&)>& report = {}) {
  std::vector<CriterionResult> out;
  auto add = [&](CriterionResult r) {
    if (report) report(r);
    out.push_back(std::move(r));
  };
  add(gradient_suite(s.gradient_backbones));
  add(knn_oracle(s.knn_instances));
  add(auroc_oracle(s.auroc_instances));
  add(attack_contract(s.attacks));
  add(synthetic_end_to_end(s.synthetic_steps));
  add(em_suite(s.em_fits));
  return out;
}

inline std::string format_result(const CriterionResult& r) {
  return detail::fmt("%s  %-22s %s (%.1f s)", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
}

}  // namespace robustnd::testing
