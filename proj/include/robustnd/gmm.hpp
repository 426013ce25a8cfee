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

// Diagonal-covariance Gaussian mixture scorer fitted by EM.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "robustnd/error.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/tensor.hpp"

namespace robustnd {

struct GmmFitOptions {
  std::size_t components = 5;
  std::uint64_t seed = 0;
  std::size_t max_iters = 200;
  double tol = 1e-6;             // on the mean per-sample log-likelihood
  double variance_floor = 1e-6;
};

struct GmmFitInfo {
  std::size_t iterations = 0;
  double final_log_likelihood = 0.0;          // mean per sample
  std::vector<double> log_likelihood_history;  // initial parameters first
  std::uint64_t seed = 0;
  bool converged = false;
  std::size_t floored_variances = 0;  // (component, dim) pairs held at the floor
};

struct GmmModel {
  std::vector<double> weights;                 // m, sums to 1
  std::vector<std::vector<double>> means;      // m x d
  std::vector<std::vector<double>> variances;  // m x d
  double variance_floor = 1e-6;
  GmmFitInfo info;

  std::size_t m() const noexcept { return weights.size(); }
  std::size_t d() const noexcept { return means.empty() ? 0 : means.front().size(); }

  void validate() const {
    if (weights.empty()) throw ValidationError("gmm: no components");
    if (means.size() != m() || variances.size() != m()) throw ValidationError("gmm: parameter count mismatch");
    double total = 0.0;
    for (std::size_t j = 0; j < m(); ++j) {
      if (!(weights[j] >= 0.0)) throw ValidationError("gmm: negative mixture weight");
      total += weights[j];
      if (means[j].size() != d() || variances[j].size() != d()) throw ValidationError("gmm: dimension mismatch");
      for (std::size_t i = 0; i < d(); ++i) {
        if (!std::isfinite(means[j][i])) throw NumericError("gmm: non-finite mean");
        if (!(variances[j][i] >= variance_floor)) throw ValidationError("gmm: variance below floor");
      }
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("gmm: mixture weights do not sum to 1");
  }
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log pi_j + log N(x; mu_j, diag var_j) for every component.
template <typename X>
void component_log_densities(const GmmModel& g, std::span<const X> x, std::vector<double>& out) {
  out.resize(g.m());
  for (std::size_t j = 0; j < g.m(); ++j) {
    if (g.weights[j] <= 0.0) {
      out[j] = -std::numeric_limits<double>::infinity();
      continue;
    }
    double acc = std::log(g.weights[j]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double diff = static_cast<double>(x[i]) - g.means[j][i];
      const double v = g.variances[j][i];
      acc -= 0.5 * (kLog2Pi + std::log(v) + diff * diff / v);
    }
    out[j] = acc;
  }
}

inline double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (const double e : v) acc += std::exp(e - top);
  return top + std::log(acc);
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// EM fit seeded k-means++-style from the bank rows. Stops once the mean
/// log-likelihood improves by less than `tol` or after `max_iters` rounds.
template <typename T>
GmmModel gmm_fit(const FeatureBank<T>& bank, const GmmFitOptions& opt) {
  const std::size_t n = bank.n(), d = bank.d(), m = opt.components;
  if (m < 1) throw ValidationError("gmm_fit: need at least one component");
  if (m > n) {
    throw ValidationError("gmm_fit: " + std::to_string(m) + " components exceed bank size " + std::to_string(n));
  }
  if (!(opt.variance_floor > 0.0)) throw ValidationError("gmm_fit: variance floor must be positive");
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = bank.row(i);
    for (std::size_t k = 0; k < d; ++k) x[i][k] = static_cast<double>(r[k]);
  }

  GmmModel g;
  g.variance_floor = opt.variance_floor;
  g.info.seed = opt.seed;

  std::vector<double> col_mean(d, 0.0), col_var(d, 0.0);
  for (const auto& row : x) {
    for (std::size_t k = 0; k < d; ++k) col_mean[k] += row[k];
  }
  for (auto& v : col_mean) v /= static_cast<double>(n);
  for (const auto& row : x) {
    for (std::size_t k = 0; k < d; ++k) col_var[k] += (row[k] - col_mean[k]) * (row[k] - col_mean[k]);
  }
  for (auto& v : col_var) v = std::max(v / static_cast<double>(n), opt.variance_floor);

  std::vector<double> comp(m);
  auto mean_ll = [&](std::vector<std::vector<double>>* resp) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      detail::component_log_densities(g, std::span<const double>(x[i]), comp);
      const double lse = detail::log_sum_exp(comp);
      total += lse;
      if (resp) {
        for (std::size_t j = 0; j < m; ++j) (*resp)[i][j] = std::exp(comp[j] - lse);
      }
    }
    return total / static_cast<double>(n);
  };
  auto count_floored = [&] {
    std::size_t c = 0;
    for (const auto& vj : g.variances) c += static_cast<std::size_t>(std::count(vj.begin(), vj.end(), opt.variance_floor));
    return c;
  };

  if (m == 1) {
    g.weights = {1.0};
    g.means = {col_mean};
    g.variances = {col_var};
    const double ll = mean_ll(nullptr);
    g.info.log_likelihood_history = {ll};
    g.info.final_log_likelihood = ll;
    g.info.converged = true;
    g.info.floored_variances = count_floored();
    return g;
  }

  // k-means++ seeding.
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> centers{static_cast<std::size_t>(rng() % n)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centers.size() < m) {
    const auto& c = x[centers.back()];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[i][k] - c[k]) * (x[i][k] - c[k]);
      nearest[i] = std::min(nearest[i], s);
      total += nearest[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = detail::uniform01(rng) * total;
      double run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        run += nearest[i];
        if (run > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng() % n);
    }
    centers.push_back(pick);
  }
  g.weights.assign(m, 1.0 / static_cast<double>(m));
  for (const std::size_t c : centers) {
    g.means.push_back(x[c]);
    g.variances.push_back(col_var);
  }

  std::vector<std::vector<double>> resp(n, std::vector<double>(m));
  double ll = mean_ll(&resp);
  g.info.log_likelihood_history.push_back(ll);
  for (std::size_t iter = 0; iter < opt.max_iters; ++iter) {
    std::vector<double> mass(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) mass[j] += resp[i][j];
    }
    const double total_mass = std::accumulate(mass.begin(), mass.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      g.weights[j] = mass[j] / total_mass;
      // An emptied component keeps its old location at zero weight.
      if (mass[j] <= 1e-12 * static_cast<double>(n)) continue;
      std::vector<double> mu(d, 0.0), var(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) mu[k] += resp[i][j] * x[i][k];
      }
      for (auto& v : mu) v /= mass[j];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) var[k] += resp[i][j] * (x[i][k] - mu[k]) * (x[i][k] - mu[k]);
      }
      for (auto& v : var) v = std::max(v / mass[j], opt.variance_floor);
      g.means[j] = std::move(mu);
      g.variances[j] = std::move(var);
    }
    const double next = mean_ll(&resp);
    g.info.log_likelihood_history.push_back(next);
    g.info.iterations = iter + 1;
    const double gain = next - ll;
    ll = next;
    if (gain < opt.tol) {
      g.info.converged = true;
      break;
    }
  }
  g.info.final_log_likelihood = ll;
  g.info.floored_variances = count_floored();
  return g;
}

/// S = -log sum_j pi_j N(z; mu_j, diag var_j), via log-sum-exp.
template <typename T>
ScoreResult gmm_score(const GmmModel& g, std::span<const T> z) {
  detail::check_query(z, g.d(), "gmm_score");
  std::vector<double> comp;
  detail::component_log_densities(g, z, comp);
  ScoreResult r;
  r.score = -detail::log_sum_exp(comp);
  r.provenance = "gmm m=" + std::to_string(g.m());
  return r;
}

/// dS/dz = sum_j r_j (z - mu_j) / var_j with responsibilities r_j.
template <typename T>
Tensor<T> gmm_score_grad(const GmmModel& g, std::span<const T> z) {
  detail::check_query(z, g.d(), "gmm_score_grad");
  std::vector<double> comp;
  detail::component_log_densities(g, z, comp);
  const double lse = detail::log_sum_exp(comp);
  std::vector<double> grad(z.size(), 0.0);
  for (std::size_t j = 0; j < g.m(); ++j) {
    const double r = std::exp(comp[j] - lse);
    if (r == 0.0) continue;
    for (std::size_t i = 0; i < z.size(); ++i) {
      grad[i] += r * (static_cast<double>(z[i]) - g.means[j][i]) / g.variances[j][i];
    }
  }
  return Tensor<T>(Shape{z.size()}, std::vector<T>(grad.begin(), grad.end()));
}

/// Scorer adapter with the same surface as KnnScorer.
template <typename T>
class GmmScorer {
 public:
  GmmScorer(GmmModel model, std::string backbone_hash)
      : model_(std::move(model)), backbone_hash_(std::move(backbone_hash)) {
    model_.validate();
  }

  const GmmModel& model() const noexcept { return model_; }
  std::size_t dim() const noexcept { return model_.d(); }
  const std::string& backbone_hash() const noexcept { return backbone_hash_; }
  ScoreResult score(std::span<const T> z) const { return gmm_score(model_, z); }
  Tensor<T> gradient(std::span<const T> z) const { return gmm_score_grad(model_, z); }
  std::pair<ScoreResult, Tensor<T>> score_and_gradient(std::span<const T> z) const {
    return {gmm_score(model_, z), gmm_score_grad(model_, z)};
  }

 private:
  GmmModel model_;
  std::string backbone_hash_;
};

inline nlohmann::ordered_json gmm_to_json(const GmmModel& g) {
  nlohmann::ordered_json j;
  j["format"] = "robustnd-gmm";
  j["version"] = 1;
  j["weights"] = g.weights;
  j["means"] = g.means;
  j["variances"] = g.variances;
  j["variance_floor"] = g.variance_floor;
  j["fit"] = {{"iterations", g.info.iterations},
              {"final_log_likelihood", g.info.final_log_likelihood},
              {"log_likelihood_history", g.info.log_likelihood_history},
              {"seed", g.info.seed},
              {"converged", g.info.converged},
              {"floored_variances", g.info.floored_variances}};
  return j;
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "robustnd-gmm" || j.at("version") != 1) throw FormatError("gmm model: unsupported format");
    GmmModel g;
    g.weights = j.at("weights").get<std::vector<double>>();
    g.means = j.at("means").get<std::vector<std::vector<double>>>();
    g.variances = j.at("variances").get<std::vector<std::vector<double>>>();
    g.variance_floor = j.at("variance_floor").get<double>();
    const auto& f = j.at("fit");
    g.info.iterations = f.at("iterations").get<std::size_t>();
    g.info.final_log_likelihood = f.at("final_log_likelihood").get<double>();
    g.info.log_likelihood_history = f.at("log_likelihood_history").get<std::vector<double>>();
    g.info.seed = f.at("seed").get<std::uint64_t>();
    g.info.converged = f.at("converged").get<bool>();
    g.info.floored_variances = f.at("floored_variances").get<std::size_t>();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("gmm model: ") + e.what());
  }
}

}  // namespace robustnd
