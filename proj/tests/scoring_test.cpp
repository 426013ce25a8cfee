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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

#include "robustnd/gmm.hpp"
#include "robustnd/scoring.hpp"
#include "robustnd/testing/checks.hpp"
#include "robustnd/testing/oracles.hpp"

namespace rn = robustnd;
using rn::Shape;
using rn::Tensor;

namespace {

template <typename T>
std::shared_ptr<const rn::FeatureBank<T>> bank_of(Tensor<T> rows, std::string tag = "test") {
  return std::make_shared<const rn::FeatureBank<T>>(std::move(rows), rn::BankSource{"", std::move(tag)});
}

template <typename T>
Tensor<T> random_rows(std::mt19937_64& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor<T> t({n, d});
  for (auto& v : t.data()) v = static_cast<T>(nd(rng));
  return t;
}

std::shared_ptr<const rn::FeatureBank<float>> triangle() {
  return bank_of(Tensor<float>({3, 2}, {0, 0, 1, 0, 0, 1}));
}

rn::GmmModel random_model(std::mt19937_64& rng, std::size_t m, std::size_t d) {
  std::uniform_real_distribution<double> u(0.2, 2.0);
  std::normal_distribution<double> nd;
  rn::GmmModel g;
  for (std::size_t j = 0; j < m; ++j) {
    g.weights.push_back(u(rng));
    g.means.emplace_back(d);
    g.variances.emplace_back(d);
    for (std::size_t i = 0; i < d; ++i) {
      g.means[j][i] = 2.0 * nd(rng);
      g.variances[j][i] = u(rng);
    }
  }
  const double total = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
  for (auto& w : g.weights) w /= total;
  return g;
}

}  // namespace

TEST(Knn, ExactMembershipScoresZero) {
  const rn::KnnScorer<float> s(triangle(), 1);
  const float z[] = {0, 0};
  const auto r = s.score(z);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.neighbors, std::vector<std::size_t>{0});
}

TEST(Knn, TwoNearestSumByHand) {
  const rn::KnnScorer<float> s(triangle(), 2);
  const float z[] = {0, 0};
  const auto r = s.score(z);
  EXPECT_EQ(r.score, 1.0);
  // (1,0) and (0,1) tie at distance 1; the lower index wins.
  EXPECT_EQ(r.neighbors, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(r.distances, (std::vector<double>{0.0, 1.0}));
}

TEST(Knn, GradientIsUnitVector) {
  const rn::KnnScorer<float> s(bank_of(Tensor<float>({1, 2}, {0, 0})), 1);
  const float z[] = {3, 4};
  const auto g = s.gradient(z);
  EXPECT_FLOAT_EQ(g[0], 0.6f);
  EXPECT_FLOAT_EQ(g[1], 0.8f);
}

TEST(Knn, GradientAtBankRowIsZero) {
  const rn::KnnScorer<float> s(triangle(), 1);
  const float z[] = {1, 0};
  const auto g = s.gradient(z);
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 0.0f);
}

TEST(Knn, Validation) {
  EXPECT_THROW(rn::KnnScorer<float>(triangle(), 0), rn::ValidationError);
  EXPECT_THROW(rn::KnnScorer<float>(triangle(), 4), rn::ValidationError);
  const rn::KnnScorer<float> s(triangle(), 1);
  const float wrong[] = {1, 2, 3};
  EXPECT_THROW(s.score(wrong), rn::ValidationError);
  const float nan[] = {NAN, 0};
  EXPECT_THROW(s.score(nan), rn::NumericError);
  EXPECT_THROW(bank_of(Tensor<float>({1, 2}, {INFINITY, 0})), rn::NumericError);
}

TEST(Knn, MatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) EXPECT_TRUE(rn::testing::knn_oracle_case(seed)) << seed;
}

TEST(Knn, NonNegativeAndMonotoneInK) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto bank = bank_of(random_rows<float>(rng, 30, 5));
    const auto z = random_rows<float>(rng, 1, 5);
    double prev = 0.0;
    for (std::size_t k = 1; k <= 30; ++k) {
      const double s = rn::KnnScorer<float>(bank, k).score(z.row(0)).score;
      EXPECT_GE(s, prev);
      prev = s;
    }
  }
}

TEST(Knn, ZeroOnlyForBankMembers) {
  std::mt19937_64 rng(2);
  const auto rows = random_rows<float>(rng, 20, 4);
  const rn::KnnScorer<float> s(bank_of(rows), 1);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s.score(rows.row(i)).score, 0.0);
  auto z = rows.row(3);
  std::vector<float> off(z.begin(), z.end());
  off[0] = std::nextafter(off[0], 10.0f);
  EXPECT_GT(s.score(off).score, 0.0);
}

TEST(Knn, BankPermutationInvariantBitExact) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 40, d = 6, k = 1 + rep % 7;
    auto rows = random_rows<float>(rng, n, d);
    // Duplicate rows to force ties.
    std::copy(rows.row(0).begin(), rows.row(0).end(), rows.row(1).begin());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = rn::gather_rows(rows, perm);
    const auto z = random_rows<float>(rng, 1, d);
    const auto a = rn::KnnScorer<float>(bank_of(rows), k).score(z.row(0));
    const auto b = rn::KnnScorer<float>(bank_of(shuffled), k).score(z.row(0));
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.distances, b.distances);
  }
}

TEST(Knn, TranslationInvariant) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 25, d = 8, k = 1 + rep % 5;
    auto rows = random_rows<double>(rng, n, d);
    auto z = random_rows<double>(rng, 1, d);
    const auto shift = random_rows<double>(rng, 1, d, 100.0);
    const double before = rn::KnnScorer<double>(bank_of(rows), k).score(z.row(0)).score;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) rows[i * d + j] += shift[j];
    for (std::size_t j = 0; j < d; ++j) z[j] += shift[j];
    const double after = rn::KnnScorer<double>(bank_of(rows), k).score(z.row(0)).score;
    EXPECT_NEAR(after, before, 1e-6 * before);
  }
}

TEST(Knn, ScoreEqualsSumOfListedDistances) {
  std::mt19937_64 rng(5);
  const auto bank = bank_of(random_rows<float>(rng, 50, 7));
  const rn::KnnScorer<float> s(bank, 4);
  for (int rep = 0; rep < 20; ++rep) {
    const auto z = random_rows<float>(rng, 1, 7);
    const auto r = s.score(z.row(0));
    double sum = 0.0;
    for (const auto i : r.neighbors) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double diff = static_cast<double>(z[j]) - bank->row(i)[j];
        acc += diff * diff;
      }
      sum += std::sqrt(acc);
    }
    EXPECT_NEAR(r.score, sum, 1e-9);
  }
}

TEST(Knn, GradientMatchesRestrictedNeighborSetExactly) {
  std::mt19937_64 rng(6);
  const auto bank = bank_of(random_rows<float>(rng, 50, 5));
  const rn::KnnScorer<float> s(bank, 3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto z = random_rows<float>(rng, 1, 5);
    const auto [r, g] = s.score_and_gradient(z.row(0));
    EXPECT_EQ(g, rn::knn_gradient_for(*bank, z.row(0), r.neighbors));
    EXPECT_EQ(g, s.gradient(z.row(0)));
  }
}

TEST(Knn, GradientMatchesFiniteDifferencesAwayFromBoundaries) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 5 + rep % 40, d = 1 + rep % 12, k = 1 + rep % std::min<std::size_t>(n, 10);
    const rn::KnnScorer<double> s(bank_of(random_rows<double>(rng, n, d)), k);
    const auto z = random_rows<double>(rng, 1, d);
    const auto g = s.gradient(z.row(0));
    std::function<std::pair<double, std::uint64_t>(const std::vector<double>&)> f = [&](const std::vector<double>& p) {
      const auto r = s.score(p);
      rn::Fnv1a64 h;
      for (const auto i : r.neighbors) h.update_u64(i);
      return std::pair{r.score, h.digest()};
    };
    const auto fd = rn::oracle::central_difference<double>(f, z.values(), 1e-6);
    EXPECT_LE(rn::oracle::max_relative_error(g.values(), fd), 1e-4) << rep;
  }
}

TEST(Classify, StrictThreshold) {
  EXPECT_EQ(rn::classify(5.0, 5.0), 0);
  EXPECT_EQ(rn::classify(5.0000001, 5.0), 1);
  EXPECT_EQ(rn::classify(-1.0, 5.0), 0);
}

TEST(Classify, FullQuantileThresholdFlagsNoBankSample) {
  std::mt19937_64 rng(8);
  const auto rows = random_rows<float>(rng, 60, 4);
  const rn::KnnScorer<float> s(bank_of(rows), 2);
  const double thr = rn::quantile_threshold(s, rows, 1.0);
  for (std::size_t i = 0; i < rows.dim(0); ++i) EXPECT_EQ(rn::classify(s.score(rows.row(i)).score, thr), 0);
  EXPECT_LE(rn::quantile_threshold(s, rows), thr);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(rn::quantile({3, 1, 2, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(rn::quantile({3, 1, 2, 4}, 1.0), 4.0);
  EXPECT_THROW(rn::quantile({}, 0.5), rn::ValidationError);
  EXPECT_THROW(rn::quantile({1}, 1.5), rn::ValidationError);
}

TEST(Gmm, StandardNormalAtMode) {
  rn::GmmModel g{{1.0}, {{0.0}}, {{1.0}}, 1e-6, {}};
  const double z[] = {0.0};
  EXPECT_NEAR(rn::gmm_score(g, std::span<const double>(z)).score, 0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(rn::gmm_score(g, std::span<const double>(z)).score, 0.9189, 1e-4);
}

TEST(Gmm, SingleComponentIsClosedForm) {
  std::mt19937_64 rng(9);
  const auto rows = random_rows<double>(rng, 80, 3, 2.0);
  rn::GmmFitOptions opt;
  opt.components = 1;
  const auto g = rn::gmm_fit(*bank_of(rows), opt);
  EXPECT_EQ(g.info.iterations, 0u);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 80; ++i) mean += rows[i * 3 + j];
    mean /= 80;
    for (std::size_t i = 0; i < 80; ++i) var += (rows[i * 3 + j] - mean) * (rows[i * 3 + j] - mean);
    var /= 80;
    EXPECT_NEAR(g.means[0][j], mean, 1e-12);
    EXPECT_NEAR(g.variances[0][j], var, 1e-12);
  }
}

TEST(Gmm, DegenerateBankFloorsVariances) {
  const Tensor<float> rows({10, 3}, std::vector<float>(30, 0.7f));
  rn::GmmFitOptions opt;
  opt.components = 1;
  const auto one = rn::gmm_fit(*bank_of(rows), opt);
  for (const double v : one.variances[0]) EXPECT_EQ(v, 1e-6);
  EXPECT_EQ(one.info.floored_variances, 3u);
  opt.components = 3;
  const auto three = rn::gmm_fit(*bank_of(rows), opt);
  EXPECT_NO_THROW(three.validate());
  EXPECT_EQ(three.info.floored_variances, 9u);
}

TEST(Gmm, TooManyComponentsRejected) {
  rn::GmmFitOptions opt;
  opt.components = 4;
  EXPECT_THROW(rn::gmm_fit(*bank_of(Tensor<float>({3, 1}, {1, 2, 3})), opt), rn::ValidationError);
}

TEST(Gmm, RecoversTwoClusters) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  const std::size_t per = 200, d = 3;
  Tensor<double> rows({2 * per, d});
  for (std::size_t i = 0; i < 2 * per; ++i)
    for (std::size_t j = 0; j < d; ++j) rows[i * d + j] = (i < per ? -5.0 : 5.0) + nd(rng);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    rn::GmmFitOptions opt;
    opt.components = 2;
    opt.seed = seed;
    const auto g = rn::gmm_fit(*bank_of(rows), opt);
    for (std::size_t j = 0; j < 2; ++j) {
      const double center = g.means[j][0] < 0 ? -5.0 : 5.0;
      for (const double mu : g.means[j]) EXPECT_NEAR(mu, center, 0.5);
      EXPECT_NEAR(g.weights[j], 0.5, 0.1);
    }
    EXPECT_NE(g.means[0][0] < 0, g.means[1][0] < 0);
  }
}

TEST(Gmm, LogLikelihoodNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    const auto rows = random_rows<double>(rng, 30 + seed, 1 + seed % 5);
    rn::GmmFitOptions opt;
    opt.components = 1 + seed % 5;
    opt.seed = seed;
    const auto g = rn::gmm_fit(*bank_of(rows), opt);
    const auto& h = g.info.log_likelihood_history;
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_GE(h[i], h[i - 1] - 1e-7) << seed << " iter " << i;
    EXPECT_EQ(h.back(), g.info.final_log_likelihood);
  }
}

TEST(Gmm, FitIsSeedDeterministic) {
  std::mt19937_64 rng(11);
  const auto bank = bank_of(random_rows<float>(rng, 50, 4));
  rn::GmmFitOptions opt;
  opt.components = 3;
  opt.seed = 77;
  const auto a = rn::gmm_fit(*bank, opt), b = rn::gmm_fit(*bank, opt);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Gmm, ScoreMatchesNaiveDensitySum) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const auto g = random_model(rng, 1 + rep % 5, 1 + rep % 6);
    const auto z = random_rows<double>(rng, 1, g.d(), 2.0);
    const double want = rn::oracle::gmm_nll_naive(g.weights, g.means, g.variances, z.data());
    if (!std::isfinite(want)) continue;
    EXPECT_NEAR(rn::gmm_score(g, z.data()).score, want, 1e-10 * std::max(1.0, std::abs(want))) << rep;
  }
}

TEST(Gmm, ModeScoresLowerAlongEveryRay) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 30; ++rep) {
    const auto g = random_model(rng, 1, 4);
    const auto dir = random_rows<double>(rng, 1, 4);
    double prev = -INFINITY;
    for (double t = 0.0; t < 5.0; t += 0.25) {
      std::vector<double> z(4);
      for (std::size_t i = 0; i < 4; ++i) z[i] = g.means[0][i] + t * dir[i];
      const double s = rn::gmm_score(g, std::span<const double>(z)).score;
      EXPECT_GT(s, prev);
      prev = s;
    }
  }
}

TEST(Gmm, GradientExamples) {
  rn::GmmModel g{{1.0}, {{0.5, -1.0}}, {{1.0, 1.0}}, 1e-6, {}};
  const double at_mean[] = {0.5, -1.0};
  const auto zero = rn::gmm_score_grad(g, std::span<const double>(at_mean));
  EXPECT_EQ(zero[0], 0.0);
  EXPECT_EQ(zero[1], 0.0);
  const double z[] = {2.0, 3.0};
  const auto grad = rn::gmm_score_grad(g, std::span<const double>(z));
  EXPECT_DOUBLE_EQ(grad[0], 1.5);
  EXPECT_DOUBLE_EQ(grad[1], 4.0);
}

TEST(Gmm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 100; ++rep) {
    const auto g = random_model(rng, 1 + rep % 5, 1 + rep % 8);
    const auto z = random_rows<double>(rng, 1, g.d(), 2.0);
    const auto grad = rn::gmm_score_grad(g, z.data());
    std::function<std::pair<double, std::uint64_t>(const std::vector<double>&)> f = [&](const std::vector<double>& p) {
      return std::pair{rn::gmm_score(g, std::span<const double>(p)).score, std::uint64_t{0}};
    };
    const auto fd = rn::oracle::central_difference<double>(f, z.values(), 1e-5);
    EXPECT_LE(rn::oracle::max_relative_error(grad.values(), fd), 1e-6) << rep;
  }
}

TEST(Gmm, JsonRoundTrip) {
  std::mt19937_64 rng(15);
  rn::GmmFitOptions opt;
  opt.components = 3;
  opt.seed = 5;
  const auto g = rn::gmm_fit(*bank_of(random_rows<float>(rng, 40, 3)), opt);
  const auto back = rn::gmm_from_json(nlohmann::json::parse(rn::gmm_to_json(g).dump()));
  EXPECT_EQ(back.weights, g.weights);
  EXPECT_EQ(back.means, g.means);
  EXPECT_EQ(back.variances, g.variances);
  EXPECT_EQ(back.info.iterations, g.info.iterations);
}

TEST(Gmm, InvalidModelsRejected) {
  rn::GmmModel g{{0.5, 0.4}, {{0.0}, {1.0}}, {{1.0}, {1.0}}, 1e-6, {}};
  EXPECT_THROW(g.validate(), rn::ValidationError);
  g.weights = {0.5, 0.5};
  g.variances[1][0] = 1e-9;
  EXPECT_THROW(g.validate(), rn::ValidationError);
  EXPECT_THROW(rn::GmmScorer<float>(g, ""), rn::ValidationError);
}
