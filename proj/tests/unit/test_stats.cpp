#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "faithscope/errors.hpp"
#include "faithscope/rng.hpp"
#include "faithscope/stats.hpp"

using namespace faithscope;
using namespace faithscope::stats;

namespace {

// Closed-form isotonic solution: max over left ends of min over right ends of block means.
std::vector<double> minmax_isotonic(const std::vector<double>& y, const std::vector<double>& w) {
  const std::size_t n = y.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      double inner = INFINITY;
      for (std::size_t k = i; k < n; ++k) {
        double sw = 0, swy = 0;
        for (std::size_t t = j; t <= k; ++t) {
          sw += w[t];
          swy += w[t] * y[t];
        }
        inner = std::min(inner, swy / sw);
      }
      best = std::max(best, inner);
    }
    out[i] = best;
  }
  return out;
}

// Plain gradient ascent on the mean log-likelihood, standardized x.
std::pair<double, double> slow_logistic(const std::vector<double>& x, const std::vector<int>& y) {
  const double m = mean(x), s = sample_sd(x);
  double b0 = 0, b1 = 0;
  for (int it = 0; it < 200000; ++it) {
    double g0 = 0, g1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (x[i] - m) / s;
      const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * z)));
      g0 += y[i] - p;
      g1 += (y[i] - p) * z;
    }
    b0 += 0.5 * g0 / static_cast<double>(x.size());
    b1 += 0.5 * g1 / static_cast<double>(x.size());
    if (std::hypot(g0, g1) / static_cast<double>(x.size()) < 1e-12) break;
  }
  return {b0, b1};
}

}  // namespace

TEST(Ranks, AverageTies) {
  const std::vector<double> v{10, 20, 20, 5};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Chi2, KnownQuantile) {
  EXPECT_NEAR(chi2_sf(5.991, 2), std::exp(-5.991 / 2), 1e-12);
  EXPECT_NEAR(chi2_sf(3.841458820694124, 1), 0.05, 1e-9);
}

TEST(TInterval, SymmetricAroundMean) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto ci = t_interval(v);
  // sd = 1.5811, se = 0.7071, t(0.975, 4) = 2.7764451
  EXPECT_NEAR(ci.lo, 3 - 2.7764451051977987 * std::sqrt(0.5), 1e-9);
  EXPECT_NEAR(ci.hi, 3 + 2.7764451051977987 * std::sqrt(0.5), 1e-9);
}

TEST(Spearman, HandValue) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{5, 2, 4, 1, 3};
  EXPECT_NEAR(spearman(x, y).rho, -0.5, 1e-12);
}

TEST(Spearman, ReferenceValues) {
  const std::vector<double> a{17, 86, 60, 77, 47, 3, 70, 87, 88, 92};
  const std::vector<double> b{70, 29, 85, 61, 80, 34, 60, 31, 73, 66};
  auto r = spearman(a, b);
  EXPECT_NEAR(r.rho, -0.16363636363636364, 1e-12);
  EXPECT_NEAR(r.p, 0.6514773427962428, 1e-9);
  auto tied = a;
  tied[7] = 47;
  r = spearman(tied, b);
  EXPECT_NEAR(r.rho, 0.024316221747202587, 1e-12);
  EXPECT_NEAR(r.p, 0.9468397049085097, 1e-9);
}

TEST(Spearman, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{4, 4, 4};
  EXPECT_THROW(spearman(a, b), Error);
  EXPECT_THROW(spearman(a, c), Error);
}

TEST(Isotonic, HandCases) {
  EXPECT_EQ(isotonic_pava(std::vector<double>{3, 1, 2}).fitted, (std::vector<double>{2, 2, 2}));
  EXPECT_EQ(isotonic_pava(std::vector<double>{1, 3, 2}).fitted, (std::vector<double>{1, 2.5, 2.5}));
  const auto f = isotonic_pava(std::vector<double>{1, 2, 3});
  EXPECT_EQ(f.fitted, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(f.sse, 0.0);
}

TEST(Isotonic, MatchesClosedFormOnRandomInputs) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(9);
    std::vector<double> y(n), w(n);
    for (auto& v : y) v = std::round(4 * rng.normal()) / 2;
    for (auto& v : w) v = 0.1 + rng.uniform();
    const auto fit = isotonic_pava(y, w);
    const auto ref = minmax_isotonic(y, w);
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(fit.fitted[i], ref[i], 1e-9);
      if (i > 0) EXPECT_LE(fit.fitted[i - 1], fit.fitted[i] + 1e-12);
      sse += w[i] * (y[i] - ref[i]) * (y[i] - ref[i]);
    }
    EXPECT_NEAR(fit.sse, sse, 1e-9);
  }
}

TEST(Isotonic, ZeroWeightTakesNeighbour) {
  const std::vector<double> y{1, 100, 2};
  const std::vector<double> w{1, 0, 1};
  const auto fit = isotonic_pava(y, w);
  EXPECT_EQ(fit.fitted[0], 1.0);
  EXPECT_EQ(fit.fitted[2], 2.0);
  EXPECT_GE(fit.fitted[1], 1.0);
  EXPECT_LE(fit.fitted[1], 2.0);
}

TEST(KruskalWallis, HandValue) {
  const auto r = kruskal_wallis({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  EXPECT_NEAR(r.h, 7.2, 1e-12);
  EXPECT_EQ(r.df, 2u);
  EXPECT_NEAR(r.p, std::exp(-3.6), 1e-12);
  EXPECT_EQ(r.rank_sums, (std::vector<double>{6, 15, 24}));
}

TEST(KruskalWallis, IdenticalGroupsGiveZero) {
  const auto r = kruskal_wallis({{1, 2}, {1, 2}});
  EXPECT_NEAR(r.h, 0.0, 1e-12);
  EXPECT_NEAR(r.p, 1.0, 1e-12);
  EXPECT_TRUE(r.tie_corrected);
  EXPECT_EQ(kruskal_wallis({{5, 5}, {5, 5}}).h, 0.0);
  EXPECT_THROW(kruskal_wallis({{1, 2, 3}}), Error);
}

TEST(Auc, HandValue) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
  const std::vector<double> tied{0.5, 0.5};
  const std::vector<int> y2{0, 1};
  EXPECT_DOUBLE_EQ(roc_auc(tied, y2), 0.5);
  const std::vector<int> one{1, 1};
  EXPECT_THROW(roc_auc(tied, one), Error);
}

TEST(Logistic, MatchesSlowOptimizer) {
  Rng rng(31);
  std::vector<double> x(300);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 3 + 2 * rng.normal();
    y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-(x[i] - 3))) ? 1 : 0;
  }
  const auto fit = fit_logistic(x, y);
  const auto [b0, b1] = slow_logistic(x, y);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.coef, b1, 1e-6);
  EXPECT_NEAR(fit.intercept, b0, 1e-6);
}

TEST(Logistic, RecoversPlantedCoefficient) {
  Rng rng(7);
  const std::size_t n = 20000;
  std::vector<double> x(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-2.0 * x[i])) ? 1 : 0;
  }
  const auto fit = fit_logistic(x, y);
  // coef is per sample SD of x, which is close to 1 here
  EXPECT_NEAR(fit.coef / fit.x_sd, 2.0, 0.1);
}

TEST(Logistic, Separation) {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<int> y{0, 0, 1, 1};
  try {
    fit_logistic(x, y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeparationWarning);
  }
  EXPECT_TRUE(fit_logistic(x, y, true).separated);
}

TEST(Undersampling, SingleRunAndBalanced) {
  Rng rng(3);
  std::vector<double> x(40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = i % 2;
    x[i] = y[i] + rng.normal();
  }
  const auto one = repeated_undersampling(x, y, 1, 5);
  EXPECT_EQ(one.runs, 1u);
  EXPECT_TRUE(one.degenerate_ci);
  // balanced input keeps every point, so each run equals the full fit
  const auto full = fit_logistic(x, y);
  const auto rep = repeated_undersampling(x, y, 4, 5);
  for (double c : rep.coefs) EXPECT_NEAR(c, full.coef, 1e-9);
  EXPECT_NEAR(rep.or_mean, std::exp(rep.coef_mean), 1e-12);
  EXPECT_NEAR(rep.or_ci95.lo, std::exp(rep.coef_ci95.lo), 1e-12);
  EXPECT_FALSE(rep.degenerate_ci);
}

TEST(Undersampling, ImbalancedIsSeeded) {
  Rng rng(4);
  std::vector<double> x(120);
  std::vector<int> y(120);
  for (std::size_t i = 0; i < 120; ++i) {
    y[i] = i % 4 == 0;
    x[i] = y[i] + rng.normal();
  }
  const auto a = repeated_undersampling(x, y, 10, 8);
  const auto b = repeated_undersampling(x, y, 10, 8);
  EXPECT_EQ(a.coefs, b.coefs);
  EXPECT_GT(a.auc_mean, 0.5);
  double om = 0;
  for (double c : a.coefs) om += std::exp(c);
  EXPECT_NEAR(a.or_mean_of_runs, om / 10, 1e-12);
  const nlohmann::json j = a;
  EXPECT_EQ(j.at("runs").get<std::size_t>(), 10u);
}
