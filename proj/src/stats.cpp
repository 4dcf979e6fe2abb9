#include "faithscope/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>

#include "faithscope/errors.hpp"
#include "faithscope/rng.hpp"

namespace faithscope::stats {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double mean(std::span<const double> v) {
  FS_CHECK(!v.empty(), ErrorCode::InvalidArgument, "mean of empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Interval t_interval(std::span<const double> values, double level) {
  const double m = mean(values);
  if (values.size() < 2) return {m, m};
  const boost::math::students_t dist(static_cast<double>(values.size() - 1));
  const double t = boost::math::quantile(dist, 0.5 + 0.5 * level);
  const double half = t * sample_sd(values) / std::sqrt(static_cast<double>(values.size()));
  return {m - half, m + half};
}

double chi2_sf(double x, double df) {
  FS_CHECK(df > 0.0, ErrorCode::InvalidArgument, "chi-square df must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

namespace {

void check_binary(std::span<const int> y) {
  for (int v : y) FS_CHECK(v == 0 || v == 1, ErrorCode::InvalidArgument, "labels must be 0 or 1");
}

double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

LogisticFit fit_logistic(std::span<const double> x, std::span<const int> y, bool allow_separation) {
  FS_CHECK(x.size() == y.size(), ErrorCode::LengthMismatch, "x and y differ in length");
  check_binary(y);
  const auto positives = std::count(y.begin(), y.end(), 1);
  FS_CHECK(positives > 0 && positives < static_cast<std::ptrdiff_t>(y.size()), ErrorCode::SingleClass,
           "logistic fit needs both labels");
  LogisticFit fit;
  fit.x_mean = mean(x);
  fit.x_sd = sample_sd(x);
  FS_CHECK(fit.x_sd > 0.0, ErrorCode::SingularData, "x has zero variance");

  const std::size_t n = x.size();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - fit.x_mean) / fit.x_sd;

  double max0 = -std::numeric_limits<double>::infinity(), min0 = std::numeric_limits<double>::infinity();
  double max1 = max0, min1 = min0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i]) {
      max1 = std::max(max1, z[i]);
      min1 = std::min(min1, z[i]);
    } else {
      max0 = std::max(max0, z[i]);
      min0 = std::min(min0, z[i]);
    }
  }
  fit.separated = max0 < min1 || max1 < min0;
  FS_CHECK(!fit.separated || allow_separation, ErrorCode::SeparationWarning,
           "classes are perfectly separated by x; the maximum-likelihood coefficient is unbounded");

  const double inv_n = 1.0 / static_cast<double>(n);
  auto nll = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = a + b * z[i];
      s += log1pexp(t) - (y[i] ? t : 0.0);
    }
    return s * inv_n;
  };

  double a = 0.0, b = 0.0;
  double h00 = 0.0, h01 = 0.0, h11 = 0.0;
  double loss = nll(a, b);
  for (std::size_t iter = 0; iter < 500; ++iter) {
    double g0 = 0.0, g1 = 0.0;
    h00 = h01 = h11 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(a + b * z[i]);
      const double r = p - y[i];
      g0 += r;
      g1 += r * z[i];
      const double w = p * (1.0 - p);
      h00 += w;
      h01 += w * z[i];
      h11 += w * z[i] * z[i];
    }
    g0 *= inv_n, g1 *= inv_n, h00 *= inv_n, h01 *= inv_n, h11 *= inv_n;
    fit.iterations = iter;
    if (std::hypot(g0, g1) < 1e-8) {
      fit.converged = true;
      break;
    }
    const double det = h00 * h11 - h01 * h01;
    double d0 = g0, d1 = g1;  // gradient step when the Hessian is singular
    if (det > 1e-300) {
      d0 = (h11 * g0 - h01 * g1) / det;
      d1 = (h00 * g1 - h01 * g0) / det;
    }
    double step = 1.0;
    bool improved = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      const double na = a - step * d0, nb = b - step * d1;
      const double nl = nll(na, nb);
      if (nl <= loss) {
        a = na, b = nb, loss = nl;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  fit.intercept = a;
  fit.coef = b;
  const double det = h00 * h11 - h01 * h01;
  fit.coef_se = det > 0.0 ? std::sqrt(h00 / det * inv_n) : std::numeric_limits<double>::infinity();
  return fit;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  FS_CHECK(scores.size() == labels.size(), ErrorCode::LengthMismatch, "scores and labels differ in length");
  check_binary(labels);
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i]) {
      rank_sum += ranks[i];
      ++pos;
    }
  }
  const std::size_t neg = labels.size() - pos;
  FS_CHECK(pos > 0 && neg > 0, ErrorCode::SingleClass, "AUC needs both classes");
  const double np = static_cast<double>(pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(neg));
}

LogisticReport repeated_undersampling(std::span<const double> x, std::span<const int> y, std::size_t runs,
                                      std::uint64_t seed) {
  FS_CHECK(x.size() == y.size(), ErrorCode::LengthMismatch, "x and y differ in length");
  FS_CHECK(runs > 0, ErrorCode::InvalidArgument, "runs must be positive");
  check_binary(y);
  std::vector<std::size_t> ones, zeros;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? ones : zeros).push_back(i);
  FS_CHECK(!ones.empty() && !zeros.empty(), ErrorCode::SingleClass, "undersampling needs both labels");
  const bool ones_minor = ones.size() <= zeros.size();
  const auto& minority = ones_minor ? ones : zeros;
  const auto& majority = ones_minor ? zeros : ones;

  LogisticReport rep;
  rep.runs = runs;
  for (std::size_t r = 0; r < runs; ++r) {
    std::vector<std::size_t> pick = majority;
    Rng rng(derive_seed(seed, "undersample", r));
    for (std::size_t i = 0; i < minority.size(); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pick.size() - i));
      std::swap(pick[i], pick[j]);
    }
    pick.resize(minority.size());
    pick.insert(pick.end(), minority.begin(), minority.end());
    std::sort(pick.begin(), pick.end());
    std::vector<double> xs;
    std::vector<int> ys;
    for (std::size_t i : pick) {
      xs.push_back(x[i]);
      ys.push_back(y[i]);
    }
    const auto fit = fit_logistic(xs, ys, true);
    if (fit.separated || !fit.converged) ++rep.separated_runs;
    std::vector<double> score(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) score[i] = fit.coef * (xs[i] - fit.x_mean);
    rep.coefs.push_back(fit.coef);
    rep.aucs.push_back(roc_auc(score, ys));
  }
  rep.coef_mean = mean(rep.coefs);
  rep.coef_ci95 = t_interval(rep.coefs);
  rep.or_mean = std::exp(rep.coef_mean);
  rep.or_ci95 = {std::exp(rep.coef_ci95.lo), std::exp(rep.coef_ci95.hi)};
  double or_sum = 0.0;
  for (double c : rep.coefs) or_sum += std::exp(c);
  rep.or_mean_of_runs = or_sum / static_cast<double>(runs);
  rep.auc_mean = mean(rep.aucs);
  rep.auc_ci95 = t_interval(rep.aucs);
  rep.degenerate_ci = runs < 2;
  return rep;
}

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys) {
  FS_CHECK(xs.size() == ys.size(), ErrorCode::LengthMismatch, "xs and ys differ in length");
  FS_CHECK(xs.size() >= 3, ErrorCode::InvalidArgument, "spearman needs at least 3 pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  FS_CHECK(sxx > 0.0 && syy > 0.0, ErrorCode::ConstantInput, "spearman input is constant");
  SpearmanResult res;
  res.rho = sxy / std::sqrt(sxx * syy);
  const double df = static_cast<double>(xs.size() - 2);
  if (std::abs(res.rho) >= 1.0) {
    res.p = 0.0;
  } else if (df > 0) {
    const double t = res.rho * std::sqrt(df / (1.0 - res.rho * res.rho));
    const boost::math::students_t dist(df);
    res.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return res;
}

IsotonicFit isotonic_pava(std::span<const double> ys, std::span<const double> weights) {
  FS_CHECK(weights.empty() || weights.size() == ys.size(), ErrorCode::LengthMismatch,
           "weights and values differ in length");
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  struct Block {
    double sum_wy;
    double sum_w;
    std::vector<std::size_t> members;
    double value() const { return sum_wy / sum_w; }
  };
  // Zero-weight points do not constrain the fit; they take the value of the
  // nearest positive-weight block to their left (or right at the start).
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double w = weight(i);
    FS_CHECK(w >= 0.0, ErrorCode::InvalidArgument, "weights must be non-negative");
    if (w == 0.0) continue;
    blocks.push_back({w * ys[i], w, {i}});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value() > blocks.back().value()) {
      Block last = std::move(blocks.back());
      blocks.pop_back();
      Block& prev = blocks.back();
      prev.sum_wy += last.sum_wy;
      prev.sum_w += last.sum_w;
      prev.members.insert(prev.members.end(), last.members.begin(), last.members.end());
    }
  }
  IsotonicFit fit;
  fit.fitted.assign(ys.size(), 0.0);
  if (blocks.empty()) {
    fit.fitted.assign(ys.begin(), ys.end());
    return fit;
  }
  std::vector<char> set(ys.size(), 0);
  for (const auto& b : blocks) {
    for (std::size_t i : b.members) fit.fitted[i] = b.value(), set[i] = 1;
  }
  std::optional<double> carry;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (set[i]) carry = fit.fitted[i];
    else if (carry) fit.fitted[i] = *carry;
  }
  for (std::size_t i = 0; i < ys.size() && !set[i]; ++i) fit.fitted[i] = blocks.front().value();
  for (std::size_t i = 0; i < ys.size(); ++i) {
    fit.sse += weight(i) * (ys[i] - fit.fitted[i]) * (ys[i] - fit.fitted[i]);
  }
  return fit;
}

KWReport kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  FS_CHECK(groups.size() >= 2, ErrorCode::TooFewGroups, "kruskal-wallis needs at least two groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    FS_CHECK(!g.empty(), ErrorCode::InvalidArgument, "kruskal-wallis groups must be nonempty");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const auto ranks = average_ranks(pooled);
  const double n = static_cast<double>(pooled.size());
  KWReport rep;
  rep.n = pooled.size();
  rep.df = groups.size() - 1;
  double h = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranks[offset + i];
    offset += g.size();
    rep.rank_sums.push_back(r);
    h += r * r / static_cast<double>(g.size());
  }
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double divisor = 1.0 - ties / (n * n * n - n);
  if (divisor <= 0.0) {
    rep.h = 0.0;
  } else {
    rep.h = std::max(0.0, h / divisor);
    rep.tie_corrected = ties > 0.0;
  }
  rep.p = chi2_sf(rep.h, static_cast<double>(rep.df));
  return rep;
}

namespace {

nlohmann::json interval(const Interval& i) { return nlohmann::json::array({i.lo, i.hi}); }

}  // namespace

void to_json(nlohmann::json& j, const LogisticReport& r) {
  j = nlohmann::json{{"runs", r.runs},
                     {"logit_coeff", {{"mean", r.coef_mean}, {"ci95", interval(r.coef_ci95)}}},
                     {"odds_ratio", {{"mean", r.or_mean}, {"ci95", interval(r.or_ci95)},
                                     {"mean_of_runs", r.or_mean_of_runs}}},
                     {"roc_auc", {{"mean", r.auc_mean}, {"ci95", interval(r.auc_ci95)}}},
                     {"per_run", {{"coef", r.coefs}, {"auc", r.aucs}}},
                     {"separated_runs", r.separated_runs},
                     {"degenerate_ci", r.degenerate_ci}};
}

void to_json(nlohmann::json& j, const SpearmanResult& r) { j = nlohmann::json{{"rho", r.rho}, {"p", r.p}}; }

void to_json(nlohmann::json& j, const IsotonicFit& r) { j = nlohmann::json{{"fitted", r.fitted}, {"sse", r.sse}}; }

void to_json(nlohmann::json& j, const KWReport& r) {
  j = nlohmann::json{{"h", r.h},   {"df", r.df},       {"p", r.p}, {"tie_corrected", r.tie_corrected},
                     {"n", r.n},   {"rank_sums", r.rank_sums}};
}

}  // namespace faithscope::stats
