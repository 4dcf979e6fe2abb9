#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace faithscope::stats {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Average ranks (1-based), ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);

/// Two-sided t-interval for the mean; a single value gives a zero-width interval.
Interval t_interval(std::span<const double> values, double level = 0.95);

/// P(X > x) for X ~ chi-square with `df` degrees of freedom.
double chi2_sf(double x, double df);

struct LogisticFit {
  double coef = 0.0;       // per +1 SD of x
  double intercept = 0.0;  // on the standardized scale
  double coef_se = 0.0;
  double x_mean = 0.0;
  double x_sd = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool separated = false;
};

/// Logistic regression of binary y on z-scored x by damped Newton steps,
/// stopping when the gradient norm of the mean log-likelihood drops below
/// 1e-8 or after 500 iterations. Separable data raise SeparationWarning
/// unless `allow_separation`, in which case the fit is returned flagged.
LogisticFit fit_logistic(std::span<const double> x, std::span<const int> y, bool allow_separation = false);

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly, ties count 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct LogisticReport {
  std::size_t runs = 0;
  double coef_mean = 0.0;
  Interval coef_ci95;
  double or_mean = 0.0;  // exp(coef_mean)
  Interval or_ci95;      // exp of the coefficient interval
  double or_mean_of_runs = 0.0;  // mean over runs of exp(coef)
  double auc_mean = 0.0;
  Interval auc_ci95;
  std::vector<double> coefs;
  std::vector<double> aucs;
  std::size_t separated_runs = 0;
  bool degenerate_ci = false;  // fewer than two runs
};

/// Each run keeps the minority class and a seeded sample of the majority
/// class of equal size, then fits the logistic model and its AUC.
LogisticReport repeated_undersampling(std::span<const double> x, std::span<const int> y, std::size_t runs,
                                      std::uint64_t seed);

struct SpearmanResult {
  double rho = 0.0;
  double p = 1.0;  // two-sided, t approximation with n - 2 df
};

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys);

struct IsotonicFit {
  std::vector<double> fitted;
  double sse = 0.0;
};

/// Weighted least-squares non-decreasing fit by pooling adjacent violators.
/// Empty `weights` means unit weights.
IsotonicFit isotonic_pava(std::span<const double> ys, std::span<const double> weights = {});

struct KWReport {
  double h = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  bool tie_corrected = false;
  std::size_t n = 0;
  std::vector<double> rank_sums;
};

KWReport kruskal_wallis(const std::vector<std::vector<double>>& groups);

void to_json(nlohmann::json& j, const LogisticReport& r);
void to_json(nlohmann::json& j, const SpearmanResult& r);
void to_json(nlohmann::json& j, const IsotonicFit& r);
void to_json(nlohmann::json& j, const KWReport& r);

}  // namespace faithscope::stats
