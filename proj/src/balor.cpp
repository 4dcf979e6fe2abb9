#include "faithscope/balor.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "faithscope/rng.hpp"

namespace faithscope {

std::string_view to_string(BalorMode mode) noexcept { return mode == BalorMode::shared ? "shared" : "divided"; }

BalorMode balor_mode_from_string(std::string_view s) {
  if (s == "shared" || s == "S" || s == "s") return BalorMode::shared;
  if (s == "divided" || s == "D" || s == "d") return BalorMode::divided;
  throw Error(ErrorCode::InvalidArgument, "unknown BALOR mode '" + std::string(s) + "'");
}

void BalorConfig::validate() const {
  FS_CHECK(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::InvalidArgument, "alpha must be finite and >= 0");
  FS_CHECK(sampling.temperature >= 0.0, ErrorCode::InvalidArgument, "temperature must be >= 0");
  FS_CHECK(!sampling.top_k || *sampling.top_k > 0, ErrorCode::InvalidArgument, "top_k must be positive");
  FS_CHECK(!sampling.top_p || (*sampling.top_p > 0.0 && *sampling.top_p <= 1.0), ErrorCode::InvalidArgument,
           "top_p must lie in (0, 1]");
}

ContrastivePair build_contrastive(const PatchPlan& plan, const ModelBundle& bundle) {
  const auto& src = plan.source;
  const auto& tgt = plan.target;
  FS_CHECK(src.positions.size() == tgt.placeholder_positions.size(), ErrorCode::SpanMismatch,
           "noun span and placeholder span differ in length");
  for (std::size_t p : tgt.placeholder_positions) {
    FS_CHECK(p < tgt.tokens.size(), ErrorCode::SpanMismatch, "placeholder position outside target");
  }
  ContrastivePair pair{tgt.tokens, tgt.tokens, plan};
  for (std::size_t k = 0; k < src.positions.size(); ++k) {
    pair.contrastive_tokens[tgt.placeholder_positions[k]] = src.tokens.at(src.positions[k]);
  }
  (void)bundle;
  return pair;
}

std::vector<double> recalibrated_logits(std::span<const double> l_target, std::span<const double> l_contrastive,
                                        double alpha) {
  FS_CHECK(l_target.size() == l_contrastive.size(), ErrorCode::ShapeMismatch, "logit vectors differ in length");
  std::vector<double> z(l_target.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0 + alpha) * l_target[i] - alpha * l_contrastive[i];
  return z;
}

std::vector<double> recalibrate(std::span<const double> l_target, std::span<const double> l_contrastive, double alpha) {
  return softmax(recalibrated_logits(l_target, l_contrastive, alpha));
}

LogOdds log_odds_decomposition(std::span<const double> l_target, std::span<const double> l_contrastive, double alpha,
                               std::size_t y1, std::size_t y2) {
  FS_CHECK(y1 != y2, ErrorCode::InvalidArgument, "log-odds need two distinct tokens");
  FS_CHECK(y1 < l_target.size() && y2 < l_target.size(), ErrorCode::ShapeMismatch, "token outside vocabulary");
  const auto logp = log_softmax(recalibrated_logits(l_target, l_contrastive, alpha));
  const double d_target = l_target[y1] - l_target[y2];
  const double d_contrastive = l_contrastive[y1] - l_contrastive[y2];
  return {logp[y1] - logp[y2], (1.0 + alpha) * d_target - alpha * d_contrastive};
}

std::optional<double> flip_threshold(std::span<const double> l_target, std::span<const double> l_contrastive,
                                     std::size_t y1, std::size_t y2) {
  FS_CHECK(l_target.size() == l_contrastive.size(), ErrorCode::ShapeMismatch, "logit vectors differ in length");
  FS_CHECK(y1 < l_target.size() && y2 < l_target.size(), ErrorCode::ShapeMismatch, "token outside vocabulary");
  const double d_target = l_target[y1] - l_target[y2];
  const double slope = d_target - (l_contrastive[y1] - l_contrastive[y2]);
  if (d_target > 0.0) return 0.0;
  if (slope <= 0.0) return std::nullopt;
  return -d_target / slope;
}

std::vector<double> sampling_distribution(std::span<const double> logits, const SamplingConfig& cfg) {
  FS_CHECK(cfg.temperature > 0.0, ErrorCode::InvalidArgument, "sampling needs a positive temperature");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= cfg.temperature;
  std::vector<double> p = softmax(scaled);

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::size_t keep = p.size();
  if (cfg.top_k) keep = std::min(keep, *cfg.top_k);
  auto renormalize = [&](std::size_t n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) total += p[order[r]];
    for (std::size_t r = n; r < order.size(); ++r) p[order[r]] = 0.0;
    for (std::size_t r = 0; r < n; ++r) p[order[r]] /= total;
  };
  renormalize(keep);
  if (cfg.top_p) {
    double cum = 0.0;
    std::size_t n = 0;
    while (n < keep) {
      cum += p[order[n]];
      ++n;
      if (cum >= *cfg.top_p) break;
    }
    renormalize(n);
  }
  return p;
}

TokenId select_token(std::span<const double> logits, const SamplingConfig& cfg, Rng& rng) {
  if (cfg.temperature == 0.0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const auto p = sampling_distribution(logits, cfg);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_nonzero = i;
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_nonzero);
}

namespace {

TokenId argmax(std::span<const double> v) {
  return static_cast<TokenId>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<TopEntry> top5(std::span<const double> v, const Tokenizer& tok) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t n = std::min<std::size_t>(5, v.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  std::vector<TopEntry> out;
  for (std::size_t r = 0; r < n; ++r) {
    out.push_back({static_cast<TokenId>(idx[r]), tok.token(static_cast<TokenId>(idx[r])), v[idx[r]]});
  }
  return out;
}

// Runs the target side with the patch and the contrastive side plainly, in precision T.
template <typename T>
class PairRunner {
 public:
  PairRunner(const PatchPlan& plan, const ModelBundle& bundle)
      : plan_(plan), bundle_(bundle), vectors_(extract_hidden<T>(plan.source, bundle)) {}

  std::vector<double> target_logits(std::span<const TokenId> seq) const {
    const std::vector<Hook<T>> hooks{patch_hook<T>(plan_, vectors_)};
    return widen(forward<T>(bundle_, seq, hooks).last_logits());
  }

  std::vector<double> plain_logits(std::span<const TokenId> seq) const {
    return widen(forward<T>(bundle_, seq, {}).last_logits());
  }

 private:
  static std::vector<double> widen(std::span<const T> row) { return {row.begin(), row.end()}; }

  const PatchPlan& plan_;
  const ModelBundle& bundle_;
  std::vector<std::vector<T>> vectors_;
};

template <typename T>
DecodeResult decode_impl(const PatchPlan& plan, const std::vector<TokenId>& target,
                         const std::vector<TokenId>* contrastive, const ModelBundle& bundle, const BalorConfig& cfg) {
  cfg.validate();
  const PairRunner<T> runner(plan, bundle);
  const auto& tok = bundle.tokenizer();
  const auto eos = tok.specials().eos;
  const std::size_t max_seq = bundle.config().max_seq;
  Rng rng(cfg.rng_seed);

  DecodeResult result;
  result.target_sequence = target;
  if (contrastive) result.contrastive_sequence = *contrastive;
  std::vector<double> frozen_contrastive;

  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    if (result.target_sequence.size() >= max_seq) break;
    if (contrastive && result.contrastive_sequence.size() >= max_seq) break;
    DecodeStep record;
    const auto l_target = runner.target_logits(result.target_sequence);
    record.target_logits = top5(l_target, tok);
    std::vector<double> z;
    std::vector<double> l_contrastive;
    if (contrastive) {
      l_contrastive = result.contrastive_frozen ? frozen_contrastive : runner.plain_logits(result.contrastive_sequence);
      record.contrastive_logits = top5(l_contrastive, tok);
      z = recalibrated_logits(l_target, l_contrastive, cfg.alpha);
    } else {
      z = l_target;
    }
    const TokenId next = select_token(z, cfg.sampling, rng);
    record.probabilities = top5(cfg.sampling.temperature > 0.0 ? sampling_distribution(z, cfg.sampling) : softmax(z), tok);
    record.chosen = next;
    result.steps.push_back(std::move(record));
    result.generated.push_back(next);
    result.target_sequence.push_back(next);

    if (contrastive && !result.contrastive_frozen) {
      if (cfg.mode == BalorMode::shared) {
        result.contrastive_sequence.push_back(next);
      } else {
        const TokenId own = argmax(l_contrastive);
        if (eos && own == *eos) {
          result.contrastive_frozen = true;
          frozen_contrastive = l_contrastive;
        } else {
          result.contrastive_sequence.push_back(own);
        }
      }
    }
    if (eos && next == *eos) break;
  }
  std::vector<TokenId> visible;
  for (TokenId t : result.generated) {
    if (eos && t == *eos) break;
    visible.push_back(t);
  }
  result.text = tok.decode(visible);
  return result;
}

template <typename T>
std::vector<double> forced_impl(const PatchPlan& plan, const ModelBundle& bundle, std::span<const TokenId> continuation,
                                const BalorConfig& cfg, const std::vector<TokenId>* contrastive) {
  const PairRunner<T> runner(plan, bundle);
  std::vector<TokenId> target = plan.target.tokens;
  std::vector<TokenId> contra = contrastive ? *contrastive : std::vector<TokenId>{};
  std::vector<double> out;
  for (TokenId forced : continuation) {
    const auto l_target = runner.target_logits(target);
    std::vector<double> z = l_target;
    std::vector<double> l_contrastive;
    if (contrastive) {
      l_contrastive = runner.plain_logits(contra);
      z = recalibrated_logits(l_target, l_contrastive, cfg.alpha);
    }
    if (cfg.sampling.temperature > 0.0) {
      for (double& v : z) v /= cfg.sampling.temperature;
    }
    out.push_back(log_softmax(z).at(forced));
    target.push_back(forced);
    if (contrastive) contra.push_back(cfg.mode == BalorMode::shared ? forced : argmax(l_contrastive));
  }
  return out;
}

}  // namespace

DecodeResult decode(const ContrastivePair& pair, const ModelBundle& bundle, const BalorConfig& cfg) {
  FS_CHECK(pair.target_tokens.size() == pair.contrastive_tokens.size(), ErrorCode::SpanMismatch,
           "target and contrastive prompts differ in length");
  if (cfg.precision == Precision::f64) {
    return decode_impl<double>(pair.plan, pair.target_tokens, &pair.contrastive_tokens, bundle, cfg);
  }
  return decode_impl<float>(pair.plan, pair.target_tokens, &pair.contrastive_tokens, bundle, cfg);
}

DecodeResult decode_vanilla(const PatchPlan& plan, const ModelBundle& bundle, const BalorConfig& cfg) {
  if (cfg.precision == Precision::f64) return decode_impl<double>(plan, plan.target.tokens, nullptr, bundle, cfg);
  return decode_impl<float>(plan, plan.target.tokens, nullptr, bundle, cfg);
}

std::vector<double> forced_log_probs(const PatchPlan& plan, const ModelBundle& bundle,
                                     std::span<const TokenId> continuation, const BalorConfig& cfg,
                                     const std::vector<TokenId>* contrastive) {
  if (cfg.precision == Precision::f64) return forced_impl<double>(plan, bundle, continuation, cfg, contrastive);
  return forced_impl<float>(plan, bundle, continuation, cfg, contrastive);
}

void to_json(nlohmann::json& j, const DecodeResult& r) {
  auto entries = [](const std::vector<TopEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"token", e.token}, {"text", e.text}, {"value", e.value}});
    return a;
  };
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"chosen", s.chosen},
                     {"target_logits", entries(s.target_logits)},
                     {"contrastive_logits", entries(s.contrastive_logits)},
                     {"probabilities", entries(s.probabilities)}});
  }
  j = nlohmann::json{{"generated", r.generated},
                     {"text", r.text},
                     {"contrastive_frozen", r.contrastive_frozen},
                     {"steps", std::move(steps)}};
}

}  // namespace faithscope
