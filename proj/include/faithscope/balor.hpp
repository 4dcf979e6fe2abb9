#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faithscope/patchscope.hpp"

namespace faithscope {

enum class BalorMode { shared, divided };

std::string_view to_string(BalorMode mode) noexcept;
BalorMode balor_mode_from_string(std::string_view s);

struct SamplingConfig {
  double temperature = 0.0;  // 0 selects argmax
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
};

struct BalorConfig {
  double alpha = 1.0;
  BalorMode mode = BalorMode::shared;
  SamplingConfig sampling;
  std::size_t max_new_tokens = 16;
  std::uint64_t rng_seed = 0;
  Precision precision = Precision::f32;

  void validate() const;
};

/// Target T (placeholder filled) and contrastive T* (noun restored).
struct ContrastivePair {
  std::vector<TokenId> target_tokens;
  std::vector<TokenId> contrastive_tokens;
  PatchPlan plan;
};

ContrastivePair build_contrastive(const PatchPlan& plan, const ModelBundle& bundle);

/// (1 + alpha) * l_T - alpha * l_T*, before normalization.
std::vector<double> recalibrated_logits(std::span<const double> l_target, std::span<const double> l_contrastive,
                                        double alpha);

/// softmax((1 + alpha) * l_T - alpha * l_T*).
std::vector<double> recalibrate(std::span<const double> l_target, std::span<const double> l_contrastive, double alpha);

struct LogOdds {
  double lhs = 0.0;  // log p_balor(y1) - log p_balor(y2), through the normalized distribution
  double rhs = 0.0;  // (1 + alpha) dT - alpha dT*, the affine form
};

LogOdds log_odds_decomposition(std::span<const double> l_target, std::span<const double> l_contrastive, double alpha,
                               std::size_t y1, std::size_t y2);

/// Smallest alpha at which y1's recalibrated log-odds over y2 reach zero.
/// Returns 0 when y1 already leads and nullopt when no alpha >= 0 can flip it.
std::optional<double> flip_threshold(std::span<const double> l_target, std::span<const double> l_contrastive,
                                     std::size_t y1, std::size_t y2);

/// Temperature, then top-k, then top-p over `logits`; returns the filtered
/// distribution (zeros outside the kept set). Requires temperature > 0.
std::vector<double> sampling_distribution(std::span<const double> logits, const SamplingConfig& cfg);

class Rng;

/// Argmax when temperature is 0, otherwise a draw from `sampling_distribution`.
TokenId select_token(std::span<const double> logits, const SamplingConfig& cfg, Rng& rng);

struct TopEntry {
  TokenId token = 0;
  std::string text;
  double value = 0.0;
};

struct DecodeStep {
  std::vector<TopEntry> target_logits;       // top-5 of l_T
  std::vector<TopEntry> contrastive_logits;  // top-5 of l_T* (empty for plain decoding)
  std::vector<TopEntry> probabilities;       // top-5 of the decoding distribution
  TokenId chosen = 0;
};

struct DecodeResult {
  std::vector<TokenId> generated;
  std::vector<DecodeStep> steps;
  std::vector<TokenId> target_sequence;
  std::vector<TokenId> contrastive_sequence;
  bool contrastive_frozen = false;
  std::string text;
};

/// Autoregressive BALOR decoding. Each step runs the patched target and the
/// plain contrastive sequence, recalibrates the last-position logits and
/// selects a token. Shared mode appends that token to both sequences;
/// divided mode lets the contrastive side append its own greedy token.
DecodeResult decode(const ContrastivePair& pair, const ModelBundle& bundle, const BalorConfig& cfg);

/// Plain patched decoding (no contrastive pass).
DecodeResult decode_vanilla(const PatchPlan& plan, const ModelBundle& bundle, const BalorConfig& cfg);

/// Log-probabilities of forced `continuation` tokens under the decoding
/// distribution. With `contrastive` set the BALOR distribution is used; the
/// contrastive side follows the forced tokens (shared) or its own greedy
/// tokens (divided). Temperature scales the logits when positive.
std::vector<double> forced_log_probs(const PatchPlan& plan, const ModelBundle& bundle,
                                     std::span<const TokenId> continuation, const BalorConfig& cfg,
                                     const std::vector<TokenId>* contrastive);

void to_json(nlohmann::json& j, const DecodeResult& r);

}  // namespace faithscope
