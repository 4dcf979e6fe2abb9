#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faithscope/tensor.hpp"
#include "faithscope/tokenizer.hpp"

namespace faithscope {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 0;
  std::size_t max_seq = 64;
  double norm_eps = 1e-5;
  bool final_norm = true;
  TokenizerMode tokenizer_mode = TokenizerMode::word;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct BlockWeights {
  std::vector<T> ln1_scale, ln1_shift;
  Matrix<T> wq, wk, wv, wo;  // [d_model x d_model], y = W x + b
  std::vector<T> bq, bk, bv, bo;
  std::vector<T> ln2_scale, ln2_shift;
  Matrix<T> w_up;  // [d_ff x d_model]
  std::vector<T> b_up;
  Matrix<T> w_down;  // [d_model x d_ff]
  std::vector<T> b_down;

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

template <typename T>
struct Weights {
  Matrix<T> token_embedding;     // [vocab x d_model]
  Matrix<T> position_embedding;  // [max_seq x d_model]
  std::vector<BlockWeights<T>> blocks;
  std::vector<T> final_scale, final_shift;  // empty when final norm is identity
  Matrix<T> unembedding;                    // W_o, [vocab x d_model]
  std::vector<T> output_bias;               // b_o, [vocab]

  friend bool operator==(const Weights&, const Weights&) = default;
};

template <typename To, typename From>
Weights<To> weights_cast(const Weights<From>& w);

/// Immutable model: configuration, tokenizer and weights. The 32-bit weights
/// are authoritative; the 64-bit copy is their exact widening.
class ModelBundle {
 public:
  ModelBundle(ModelConfig config, Tokenizer tokenizer, Weights<float> weights);

  const ModelConfig& config() const noexcept { return config_; }
  const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }

  template <typename T>
  const Weights<T>& weights() const;

  friend bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return a.config_ == b.config_ && *a.tokenizer_ == *b.tokenizer_ && *a.w32_ == *b.w32_;
  }

 private:
  ModelConfig config_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::shared_ptr<const Weights<float>> w32_;
  std::shared_ptr<const Weights<double>> w64_;
};

template <>
inline const Weights<float>& ModelBundle::weights<float>() const {
  return *w32_;
}
template <>
inline const Weights<double>& ModelBundle::weights<double>() const {
  return *w64_;
}

void validate_weights(const ModelConfig& config, const Weights<float>& w);

/// Planted structure for controlled bias experiments.
///
/// The output bias of `biased_token` is raised by `bias_strength`, so the
/// model prefers it when nothing in the input argues otherwise. When
/// `context_tokens` is non-empty, a context channel is also planted: each
/// listed token writes a private residual direction, the last attention head
/// of every block averages that subspace over the causal prefix, and the
/// unembedding reads it back. A hidden state carrying "purple" therefore
/// raises the logit of "purple" wherever it is attended to.
struct BiasRig {
  std::string biased_token;
  double bias_strength = 5.0;
  std::vector<std::string> context_tokens;
  double context_embed_gain = 1.0;
  double context_read_gain = 2.0;
};

/// Built-in word vocabulary covering the task templates, baseline prefixes,
/// attribute lexicons and mini-corpus nouns.
Tokenizer toy_tokenizer();

/// Default desk-scale configuration sized to `toy_tokenizer()`.
ModelConfig toy_config();

ModelBundle make_toy_model(std::uint64_t seed, ModelConfig config,
                           const std::optional<BiasRig>& rig = std::nullopt,
                           std::optional<Tokenizer> tokenizer = std::nullopt);

}  // namespace faithscope
