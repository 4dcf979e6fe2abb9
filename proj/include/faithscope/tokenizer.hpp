#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "faithscope/tensor.hpp"

namespace faithscope {

enum class TokenizerMode { word, bpe };

std::string_view to_string(TokenizerMode mode) noexcept;
TokenizerMode tokenizer_mode_from_string(std::string_view s);

struct SpecialTokens {
  std::optional<TokenId> bos;
  std::optional<TokenId> eos;
  std::optional<TokenId> pad;
  std::optional<TokenId> filler;
};

/// Word mode: text is split on whitespace and each chunk is consumed by greedy
/// longest match over the vocabulary. Pieces after the first in a chunk are
/// looked up with a "##" prefix, so decoding can restore the original spacing.
///
/// BPE mode: GPT-2 style byte-level pair merging. Text is pre-split into
/// words (leading space attached), bytes are mapped to printable code points,
/// and merges are applied in rank order.
class Tokenizer {
 public:
  static constexpr std::string_view kContinuation = "##";
  static constexpr std::string_view kFiller = "<x>";

  Tokenizer() = default;

  static Tokenizer word(std::map<std::string, TokenId> vocab);
  static Tokenizer bpe(std::map<std::string, TokenId> vocab,
                       std::vector<std::pair<std::string, std::string>> merges);

  static Tokenizer from_files(TokenizerMode mode, const std::string& vocab_path,
                              const std::string& merges_path = {});
  void save(const std::string& vocab_path, const std::string& merges_path = {}) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  TokenizerMode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return id_to_token_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const SpecialTokens& specials() const noexcept { return specials_; }
  const std::map<std::string, TokenId>& vocab() const noexcept { return vocab_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }

  // Token used to fill placeholder positions in a target prompt.
  TokenId filler_id() const;

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
    return a.mode_ == b.mode_ && a.vocab_ == b.vocab_ && a.merges_ == b.merges_;
  }

 private:
  void index();
  void encode_word_chunk(std::string_view chunk, std::vector<TokenId>& out) const;
  void encode_bpe_word(std::string_view word, std::vector<TokenId>& out) const;

  TokenizerMode mode_ = TokenizerMode::word;
  std::map<std::string, TokenId> vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
  std::size_t max_token_bytes_ = 0;
  SpecialTokens specials_;
};

// Whitespace normalization applied by word-mode round trips.
std::string normalize_whitespace(std::string_view text);

}  // namespace faithscope
