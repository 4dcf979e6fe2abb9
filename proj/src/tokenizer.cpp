#include "faithscope/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

namespace faithscope {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_letter(unsigned char c) { return std::isalpha(c) != 0 || c >= 0x80; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Splits a UTF-8 string into code points; invalid bytes pass through as-is.
std::vector<std::uint32_t> utf8_codepoints(std::string_view s) {
  std::vector<std::uint32_t> cps;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    std::uint32_t cp = c;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    if (i + len > s.size()) len = 1, cp = c;
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    cps.push_back(cp);
    i += len;
  }
  return cps;
}

// GPT-2 byte <-> printable code point table.
struct ByteTable {
  std::array<std::uint32_t, 256> to_cp{};
  std::map<std::uint32_t, unsigned char> to_byte;

  ByteTable() {
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    std::uint32_t extra = 0;
    for (int b = 0; b < 256; ++b) {
      to_cp[b] = direct[b] ? static_cast<std::uint32_t>(b) : 256 + extra++;
      to_byte[to_cp[b]] = static_cast<unsigned char>(b);
    }
  }
};

const ByteTable& byte_table() {
  static const ByteTable table;
  return table;
}

// Approximates the GPT-2 pre-tokenizer pattern on bytes:
// contractions | ?letters+ | ?digits+ | ?other+ | whitespace runs.
std::vector<std::string_view> pretokenize(std::string_view text) {
  static constexpr std::array<std::string_view, 7> kContractions = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  std::vector<std::string_view> pieces;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto uc = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    bool matched = false;
    if (text[i] == '\'') {
      for (auto c : kContractions) {
        if (text.substr(i, c.size()) == c) {
          pieces.push_back(text.substr(i, c.size()));
          i += c.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (is_space(uc(i))) {
      std::size_t j = i;
      while (j < n && is_space(uc(j))) ++j;
      if (j == n) {
        pieces.push_back(text.substr(i, j - i));
        i = j;
        continue;
      }
      // Leave one trailing space to attach to the next word.
      if (j - i > 1) pieces.push_back(text.substr(i, j - i - 1));
      i = j - 1;
      if (text[i] != ' ') {
        pieces.push_back(text.substr(i, 1));
        ++i;
        continue;
      }
    }
    const std::size_t start = i;
    if (text[i] == ' ') ++i;
    if (i >= n) {
      pieces.push_back(text.substr(start, i - start));
      break;
    }
    const unsigned char c = uc(i);
    if (is_letter(c)) {
      while (i < n && is_letter(uc(i))) ++i;
    } else if (is_digit(c)) {
      while (i < n && is_digit(uc(i))) ++i;
    } else {
      while (i < n && !is_space(uc(i)) && !is_letter(uc(i)) && !is_digit(uc(i))) ++i;
    }
    pieces.push_back(text.substr(start, i - start));
  }
  return pieces;
}

std::optional<TokenId> first_of(const std::unordered_map<std::string, TokenId>& lookup,
                                std::initializer_list<std::string_view> names) {
  for (auto name : names) {
    if (auto it = lookup.find(std::string(name)); it != lookup.end()) return it->second;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(TokenizerMode mode) noexcept {
  return mode == TokenizerMode::word ? "word" : "bpe";
}

TokenizerMode tokenizer_mode_from_string(std::string_view s) {
  if (s == "word") return TokenizerMode::word;
  if (s == "bpe") return TokenizerMode::bpe;
  throw Error(ErrorCode::InvalidArgument, "unknown tokenizer mode '" + std::string(s) + "'");
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

Tokenizer Tokenizer::word(std::map<std::string, TokenId> vocab) {
  Tokenizer t;
  t.mode_ = TokenizerMode::word;
  t.vocab_ = std::move(vocab);
  t.index();
  return t;
}

Tokenizer Tokenizer::bpe(std::map<std::string, TokenId> vocab,
                         std::vector<std::pair<std::string, std::string>> merges) {
  Tokenizer t;
  t.mode_ = TokenizerMode::bpe;
  t.vocab_ = std::move(vocab);
  t.merges_ = std::move(merges);
  t.index();
  return t;
}

void Tokenizer::index() {
  id_to_token_.assign(vocab_.size(), {});
  std::vector<bool> seen(vocab_.size(), false);
  lookup_.clear();
  max_token_bytes_ = 0;
  for (const auto& [tok, id] : vocab_) {
    FS_CHECK(id >= 0 && static_cast<std::size_t>(id) < vocab_.size(), ErrorCode::InvalidArgument,
             "token ids must be dense in [0, vocab_size); bad id for '" + tok + "'");
    FS_CHECK(!seen[id], ErrorCode::InvalidArgument, "duplicate token id " + std::to_string(id));
    seen[id] = true;
    id_to_token_[id] = tok;
    lookup_.emplace(tok, id);
    max_token_bytes_ = std::max(max_token_bytes_, tok.size());
  }
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) merge_rank_.emplace(merges_[r], r);
  specials_.bos = first_of(lookup_, {"<bos>", "<s>", "<|endoftext|>"});
  specials_.eos = first_of(lookup_, {"<eos>", "</s>", "<|endoftext|>"});
  specials_.pad = first_of(lookup_, {"<pad>"});
  specials_.filler = first_of(lookup_, {kFiller});
}

const std::string& Tokenizer::token(TokenId id) const {
  FS_CHECK(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(), ErrorCode::InvalidArgument,
           "token id out of range: " + std::to_string(id));
  return id_to_token_[id];
}

std::optional<TokenId> Tokenizer::find(std::string_view tok) const {
  if (auto it = lookup_.find(std::string(tok)); it != lookup_.end()) return it->second;
  return std::nullopt;
}

TokenId Tokenizer::filler_id() const {
  if (specials_.filler) return *specials_.filler;
  // Fall back to the literal placeholder word when no reserved token exists.
  for (std::string_view candidate : {" x", "x"}) {
    if (auto ids = encode(candidate); ids.size() == 1) return ids.front();
  }
  throw Error(ErrorCode::UnencodableText, "tokenizer has no single-token placeholder");
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  if (mode_ == TokenizerMode::word) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) encode_word_chunk(text.substr(i, j - i), out);
      i = j;
    }
  } else {
    for (auto piece : pretokenize(text)) encode_bpe_word(piece, out);
  }
  return out;
}

void Tokenizer::encode_word_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  std::size_t pos = 0;
  std::string key;
  while (pos < chunk.size()) {
    const std::string prefix = pos == 0 ? std::string() : std::string(kContinuation);
    std::optional<TokenId> best;
    std::size_t best_len = 0;
    const std::size_t max_len = std::min(chunk.size() - pos, max_token_bytes_);
    for (std::size_t len = max_len; len >= 1; --len) {
      key = prefix;
      key.append(chunk.substr(pos, len));
      if (auto it = lookup_.find(key); it != lookup_.end()) {
        if (!best || len > best_len || (len == best_len && it->second < *best)) {
          best = it->second;
          best_len = len;
        }
        break;
      }
    }
    if (!best) {
      throw Error(ErrorCode::UnencodableText,
                  "no vocabulary entry matches '" + std::string(chunk.substr(pos)) + "'");
    }
    out.push_back(*best);
    pos += best_len;
  }
}

void Tokenizer::encode_bpe_word(std::string_view word, std::vector<TokenId>& out) const {
  const auto& table = byte_table();
  std::vector<std::string> symbols;
  symbols.reserve(word.size());
  for (char c : word) {
    std::string sym;
    append_utf8(sym, table.to_cp[static_cast<unsigned char>(c)]);
    symbols.push_back(std::move(sym));
  }
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
      if (auto it = merge_rank_.find({symbols[k], symbols[k + 1]}); it != merge_rank_.end()) {
        best_rank = std::min(best_rank, it->second);
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const auto& [left, right] = merges_[best_rank];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t k = 0; k < symbols.size();) {
      if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
        merged.push_back(left + right);
        k += 2;
      } else {
        merged.push_back(symbols[k]);
        ++k;
      }
    }
    symbols = std::move(merged);
  }
  for (const auto& sym : symbols) {
    auto it = lookup_.find(sym);
    if (it == lookup_.end()) {
      throw Error(ErrorCode::UnencodableText, "bpe symbol '" + sym + "' of '" + std::string(word) +
                                                  "' is not in the vocabulary");
    }
    out.push_back(it->second);
  }
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  if (mode_ == TokenizerMode::word) {
    for (TokenId id : ids) {
      const std::string& tok = token(id);
      if (tok.starts_with(kContinuation) && tok.size() > kContinuation.size()) {
        out.append(tok, kContinuation.size());
      } else {
        if (!out.empty()) out.push_back(' ');
        out.append(tok);
      }
    }
    return out;
  }
  const auto& table = byte_table();
  for (TokenId id : ids) {
    for (std::uint32_t cp : utf8_codepoints(token(id))) {
      if (auto it = table.to_byte.find(cp); it != table.to_byte.end()) {
        out.push_back(static_cast<char>(it->second));
      } else {
        append_utf8(out, cp);
      }
    }
  }
  return out;
}

Tokenizer Tokenizer::from_files(TokenizerMode mode, const std::string& vocab_path,
                                const std::string& merges_path) {
  std::ifstream vin(vocab_path);
  FS_CHECK(vin.good(), ErrorCode::IoError, "cannot open vocab file " + vocab_path);
  nlohmann::json j;
  try {
    vin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, "vocab file " + vocab_path + ": " + e.what());
  }
  FS_CHECK(j.is_object(), ErrorCode::InvalidArgument, "vocab file must be a JSON object");
  std::map<std::string, TokenId> vocab;
  for (auto it = j.begin(); it != j.end(); ++it) vocab.emplace(it.key(), it.value().get<TokenId>());
  if (mode == TokenizerMode::word) return word(std::move(vocab));

  std::vector<std::pair<std::string, std::string>> merges;
  if (!merges_path.empty()) {
    std::ifstream min(merges_path);
    FS_CHECK(min.good(), ErrorCode::IoError, "cannot open merges file " + merges_path);
    std::string line;
    while (std::getline(min, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.starts_with("#version")) continue;
      const auto sp = line.find(' ');
      FS_CHECK(sp != std::string::npos && sp > 0 && sp + 1 < line.size(), ErrorCode::InvalidArgument,
               "malformed merges line: " + line);
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
  }
  return bpe(std::move(vocab), std::move(merges));
}

void Tokenizer::save(const std::string& vocab_path, const std::string& merges_path) const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t id = 0; id < id_to_token_.size(); ++id) j[id_to_token_[id]] = id;
  std::ofstream vout(vocab_path);
  FS_CHECK(vout.good(), ErrorCode::IoError, "cannot write " + vocab_path);
  vout << j.dump(1) << '\n';
  if (!merges_path.empty()) {
    std::ofstream mout(merges_path);
    FS_CHECK(mout.good(), ErrorCode::IoError, "cannot write " + merges_path);
    mout << "#version: 0.2\n";
    for (const auto& [a, b] : merges_) mout << a << ' ' << b << '\n';
  }
}

}  // namespace faithscope
