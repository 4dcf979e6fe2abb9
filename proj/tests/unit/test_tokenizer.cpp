#include <gtest/gtest.h>

#include "faithscope/errors.hpp"
#include "faithscope/model.hpp"
#include "faithscope/tokenizer.hpp"
#include "unit/test_helpers.hpp"

using namespace faithscope;

namespace {

// "Ġ" is the byte-level image of a space.
const std::string kSpace = "\xC4\xA0";

Tokenizer tiny_bpe() {
  std::map<std::string, TokenId> vocab;
  TokenId id = 0;
  for (const std::string& t : std::vector<std::string>{"b", "r", "o", "w", "n", kSpace, "br", "bro", kSpace + "b", "<|endoftext|>"}) vocab[t] = id++;
  return Tokenizer::bpe(vocab, {{"b", "r"}, {"br", "o"}, {kSpace, "b"}});
}

}  // namespace

TEST(Tokenizer, BpeMergesFollowRankOrder) {
  const auto tok = tiny_bpe();
  // "brown": b r o w n -> (b,r) -> br o w n -> (br,o) -> bro w n
  const auto ids = tok.encode("brown");
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(tok.token(ids[0]), "bro");
  EXPECT_EQ(tok.token(ids[1]), "w");
  EXPECT_EQ(tok.token(ids[2]), "n");
  EXPECT_EQ(tok.decode(ids), "brown");
}

TEST(Tokenizer, BpeLeadingSpaceAttachesToWord) {
  const auto tok = tiny_bpe();
  // " brown": Ġ b r o w n; rank 0 (b,r) applies before rank 2 (Ġ,b).
  const auto ids = tok.encode("bro brown");
  std::vector<std::string> pieces;
  for (auto id : ids) pieces.push_back(tok.token(id));
  EXPECT_EQ(pieces, (std::vector<std::string>{"bro", kSpace, "bro", "w", "n"}));
  EXPECT_EQ(tok.decode(ids), "bro brown");
}

TEST(Tokenizer, BpeSpecialsDetectedByName) {
  const auto tok = tiny_bpe();
  ASSERT_TRUE(tok.specials().eos.has_value());
  EXPECT_EQ(tok.token(*tok.specials().eos), "<|endoftext|>");
}

TEST(Tokenizer, BpeUnknownByteIsUnencodable) {
  const auto tok = tiny_bpe();
  try {
    tok.encode("zebra");
    FAIL() << "expected UnencodableText";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnencodableText);
  }
}

TEST(Tokenizer, WordModeGreedyWithContinuations) {
  const auto tok = toy_tokenizer();
  const auto ids = tok.encode("The color of broccoli is green or purple?");
  std::vector<std::string> pieces;
  for (auto id : ids) pieces.push_back(tok.token(id));
  EXPECT_EQ(pieces, (std::vector<std::string>{"The", "color", "of", "broccoli", "is", "green", "or", "purple", "##?"}));
  EXPECT_EQ(tok.decode(ids), "The color of broccoli is green or purple?");
}

TEST(Tokenizer, WordModeQuotedPronouns) {
  const auto tok = toy_tokenizer();
  const std::string text = "Replace ? with \"She\" or \"He\". ? is a compassionate person.";
  const auto ids = tok.encode(text);
  EXPECT_EQ(tok.decode(ids), text);
}

TEST(Tokenizer, ToyFillerIsReserved) {
  const auto tok = toy_tokenizer();
  EXPECT_EQ(tok.token(tok.filler_id()), "<x>");
  EXPECT_TRUE(tok.specials().eos.has_value());
  EXPECT_TRUE(tok.specials().bos.has_value());
}

TEST(Tokenizer, WordModeUnknownWordThrows) {
  const auto tok = toy_tokenizer();
  EXPECT_THROW(tok.encode("quantum"), Error);
}

TEST(Tokenizer, FileRoundTrip) {
  const auto dir = testing_support::temp_dir("tokenizer_roundtrip");
  const auto bpe = tiny_bpe();
  bpe.save((dir / "vocab.json").string(), (dir / "merges.txt").string());
  const auto back = Tokenizer::from_files(TokenizerMode::bpe, (dir / "vocab.json").string(),
                                          (dir / "merges.txt").string());
  EXPECT_EQ(back, bpe);
  const auto word = toy_tokenizer();
  word.save((dir / "word.json").string());
  EXPECT_EQ(Tokenizer::from_files(TokenizerMode::word, (dir / "word.json").string()), word);
}

TEST(Tokenizer, NormalizeWhitespace) {
  EXPECT_EQ(normalize_whitespace("  a \t b\n"), "a b");
}
