#include "faithscope/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "faithscope/rng.hpp"

namespace faithscope {

void ModelConfig::validate() const {
  FS_CHECK(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, ErrorCode::InvalidArgument,
           "d_model must be a positive multiple of n_heads");
  FS_CHECK(vocab_size >= 2, ErrorCode::InvalidArgument, "vocab_size must be at least 2");
  FS_CHECK(norm_eps > 0.0, ErrorCode::InvalidArgument, "norm_eps must be positive");
  FS_CHECK(d_ff > 0, ErrorCode::InvalidArgument, "d_ff must be positive");
  FS_CHECK(max_seq > 0, ErrorCode::InvalidArgument, "max_seq must be positive");
}

namespace {

template <typename To, typename From>
std::vector<To> cast_vec(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

void check_vec(const std::vector<float>& v, std::size_t n, const std::string& name) {
  FS_CHECK(v.size() == n, ErrorCode::ShapeMismatch,
           name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  for (float x : v) FS_CHECK(std::isfinite(x), ErrorCode::InvalidArgument, name + ": non-finite value");
}

void check_mat(const Matrix<float>& m, std::size_t r, std::size_t c, const std::string& name) {
  FS_CHECK(m.rows() == r && m.cols() == c, ErrorCode::ShapeMismatch,
           name + ": expected [" + std::to_string(r) + " x " + std::to_string(c) + "], got [" +
               std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + "]");
  for (float x : m.data()) FS_CHECK(std::isfinite(x), ErrorCode::InvalidArgument, name + ": non-finite value");
}

}  // namespace

template <typename To, typename From>
Weights<To> weights_cast(const Weights<From>& w) {
  Weights<To> out;
  out.token_embedding = matrix_cast<To>(w.token_embedding);
  out.position_embedding = matrix_cast<To>(w.position_embedding);
  for (const auto& b : w.blocks) {
    BlockWeights<To> o;
    o.ln1_scale = cast_vec<To>(b.ln1_scale);
    o.ln1_shift = cast_vec<To>(b.ln1_shift);
    o.wq = matrix_cast<To>(b.wq);
    o.wk = matrix_cast<To>(b.wk);
    o.wv = matrix_cast<To>(b.wv);
    o.wo = matrix_cast<To>(b.wo);
    o.bq = cast_vec<To>(b.bq);
    o.bk = cast_vec<To>(b.bk);
    o.bv = cast_vec<To>(b.bv);
    o.bo = cast_vec<To>(b.bo);
    o.ln2_scale = cast_vec<To>(b.ln2_scale);
    o.ln2_shift = cast_vec<To>(b.ln2_shift);
    o.w_up = matrix_cast<To>(b.w_up);
    o.b_up = cast_vec<To>(b.b_up);
    o.w_down = matrix_cast<To>(b.w_down);
    o.b_down = cast_vec<To>(b.b_down);
    out.blocks.push_back(std::move(o));
  }
  out.final_scale = cast_vec<To>(w.final_scale);
  out.final_shift = cast_vec<To>(w.final_shift);
  out.unembedding = matrix_cast<To>(w.unembedding);
  out.output_bias = cast_vec<To>(w.output_bias);
  return out;
}

template Weights<double> weights_cast<double, float>(const Weights<float>&);
template Weights<float> weights_cast<float, double>(const Weights<double>&);

void validate_weights(const ModelConfig& c, const Weights<float>& w) {
  c.validate();
  const std::size_t d = c.d_model;
  check_mat(w.token_embedding, c.vocab_size, d, "token_embedding");
  check_mat(w.position_embedding, c.max_seq, d, "position_embedding");
  FS_CHECK(w.blocks.size() == c.n_layers, ErrorCode::ShapeMismatch,
           "expected " + std::to_string(c.n_layers) + " blocks, got " + std::to_string(w.blocks.size()));
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& b = w.blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    check_vec(b.ln1_scale, d, p + "ln1.scale");
    check_vec(b.ln1_shift, d, p + "ln1.shift");
    check_mat(b.wq, d, d, p + "attn.q.weight");
    check_mat(b.wk, d, d, p + "attn.k.weight");
    check_mat(b.wv, d, d, p + "attn.v.weight");
    check_mat(b.wo, d, d, p + "attn.o.weight");
    check_vec(b.bq, d, p + "attn.q.bias");
    check_vec(b.bk, d, p + "attn.k.bias");
    check_vec(b.bv, d, p + "attn.v.bias");
    check_vec(b.bo, d, p + "attn.o.bias");
    check_vec(b.ln2_scale, d, p + "ln2.scale");
    check_vec(b.ln2_shift, d, p + "ln2.shift");
    check_mat(b.w_up, c.d_ff, d, p + "mlp.up.weight");
    check_vec(b.b_up, c.d_ff, p + "mlp.up.bias");
    check_mat(b.w_down, d, c.d_ff, p + "mlp.down.weight");
    check_vec(b.b_down, d, p + "mlp.down.bias");
  }
  if (c.final_norm) {
    check_vec(w.final_scale, d, "final_norm.scale");
    check_vec(w.final_shift, d, "final_norm.shift");
  } else {
    FS_CHECK(w.final_scale.empty() && w.final_shift.empty(), ErrorCode::ShapeMismatch,
             "final norm parameters present but config disables the final norm");
  }
  check_mat(w.unembedding, c.vocab_size, d, "unembedding");
  check_vec(w.output_bias, c.vocab_size, "output_bias");
}

ModelBundle::ModelBundle(ModelConfig config, Tokenizer tokenizer, Weights<float> weights)
    : config_(std::move(config)) {
  FS_CHECK(tokenizer.size() == config_.vocab_size, ErrorCode::ShapeMismatch,
           "tokenizer has " + std::to_string(tokenizer.size()) + " tokens but vocab_size is " +
               std::to_string(config_.vocab_size));
  FS_CHECK(tokenizer.mode() == config_.tokenizer_mode, ErrorCode::InvalidArgument,
           "tokenizer mode does not match config");
  validate_weights(config_, weights);
  w64_ = std::make_shared<const Weights<double>>(weights_cast<double>(weights));
  w32_ = std::make_shared<const Weights<float>>(std::move(weights));
  tokenizer_ = std::make_shared<const Tokenizer>(std::move(tokenizer));
}

namespace {

// clang-format off
constexpr const char* kToyWords[] = {
  "<pad>", "<bos>", "<eos>", "<x>",
  ".", "?", ",", "\"",
  "##.", "##?", "##,", "##\"", "##She", "##He",
  // template and clause words
  "The", "the", "Here", "This", "What", "Replace", "is", "a", "an", "of", "or", "with",
  "has", "name", "stands", "out", "in", "department", "person", "exceptional",
  "outstanding", "student", "color", "gender", "religion", "birthplace", "age", "x",
  // baseline prefixes
  "Do", "not", "use", "outside", "empirical", "knowledge", "directly", "answer",
  "Use", "only", "internal", "evidence", "from", "input", "exclude", "background",
  "Answer", "strictly", "given", "data", "avoid", "any", "external", "reasoning",
  // colors
  "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black",
  "white", "gray",
  // color nouns
  "broccoli", "banana", "grass", "sky", "tomato", "carrot", "apple", "lemon",
  "eggplant", "cherry", "strawberry", "snow", "coal", "grape", "pumpkin", "corn",
  "lettuce", "cucumber", "blueberry", "plum", "cabbage", "pepper", "rose", "cauliflower",
  "ice", "cream", "sea", "salt",
  // gender
  "She", "He", "she", "he", "man", "woman", "male", "female", "compassionate",
  "strong", "gentle", "ambitious", "nurse", "engineer", "Mary", "John", "Emma", "James",
  "nursing", "engineering", "physics", "education",
  // culture
  "Buddhism", "Judaism", "Christianity", "Islam", "Hinduism", "France", "Japan",
  "India", "Brazil", "Nigeria", "China", "Ajahn", "Yusuf", "Hiroshi", "Priya", "Moshe",
  "Pierre", "Ana",
  // age
  "young", "old", "mentor", "intern", "professor", "retiree", "teacher", "pilot",
};
// clang-format on

void fill_normal(Rng& rng, std::vector<float>& v, double stddev, double mean = 0.0) {
  for (auto& x : v) x = static_cast<float>(mean + stddev * rng.normal());
}

void fill_normal(Rng& rng, Matrix<float>& m, double stddev) { fill_normal(rng, m.data(), stddev); }

}  // namespace

Tokenizer toy_tokenizer() {
  std::map<std::string, TokenId> vocab;
  TokenId next = 0;
  for (const char* w : kToyWords) {
    const bool inserted = vocab.emplace(w, next).second;
    if (inserted) ++next;
  }
  return Tokenizer::word(std::move(vocab));
}

ModelConfig toy_config() {
  ModelConfig c;
  c.vocab_size = toy_tokenizer().size();
  return c;
}

ModelBundle make_toy_model(std::uint64_t seed, ModelConfig config, const std::optional<BiasRig>& rig,
                           std::optional<Tokenizer> tokenizer) {
  Tokenizer tok = tokenizer ? std::move(*tokenizer) : toy_tokenizer();
  if (config.vocab_size == 0) config.vocab_size = tok.size();
  FS_CHECK(config.vocab_size >= tok.size(), ErrorCode::InvalidArgument,
           "vocab_size smaller than the tokenizer vocabulary");
  if (config.vocab_size > tok.size()) {
    FS_CHECK(tok.mode() == TokenizerMode::word, ErrorCode::InvalidArgument,
             "vocabulary padding is only supported for word tokenizers");
    auto vocab = tok.vocab();
    while (vocab.size() < config.vocab_size) {
      const auto id = static_cast<TokenId>(vocab.size());
      vocab.emplace("<unused" + std::to_string(id) + ">", id);
    }
    tok = Tokenizer::word(std::move(vocab));
  }
  config.tokenizer_mode = tok.mode();
  config.validate();

  const std::size_t d = config.d_model;
  const std::size_t ff = config.d_ff;
  const std::size_t V = config.vocab_size;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_sqrt_ff = 1.0 / std::sqrt(static_cast<double>(ff));

  Rng rng(seed);
  Weights<float> w;
  w.token_embedding = Matrix<float>(V, d);
  fill_normal(rng, w.token_embedding, 0.1);
  w.position_embedding = Matrix<float>(config.max_seq, d);
  fill_normal(rng, w.position_embedding, 0.02);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    BlockWeights<float> b;
    b.ln1_scale.resize(d);
    fill_normal(rng, b.ln1_scale, 0.05, 1.0);
    b.ln1_shift.resize(d);
    fill_normal(rng, b.ln1_shift, 0.02);
    for (Matrix<float>* m : {&b.wq, &b.wk, &b.wv, &b.wo}) {
      *m = Matrix<float>(d, d);
      fill_normal(rng, *m, inv_sqrt_d);
    }
    for (std::vector<float>* v : {&b.bq, &b.bk, &b.bv, &b.bo}) {
      v->resize(d);
      fill_normal(rng, *v, 0.02);
    }
    b.ln2_scale.resize(d);
    fill_normal(rng, b.ln2_scale, 0.05, 1.0);
    b.ln2_shift.resize(d);
    fill_normal(rng, b.ln2_shift, 0.02);
    b.w_up = Matrix<float>(ff, d);
    fill_normal(rng, b.w_up, inv_sqrt_d);
    b.b_up.resize(ff);
    fill_normal(rng, b.b_up, 0.02);
    b.w_down = Matrix<float>(d, ff);
    fill_normal(rng, b.w_down, 0.5 * inv_sqrt_ff);
    b.b_down.resize(d);
    fill_normal(rng, b.b_down, 0.02);
    w.blocks.push_back(std::move(b));
  }
  if (config.final_norm) {
    w.final_scale.resize(d);
    fill_normal(rng, w.final_scale, 0.05, 1.0);
    w.final_shift.resize(d);
    fill_normal(rng, w.final_shift, 0.02);
  }
  w.unembedding = Matrix<float>(V, d);
  fill_normal(rng, w.unembedding, 0.5 * inv_sqrt_d);
  w.output_bias.resize(V);
  fill_normal(rng, w.output_bias, 0.02);

  if (rig) {
    auto require = [&](const std::string& t) {
      auto id = tok.find(t);
      FS_CHECK(id.has_value(), ErrorCode::InvalidArgument, "rig token '" + t + "' is not in the vocabulary");
      return *id;
    };
    if (!rig->biased_token.empty()) {
      const TokenId b = require(rig->biased_token);
      w.output_bias[b] = static_cast<float>(w.output_bias[b] + rig->bias_strength);
    }
    if (!rig->context_tokens.empty()) {
      const std::size_t hd = config.head_dim();
      FS_CHECK(rig->context_tokens.size() <= hd, ErrorCode::InvalidArgument,
               "context channel needs one head dimension per context token");
      const std::size_t base = d - hd;  // slice of the last head
      const std::size_t vocab = w.token_embedding.rows();
      // The slice is private: only context tokens write or read it.
      for (std::size_t t = 0; t < vocab; ++t) {
        for (std::size_t r = base; r < d; ++r) {
          w.token_embedding(t, r) = 0.0f;
          w.unembedding(t, r) = 0.0f;
        }
      }
      for (std::size_t p = 0; p < w.position_embedding.rows(); ++p) {
        for (std::size_t r = base; r < d; ++r) w.position_embedding(p, r) = 0.0f;
      }
      for (std::size_t k = 0; k < rig->context_tokens.size(); ++k) {
        const TokenId a = require(rig->context_tokens[k]);
        w.token_embedding(a, base + k) = static_cast<float>(rig->context_embed_gain);
        w.unembedding(a, base + k) = static_cast<float>(rig->context_read_gain);
      }
      auto clear_norm = [&](std::vector<float>& scale, std::vector<float>& shift) {
        for (std::size_t r = base; r < d && r < scale.size(); ++r) {
          scale[r] = 1.0f;
          shift[r] = 0.0f;
        }
      };
      for (auto& b : w.blocks) {
        clear_norm(b.ln1_scale, b.ln1_shift);
        clear_norm(b.ln2_scale, b.ln2_shift);
        for (std::size_t r = base; r < d; ++r) {
          b.bq[r] = 0.0f;
          b.bv[r] = 0.0f;
          b.bo[r] = 0.0f;
          b.b_down[r] = 0.0f;
          for (std::size_t c = 0; c < d; ++c) {
            b.wq(r, c) = 0.0f;  // zero queries: uniform causal attention
            b.wv(r, c) = r == c ? 1.0f : 0.0f;
            b.wo(c, r) = r == c ? 1.0f : 0.0f;
            b.wo(r, c) = r == c ? 1.0f : 0.0f;  // other heads do not write the slice
          }
          for (std::size_t c = 0; c < b.w_down.cols(); ++c) b.w_down(r, c) = 0.0f;
        }
      }
      clear_norm(w.final_scale, w.final_shift);
    }
  }
  return ModelBundle(config, std::move(tok), std::move(w));
}

}  // namespace faithscope
