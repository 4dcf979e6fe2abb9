#include "faithscope/fptl.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <nlohmann/json.hpp>

namespace faithscope {
namespace {

static_assert(std::endian::native == std::endian::little, "FPTL I/O assumes a little-endian host");

using json = nlohmann::json;

// Visits every tensor of a weight set in canonical order as (name, shape, data).
template <typename WeightsRef, typename Fn>
void for_each_tensor(WeightsRef& w, const ModelConfig& c, Fn&& fn) {
  using Vec = std::conditional_t<std::is_const_v<WeightsRef>, const std::vector<float>, std::vector<float>>;
  auto mat = [&](const std::string& name, auto& m, std::size_t r, std::size_t cols) {
    fn(name, std::vector<std::size_t>{r, cols}, static_cast<Vec&>(m.data()));
  };
  auto vec = [&](const std::string& name, auto& v, std::size_t n) {
    fn(name, std::vector<std::size_t>{n}, static_cast<Vec&>(v));
  };
  const std::size_t d = c.d_model;
  mat("token_embedding", w.token_embedding, c.vocab_size, d);
  mat("position_embedding", w.position_embedding, c.max_seq, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& b = w.blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    vec(p + "ln1.scale", b.ln1_scale, d);
    vec(p + "ln1.shift", b.ln1_shift, d);
    mat(p + "attn.q.weight", b.wq, d, d);
    vec(p + "attn.q.bias", b.bq, d);
    mat(p + "attn.k.weight", b.wk, d, d);
    vec(p + "attn.k.bias", b.bk, d);
    mat(p + "attn.v.weight", b.wv, d, d);
    vec(p + "attn.v.bias", b.bv, d);
    mat(p + "attn.o.weight", b.wo, d, d);
    vec(p + "attn.o.bias", b.bo, d);
    vec(p + "ln2.scale", b.ln2_scale, d);
    vec(p + "ln2.shift", b.ln2_shift, d);
    mat(p + "mlp.up.weight", b.w_up, c.d_ff, d);
    vec(p + "mlp.up.bias", b.b_up, c.d_ff);
    mat(p + "mlp.down.weight", b.w_down, d, c.d_ff);
    vec(p + "mlp.down.bias", b.b_down, d);
  }
  if (c.final_norm) {
    vec("final_norm.scale", w.final_scale, d);
    vec("final_norm.shift", w.final_shift, d);
  }
  mat("unembedding", w.unembedding, c.vocab_size, d);
  vec("output_bias", w.output_bias, c.vocab_size);
}

json config_metadata(const ModelConfig& c) {
  // Metadata values are strings, as in other tensor containers.
  return json{{"format", "FPTL v1"},
              {"n_layers", std::to_string(c.n_layers)},
              {"d_model", std::to_string(c.d_model)},
              {"n_heads", std::to_string(c.n_heads)},
              {"d_ff", std::to_string(c.d_ff)},
              {"vocab_size", std::to_string(c.vocab_size)},
              {"max_seq", std::to_string(c.max_seq)},
              {"norm_eps", json(c.norm_eps).dump()},
              {"final_norm", c.final_norm ? "true" : "false"},
              {"tokenizer_mode", std::string(to_string(c.tokenizer_mode))}};
}

ModelConfig config_from_metadata(const json& meta) {
  auto get = [&](const char* key) -> std::string {
    FS_CHECK(meta.contains(key) && meta[key].is_string(), ErrorCode::ShapeMismatch,
             std::string("FPTL metadata missing '") + key + "'");
    return meta[key].get<std::string>();
  };
  auto count = [&](const char* key) -> std::size_t {
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ShapeMismatch, std::string("FPTL metadata '") + key + "' is not a count");
    }
  };
  ModelConfig c;
  c.n_layers = count("n_layers");
  c.d_model = count("d_model");
  c.n_heads = count("n_heads");
  c.d_ff = count("d_ff");
  c.vocab_size = count("vocab_size");
  c.max_seq = count("max_seq");
  c.norm_eps = json::parse(get("norm_eps")).get<double>();
  c.final_norm = get("final_norm") == "true";
  c.tokenizer_mode = tokenizer_mode_from_string(get("tokenizer_mode"));
  return c;
}

Weights<float> empty_weights(const ModelConfig& c) {
  Weights<float> w;
  w.blocks.resize(c.n_layers);
  return w;
}

}  // namespace

void save_weights(const ModelBundle& bundle, const std::string& path) {
  const auto& c = bundle.config();
  const auto& w = bundle.weights<float>();
  json header = json::object();
  header["__metadata__"] = config_metadata(c);
  std::vector<const std::vector<float>*> order;
  std::uint64_t offset = 0;
  for_each_tensor(w, c, [&](const std::string& name, const std::vector<std::size_t>& shape,
                            const std::vector<float>& data) {
    header[name] = json{{"shape", shape}, {"dtype", "f32"}, {"offset", offset}};
    offset += data.size() * sizeof(float);
    order.push_back(&data);
  });
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FS_CHECK(out.good(), ErrorCode::IoError, "cannot write " + path);
  out.write(kFptlMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* data : order) {
    out.write(reinterpret_cast<const char*>(data->data()), static_cast<std::streamsize>(data->size() * sizeof(float)));
  }
  FS_CHECK(out.good(), ErrorCode::IoError, "write failed for " + path);
}

LoadedWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FS_CHECK(in.good(), ErrorCode::IoError, "cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  FS_CHECK(bytes.size() >= 8, ErrorCode::TruncatedFile, path + ": shorter than the magic");
  FS_CHECK(std::memcmp(bytes.data(), kFptlMagic, 8) == 0, ErrorCode::BadMagic, path + ": not an FPTL v1 file");
  FS_CHECK(bytes.size() >= 16, ErrorCode::TruncatedFile, path + ": missing header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  FS_CHECK(header_len <= bytes.size() - 16, ErrorCode::TruncatedFile, path + ": header extends past end of file");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ShapeMismatch, path + ": malformed header: " + e.what());
  }
  FS_CHECK(header.is_object() && header.contains("__metadata__"), ErrorCode::ShapeMismatch,
           path + ": header lacks __metadata__");
  LoadedWeights result{config_from_metadata(header["__metadata__"]), {}};
  result.config.validate();
  result.weights = empty_weights(result.config);

  const std::size_t payload = 16 + header_len;
  const std::size_t payload_size = bytes.size() - payload;
  std::size_t expected_tensors = 0;
  for_each_tensor(result.weights, result.config, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                                     std::vector<float>& data) {
    ++expected_tensors;
    FS_CHECK(header.contains(name), ErrorCode::ShapeMismatch, path + ": missing tensor " + name);
    const json& entry = header[name];
    FS_CHECK(entry.value("dtype", "") == "f32", ErrorCode::ShapeMismatch, name + ": dtype must be f32");
    FS_CHECK(entry.at("shape").get<std::vector<std::size_t>>() == shape, ErrorCode::ShapeMismatch,
             name + ": shape disagrees with config");
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    const auto offset = entry.at("offset").get<std::uint64_t>();
    FS_CHECK(offset <= payload_size && n * sizeof(float) <= payload_size - offset, ErrorCode::TruncatedFile,
             path + ": tensor " + name + " extends past end of file");
    data.resize(n);
    std::memcpy(data.data(), bytes.data() + payload + offset, n * sizeof(float));
  });
  FS_CHECK(header.size() == expected_tensors + 1, ErrorCode::ShapeMismatch, path + ": unexpected extra tensors");

  // Matrices were filled through their flat storage; restore their shapes.
  auto reshape = [](Matrix<float>& m, std::size_t r, std::size_t c) {
    Matrix<float> shaped(r, c);
    shaped.data() = std::move(m.data());
    m = std::move(shaped);
  };
  const auto& c = result.config;
  auto& w = result.weights;
  reshape(w.token_embedding, c.vocab_size, c.d_model);
  reshape(w.position_embedding, c.max_seq, c.d_model);
  for (auto& b : w.blocks) {
    reshape(b.wq, c.d_model, c.d_model);
    reshape(b.wk, c.d_model, c.d_model);
    reshape(b.wv, c.d_model, c.d_model);
    reshape(b.wo, c.d_model, c.d_model);
    reshape(b.w_up, c.d_ff, c.d_model);
    reshape(b.w_down, c.d_model, c.d_ff);
  }
  reshape(w.unembedding, c.vocab_size, c.d_model);
  validate_weights(c, w);
  return result;
}

ModelBundle load_bundle(const std::string& weights_path, const std::string& vocab_path,
                        const std::string& merges_path) {
  auto loaded = load_weights(weights_path);
  auto tok = Tokenizer::from_files(loaded.config.tokenizer_mode, vocab_path, merges_path);
  return ModelBundle(loaded.config, std::move(tok), std::move(loaded.weights));
}

void save_bundle(const ModelBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_weights(bundle, (fs::path(dir) / "model.fptl").string());
  const bool bpe = bundle.tokenizer().mode() == TokenizerMode::bpe;
  bundle.tokenizer().save((fs::path(dir) / "vocab.json").string(),
                          bpe ? (fs::path(dir) / "merges.txt").string() : std::string());
}

ModelBundle load_bundle_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto merges = fs::path(dir) / "merges.txt";
  return load_bundle((fs::path(dir) / "model.fptl").string(), (fs::path(dir) / "vocab.json").string(),
                     fs::exists(merges) ? merges.string() : std::string());
}

}  // namespace faithscope
