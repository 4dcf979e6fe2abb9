#pragma once

#include <string>
#include <utility>

#include "faithscope/model.hpp"

namespace faithscope {

// "FPTL v1" tensor container:
//   8 bytes   magic "FPTL0001"
//   u64 LE    header length in bytes
//   header    UTF-8 JSON {name: {"shape": [...], "dtype": "f32", "offset": n}, "__metadata__": {...}}
//   payload   little-endian f32 data; offsets are relative to the payload start
inline constexpr char kFptlMagic[] = "FPTL0001";

struct LoadedWeights {
  ModelConfig config;
  Weights<float> weights;
};

void save_weights(const ModelBundle& bundle, const std::string& path);
LoadedWeights load_weights(const std::string& path);

/// Weights plus tokenizer files. An empty merges path is valid for word mode.
ModelBundle load_bundle(const std::string& weights_path, const std::string& vocab_path,
                        const std::string& merges_path = {});

/// Writes `<dir>/model.fptl`, `<dir>/vocab.json` and, in bpe mode, `<dir>/merges.txt`.
void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle_dir(const std::string& dir);

}  // namespace faithscope
