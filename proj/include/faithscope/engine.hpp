#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "faithscope/model.hpp"

namespace faithscope {

enum class HookAction { record, overwrite };

/// Intervention on the residual stream. Layer 0 is the post-embedding stream
/// and layer l is the output of block l. An overwrite at (l, i) replaces the
/// stream before block l + 1 runs; `vectors[k]` goes to `positions[k]`.
template <typename T>
struct Hook {
  std::size_t layer = 0;
  std::vector<std::size_t> positions;
  HookAction action = HookAction::record;
  std::vector<std::vector<T>> vectors;

  static Hook record(std::size_t layer, std::vector<std::size_t> positions) {
    return {layer, std::move(positions), HookAction::record, {}};
  }
  static Hook overwrite(std::size_t layer, std::vector<std::size_t> positions, std::vector<std::vector<T>> vectors) {
    return {layer, std::move(positions), HookAction::overwrite, std::move(vectors)};
  }
};

template <typename T>
struct ActivationTrace {
  std::vector<Matrix<T>> hidden;  // [n_layers + 1] x [seq_len x d_model]
  Matrix<T> final_logits;         // [seq_len x vocab_size]

  std::size_t seq_len() const { return final_logits.rows(); }
  std::span<const T> hidden_at(std::size_t layer, std::size_t pos) const { return hidden.at(layer).row(pos); }
  std::span<const T> logits_at(std::size_t pos) const { return final_logits.row(pos); }
  std::span<const T> last_logits() const { return final_logits.row(final_logits.rows() - 1); }
};

template <typename T>
ActivationTrace<T> forward(const ModelBundle& bundle, std::span<const TokenId> tokens,
                           std::span<const Hook<T>> hooks = {});

/// Last-position logits widened to double, computed in the requested precision.
std::vector<double> last_logits(const ModelBundle& bundle, std::span<const TokenId> tokens,
                                std::span<const Hook<double>> hooks, Precision precision);

/// Bare h W_o^T: no final norm, no output bias.
std::vector<double> logit_lens(std::span<const double> h, const ModelBundle& bundle);

struct Readout {
  std::size_t position = 0;
  TokenId token = 0;
};

struct HiddenGradient {
  // d log p(readout.token | readout.position) / d (injected vector), one entry
  // per patched position, in the order of the patch hook.
  std::vector<std::vector<double>> per_position;
  bool readout_before_patch = false;
};

/// Exact gradient of the readout log-probability with respect to the vectors
/// injected by `patch`, differentiating only the computation downstream of the
/// patch (forward-mode, 64-bit).
HiddenGradient gradient_wrt_hidden(const ModelBundle& bundle, std::span<const TokenId> tokens,
                                   const Hook<double>& patch, Readout readout);

std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace faithscope
