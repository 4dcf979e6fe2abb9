#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faithscope/dataset.hpp"
#include "faithscope/patchscope.hpp"

namespace faithscope {

/// Multinomial logistic probe over hidden states. Row c of `weights` is the
/// direction of class `classes[c]`.
struct ProbeModel {
  Matrix<double> weights;  // [classes x d_model]
  std::vector<std::string> classes;
  std::vector<double> bias;
  std::vector<double> losses;  // training loss after each epoch

  std::optional<std::size_t> class_index(const std::string& label) const;
  std::span<const double> direction(std::size_t c) const { return weights.row(c); }
  std::vector<double> logits(std::span<const double> h) const;
  std::size_t predict(std::span<const double> h) const;
};

struct ProbeHyper {
  std::size_t epochs = 200;
  double step = 0.1;
  double l2 = 1e-4;
};

struct ProbeExample {
  std::vector<double> x;
  std::string label;
};

/// Full-batch gradient descent on mean cross-entropy plus (l2/2)|W|^2. A step
/// that would raise the loss is retried at half the step size, so the
/// recorded losses never increase.
ProbeModel train_probe(const std::vector<ProbeExample>& examples, const ProbeHyper& hyper = {});

/// Noun-token hidden states at `layer` of each datapoint's source prompt,
/// labelled with a_sec.
std::vector<ProbeExample> probe_examples(const std::vector<Datapoint>& data, std::size_t layer,
                                         const ModelBundle& bundle);

/// Source prompt with the interrogative clause appended.
std::string ld_prompt(const Datapoint& d);

/// First token of an attribute, used as its logit index.
TokenId attribute_token(const std::string& attribute, const Tokenizer& tok);

/// Mean over data of lens(h)[a_sec] - lens(h)[a_pri], h = hidden[layer] at the
/// last token of `ld_prompt`.
double compute_ld(const std::vector<Datapoint>& data, std::size_t layer, const ModelBundle& bundle);

/// Gradient of the readout log-probability with respect to each patched vector.
using GradientProvider =
    std::function<std::vector<std::vector<double>>(const Datapoint& d, const PatchPlan& plan, TokenId readout_token)>;

/// Engine-backed provider: patch at the plan's layers, read out at the last target position.
GradientProvider engine_gradient(const ModelBundle& bundle);

struct GsaResult {
  double value = 0.0;       // mean |cos| over used datapoints, 0 when none
  std::size_t used = 0;
  std::size_t skipped = 0;  // zero gradient or probe lacks the class
};

GsaResult compute_gsa(const std::vector<Datapoint>& data, std::size_t layer, const ModelBundle& bundle,
                      const ProbeModel& probe, const GradientProvider& gradient = {});

struct LayerScore {
  std::size_t layer = 0;
  double ld_raw = 0.0;
  double gsa_raw = 0.0;
  double ld_norm = 0.0;
  double gsa_norm = 0.0;
  double combined = 0.0;
};

struct SelectionConfig {
  double weight_w = 0.8;
  std::optional<std::pair<std::size_t, std::size_t>> layer_range;  // inclusive; default [0, n_layers - 1]
  ProbeHyper probe;
  std::size_t jobs = 1;

  void validate() const;
};

/// Min-max normalizes ld_raw and gsa_raw in place (a constant column becomes
/// 0.5), fills `combined` and returns the layer of the highest combined score,
/// preferring the lowest layer on ties.
std::size_t select_layer(std::vector<LayerScore>& scores, double weight_w);

struct LayerScan {
  std::vector<LayerScore> scores;
  std::size_t chosen = 0;
  double weight_w = 0.8;
  std::vector<std::size_t> gsa_skipped;
  bool probe_available = true;
};

/// LD over `data`; probes trained per layer on `probe_data` supply the GSA
/// directions.
LayerScan scan_layers(const std::vector<Datapoint>& data, const std::vector<Datapoint>& probe_data,
                      const ModelBundle& bundle, const SelectionConfig& cfg);

void to_json(nlohmann::json& j, const LayerScan& scan);

}  // namespace faithscope
