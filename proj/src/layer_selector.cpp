#include "faithscope/layer_selector.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <thread>

#include "faithscope/engine.hpp"
#include "faithscope/logging.hpp"

namespace faithscope {

std::optional<std::size_t> ProbeModel::class_index(const std::string& label) const {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classes.begin());
}

std::vector<double> ProbeModel::logits(std::span<const double> h) const {
  FS_CHECK(h.size() == weights.cols(), ErrorCode::ShapeMismatch, "probe input has wrong dimension");
  std::vector<double> out(classes.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(weights.row(c), h) + bias[c];
  return out;
}

std::size_t ProbeModel::predict(std::span<const double> h) const {
  const auto z = logits(h);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

namespace {

struct ProbeObjective {
  const std::vector<std::vector<double>>& xs;
  const std::vector<std::size_t>& ys;
  double l2;

  // Mean cross-entropy + (l2/2)|W|^2; fills gradients when requested.
  double operator()(const Matrix<double>& w, const std::vector<double>& b, Matrix<double>* gw,
                    std::vector<double>* gb) const {
    const std::size_t k = w.rows(), d = w.cols();
    const double inv_n = 1.0 / static_cast<double>(xs.size());
    if (gw) *gw = Matrix<double>(k, d);
    if (gb) gb->assign(k, 0.0);
    double loss = 0.0;
    std::vector<double> z(k);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t c = 0; c < k; ++c) z[c] = dot(w.row(c), std::span<const double>(xs[i])) + b[c];
      const auto lp = log_softmax(z);
      loss -= lp[ys[i]] * inv_n;
      if (!gw) continue;
      for (std::size_t c = 0; c < k; ++c) {
        const double r = (std::exp(lp[c]) - (c == ys[i] ? 1.0 : 0.0)) * inv_n;
        (*gb)[c] += r;
        auto row = gw->row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] += r * xs[i][j];
      }
    }
    double sq = 0.0;
    for (double v : w.data()) sq += v * v;
    loss += 0.5 * l2 * sq;
    if (gw) {
      auto& g = gw->data();
      const auto& wd = w.data();
      for (std::size_t t = 0; t < g.size(); ++t) g[t] += l2 * wd[t];
    }
    return loss;
  }
};

}  // namespace

ProbeModel train_probe(const std::vector<ProbeExample>& examples, const ProbeHyper& hyper) {
  FS_CHECK(!examples.empty(), ErrorCode::DegenerateData, "probe needs training examples");
  FS_CHECK(hyper.step > 0.0 && hyper.l2 >= 0.0, ErrorCode::InvalidArgument, "probe step must be > 0 and l2 >= 0");
  ProbeModel probe;
  std::set<std::string> labels;
  for (const auto& e : examples) labels.insert(e.label);
  FS_CHECK(labels.size() >= 2, ErrorCode::DegenerateData, "probe needs at least two classes");
  probe.classes.assign(labels.begin(), labels.end());

  const std::size_t d = examples.front().x.size();
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (const auto& e : examples) {
    FS_CHECK(e.x.size() == d, ErrorCode::ShapeMismatch, "probe examples differ in dimension");
    xs.push_back(e.x);
    ys.push_back(*probe.class_index(e.label));
  }
  const std::size_t k = probe.classes.size();
  probe.weights = Matrix<double>(k, d);
  probe.bias.assign(k, 0.0);
  const ProbeObjective objective{xs, ys, hyper.l2};

  Matrix<double> gw;
  std::vector<double> gb;
  double loss = objective(probe.weights, probe.bias, &gw, &gb);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    double step = hyper.step;
    for (int attempt = 0; attempt < 40; ++attempt, step *= 0.5) {
      Matrix<double> w = probe.weights;
      std::vector<double> b = probe.bias;
      auto& wd = w.data();
      const auto& gd = gw.data();
      for (std::size_t t = 0; t < wd.size(); ++t) wd[t] -= step * gd[t];
      for (std::size_t c = 0; c < k; ++c) b[c] -= step * gb[c];
      const double next = objective(w, b, nullptr, nullptr);
      if (next <= loss) {
        probe.weights = std::move(w);
        probe.bias = std::move(b);
        loss = objective(probe.weights, probe.bias, &gw, &gb);
        break;
      }
    }
    probe.losses.push_back(loss);
  }
  return probe;
}

std::vector<ProbeExample> probe_examples(const std::vector<Datapoint>& data, std::size_t layer,
                                         const ModelBundle& bundle) {
  std::vector<ProbeExample> out;
  for (const auto& d : data) {
    const std::string prompt = d.source_prompt.empty() ? source_prompt_for(d) : d.source_prompt;
    const auto src = make_source(prompt, d.noun, layer, bundle);
    for (auto& h : extract_hidden<double>(src, bundle)) out.push_back({std::move(h), d.a_sec});
  }
  return out;
}

std::string ld_prompt(const Datapoint& d) {
  const std::string base = d.source_prompt.empty() ? source_prompt_for(d) : d.source_prompt;
  return base + " What " + attribute_word(d) + " is " + d.noun + "?";
}

TokenId attribute_token(const std::string& attribute, const Tokenizer& tok) {
  std::vector<TokenId> ids;
  try {
    ids = tok.encode(tok.mode() == TokenizerMode::bpe ? " " + attribute : attribute);
  } catch (const Error& e) {
    throw Error(ErrorCode::AttributeNotTokenizable, "attribute '" + attribute + "': " + e.what());
  }
  FS_CHECK(!ids.empty(), ErrorCode::AttributeNotTokenizable, "attribute '" + attribute + "' encodes to nothing");
  return ids.front();
}

double compute_ld(const std::vector<Datapoint>& data, std::size_t layer, const ModelBundle& bundle) {
  FS_CHECK(!data.empty(), ErrorCode::EmptyRecords, "LD needs at least one datapoint");
  FS_CHECK(layer <= bundle.config().n_layers, ErrorCode::PositionOutOfRange, "layer exceeds n_layers");
  const auto& tok = bundle.tokenizer();
  double total = 0.0;
  for (const auto& d : data) {
    const TokenId sec = attribute_token(d.a_sec, tok);
    const TokenId pri = attribute_token(d.a_pri, tok);
    const auto tokens = tok.encode(ld_prompt(d));
    const std::vector<Hook<double>> hooks{Hook<double>::record(layer, {tokens.size() - 1})};
    const auto trace = forward<double>(bundle, tokens, hooks);
    const auto lens = logit_lens(trace.hidden_at(layer, tokens.size() - 1), bundle);
    total += lens[static_cast<std::size_t>(sec)] - lens[static_cast<std::size_t>(pri)];
  }
  return total / static_cast<double>(data.size());
}

GradientProvider engine_gradient(const ModelBundle& bundle) {
  return [&bundle](const Datapoint&, const PatchPlan& plan, TokenId readout_token) {
    auto vectors = extract_hidden<double>(plan.source, bundle);
    const auto hook = patch_hook<double>(plan, std::move(vectors));
    const Readout readout{plan.target.tokens.size() - 1, readout_token};
    auto g = gradient_wrt_hidden(bundle, plan.target.tokens, hook, readout);
    if (g.readout_before_patch) return std::vector<std::vector<double>>{};
    return std::move(g.per_position);
  };
}

GsaResult compute_gsa(const std::vector<Datapoint>& data, std::size_t layer, const ModelBundle& bundle,
                      const ProbeModel& probe, const GradientProvider& gradient) {
  const GradientProvider grad = gradient ? gradient : engine_gradient(bundle);
  GsaResult result;
  double total = 0.0;
  for (const auto& d : data) {
    const auto cls = probe.class_index(d.a_sec);
    if (!cls) {
      ++result.skipped;
      continue;
    }
    const std::string target = d.target_prompt.empty() ? target_prompt_for(d, d.a_pri, d.a_sec) : d.target_prompt;
    const std::string source = d.source_prompt.empty() ? source_prompt_for(d) : d.source_prompt;
    const auto plan = make_plan(source, d.noun, layer, target, layer, bundle);
    const auto grads = grad(d, plan, attribute_token(d.a_sec, bundle.tokenizer()));
    const auto w = probe.direction(*cls);
    const double wn = std::sqrt(dot(w, w));
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& g : grads) {
      const double gn = std::sqrt(dot(std::span<const double>(g), std::span<const double>(g)));
      if (gn == 0.0 || wn == 0.0) continue;
      sum += std::abs(dot(std::span<const double>(g), w)) / (gn * wn);
      ++counted;
    }
    if (counted == 0) {
      ++result.skipped;
      continue;
    }
    total += std::min(1.0, sum / static_cast<double>(counted));
    ++result.used;
  }
  if (result.skipped > 0) {
    log_event("warn", "gsa_skipped", {{"layer", layer}, {"skipped", result.skipped}, {"used", result.used}});
  }
  result.value = result.used ? total / static_cast<double>(result.used) : 0.0;
  return result;
}

void SelectionConfig::validate() const {
  FS_CHECK(weight_w >= 0.0 && weight_w <= 1.0, ErrorCode::InvalidArgument, "weight w must lie in [0, 1]");
  if (layer_range) {
    FS_CHECK(layer_range->first <= layer_range->second, ErrorCode::EmptyRange, "layer range is empty");
  }
}

namespace {

void minmax(std::vector<LayerScore>& scores, double LayerScore::*raw, double LayerScore::*norm) {
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                            [&](const auto& a, const auto& b) { return a.*raw < b.*raw; });
  const double a = (*lo).*raw, b = (*hi).*raw;
  for (auto& s : scores) s.*norm = b > a ? (s.*raw - a) / (b - a) : 0.5;
}

}  // namespace

std::size_t select_layer(std::vector<LayerScore>& scores, double weight_w) {
  FS_CHECK(!scores.empty(), ErrorCode::EmptyRange, "no layers to select from");
  FS_CHECK(weight_w >= 0.0 && weight_w <= 1.0, ErrorCode::InvalidArgument, "weight w must lie in [0, 1]");
  minmax(scores, &LayerScore::ld_raw, &LayerScore::ld_norm);
  minmax(scores, &LayerScore::gsa_raw, &LayerScore::gsa_norm);
  std::size_t best = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& s = scores[i];
    s.combined = weight_w * s.ld_norm + (1.0 - weight_w) * s.gsa_norm;
    const auto& b = scores[best];
    if (s.combined > b.combined || (s.combined == b.combined && s.layer < b.layer)) best = i;
  }
  return scores[best].layer;
}

LayerScan scan_layers(const std::vector<Datapoint>& data, const std::vector<Datapoint>& probe_data,
                      const ModelBundle& bundle, const SelectionConfig& cfg) {
  cfg.validate();
  const std::size_t n_layers = bundle.config().n_layers;
  const auto [first, last] = cfg.layer_range.value_or(std::pair<std::size_t, std::size_t>{0, n_layers - 1});
  FS_CHECK(last <= n_layers, ErrorCode::PositionOutOfRange, "layer range exceeds n_layers");

  LayerScan scan;
  scan.weight_w = cfg.weight_w;
  const std::size_t count = last - first + 1;
  scan.scores.resize(count);
  scan.gsa_skipped.assign(count, 0);
  std::vector<char> probe_ok(count, 1);
  std::vector<std::exception_ptr> errors(count);

  auto work = [&](std::size_t i) {
    try {
      const std::size_t layer = first + i;
      auto& s = scan.scores[i];
      s.layer = layer;
      s.ld_raw = compute_ld(data, layer, bundle);
      std::optional<ProbeModel> probe;
      try {
        probe = train_probe(probe_examples(probe_data, layer, bundle), cfg.probe);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateData) throw;
        probe_ok[i] = 0;
      }
      if (probe) {
        const auto gsa = compute_gsa(data, layer, bundle, *probe);
        s.gsa_raw = gsa.value;
        scan.gsa_skipped[i] = gsa.skipped;
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, count));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) work(i);
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  scan.probe_available = std::all_of(probe_ok.begin(), probe_ok.end(), [](char c) { return c != 0; });
  if (!scan.probe_available) {
    log_event("warn", "probe_unavailable", {{"reason", "probe data has fewer than two classes; GSA set to 0"}});
  }
  scan.chosen = select_layer(scan.scores, cfg.weight_w);
  return scan;
}

void to_json(nlohmann::json& j, const LayerScan& scan) {
  j = nlohmann::json::object();
  j["weight_w"] = scan.weight_w;
  j["chosen_layer"] = scan.chosen;
  j["probe_available"] = scan.probe_available;
  j["normalization"] = "min-max over scanned layers; constant metric -> 0.5";
  j["ld_clause"] = " What {attribute word} is {noun}?";
  auto& layers = j["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < scan.scores.size(); ++i) {
    const auto& s = scan.scores[i];
    layers.push_back({{"layer", s.layer},
                      {"ld_raw", s.ld_raw},
                      {"gsa_raw", s.gsa_raw},
                      {"ld_norm", s.ld_norm},
                      {"gsa_norm", s.gsa_norm},
                      {"combined", s.combined},
                      {"gsa_skipped", i < scan.gsa_skipped.size() ? scan.gsa_skipped[i] : 0}});
  }
}

}  // namespace faithscope
