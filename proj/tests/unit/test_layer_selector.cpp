#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "faithscope/errors.hpp"
#include "faithscope/layer_selector.hpp"
#include "faithscope/rng.hpp"
#include "oracle/naive_forward.hpp"
#include "test_helpers.hpp"

using namespace faithscope;

namespace {

const ModelBundle& rigged() {
  static const ModelBundle b = make_toy_model(7, toy_config(), testing_support::color_rig());
  return b;
}

Datapoint color_point(const std::string& noun, const std::string& pri, const std::string& sec) {
  Datapoint d;
  d.task = Task::color;
  d.noun = noun;
  d.a_pri = pri;
  d.a_sec = sec;
  d.id = "color-" + noun;
  render_prompts(d);
  return d;
}

std::vector<Datapoint> small_set() {
  return {color_point("broccoli", "green", "purple"), color_point("carrot", "orange", "purple"),
          color_point("banana", "yellow", "green"), color_point("tomato", "red", "green")};
}

std::vector<LayerScore> table(const std::vector<double>& ld, const std::vector<double>& gsa) {
  std::vector<LayerScore> s(ld.size());
  for (std::size_t i = 0; i < ld.size(); ++i) s[i] = {i, ld[i], gsa[i]};
  return s;
}

double cosine_abs(const std::vector<double>& a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::abs(ab) / std::sqrt(aa * bb);
}

}  // namespace

TEST(Selection, PicksHighestCombined) {
  auto s = table({0.2, 0.8, 0.5}, {0.0, 0.0, 0.0});
  EXPECT_EQ(select_layer(s, 1.0), 1u);
  EXPECT_DOUBLE_EQ(s[0].ld_norm, 0.0);
  EXPECT_DOUBLE_EQ(s[1].ld_norm, 1.0);
  EXPECT_DOUBLE_EQ(s[2].ld_norm, 0.5);
  EXPECT_DOUBLE_EQ(s[0].gsa_norm, 0.5);
}

TEST(Selection, TiesGoToLowestLayer) {
  auto s = table({1.0, 1.0, 1.0}, {2.0, 2.0, 2.0});
  EXPECT_EQ(select_layer(s, 0.8), 0u);
}

TEST(Selection, ExtremeWeightsReduceToSingleCriterion) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ld(6), gsa(6);
    for (auto& v : ld) v = rng.normal();
    for (auto& v : gsa) v = rng.uniform();
    auto s = table(ld, gsa);
    EXPECT_EQ(select_layer(s, 1.0), static_cast<std::size_t>(std::max_element(ld.begin(), ld.end()) - ld.begin()));
    EXPECT_EQ(select_layer(s, 0.0), static_cast<std::size_t>(std::max_element(gsa.begin(), gsa.end()) - gsa.begin()));
    for (const auto& row : s) {
      EXPECT_GE(row.combined, 0.0);
      EXPECT_LE(row.combined, 1.0);
    }
  }
}

TEST(Selection, InvalidInputs) {
  std::vector<LayerScore> empty;
  EXPECT_THROW(select_layer(empty, 0.5), Error);
  auto s = table({1.0}, {1.0});
  EXPECT_THROW(select_layer(s, 1.5), Error);
  SelectionConfig cfg;
  cfg.layer_range = {{3, 1}};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Probe, SeparableDataLearned) {
  Rng rng(17);
  const std::vector<double> axis{1.0, -2.0, 0.5, 0.0, 1.5};
  std::vector<ProbeExample> ex;
  for (int i = 0; i < 200; ++i) {
    const bool pos = i % 2 == 0;
    std::vector<double> x(axis.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = (pos ? 1.0 : -1.0) * axis[k] + 0.3 * rng.normal();
    ex.push_back({x, pos ? "b" : "a"});
  }
  const auto probe = train_probe(ex);
  std::size_t correct = 0;
  for (const auto& e : ex) correct += probe.classes[probe.predict(e.x)] == e.label;
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(ex.size()), 0.99);

  std::vector<double> diff(axis.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = probe.direction(1)[k] - probe.direction(0)[k];
  EXPECT_GT(cosine_abs(diff, axis), 0.9);

  for (std::size_t i = 1; i < probe.losses.size(); ++i) EXPECT_LE(probe.losses[i], probe.losses[i - 1]);
}

TEST(Probe, DegenerateData) {
  try {
    train_probe({{{1.0}, "a"}, {{2.0}, "a"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateData);
  }
  EXPECT_THROW(train_probe({}), Error);
}

TEST(Gsa, StubGradientsGiveCosines) {
  const auto data = small_set();
  ProbeModel probe;
  probe.classes = {"green", "purple"};
  probe.weights = Matrix<double>(2, rigged().config().d_model);
  probe.bias = {0.0, 0.0};
  probe.weights.row(0)[0] = 1.0;
  probe.weights.row(1)[0] = 1.0;

  const auto parallel = [](const Datapoint&, const PatchPlan&, TokenId) {
    std::vector<double> g(32, 0.0);
    g[0] = -3.0;
    return std::vector<std::vector<double>>{g};
  };
  EXPECT_NEAR(compute_gsa(data, 1, rigged(), probe, parallel).value, 1.0, 1e-12);

  const auto orthogonal = [](const Datapoint&, const PatchPlan&, TokenId) {
    std::vector<double> g(32, 0.0);
    g[1] = 2.0;
    return std::vector<std::vector<double>>{g};
  };
  EXPECT_NEAR(compute_gsa(data, 1, rigged(), probe, orthogonal).value, 0.0, 1e-12);

  const auto zero = [](const Datapoint&, const PatchPlan&, TokenId) {
    return std::vector<std::vector<double>>{std::vector<double>(32, 0.0)};
  };
  const auto r = compute_gsa(data, 1, rigged(), probe, zero);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.skipped, data.size());

  probe.classes = {"blue", "white"};
  EXPECT_EQ(compute_gsa(data, 1, rigged(), probe, parallel).skipped, data.size());
}

TEST(Ld, MatchesOracleLens) {
  const auto data = small_set();
  const auto& tok = rigged().tokenizer();
  const auto& w = rigged().weights<double>();
  for (std::size_t layer = 0; layer <= 4; ++layer) {
    double expected = 0.0;
    for (const auto& d : data) {
      const auto tokens = tok.encode(ld_prompt(d));
      const auto ref = oracle::forward(rigged(), tokens);
      const auto& h = ref.hidden[layer].back();
      auto lens = [&](const std::string& a) {
        const auto row = w.unembedding.row(static_cast<std::size_t>(*tok.find(a)));
        double s = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) s += h[k] * row[k];
        return s;
      };
      expected += lens(d.a_sec) - lens(d.a_pri);
    }
    expected /= static_cast<double>(data.size());
    EXPECT_NEAR(compute_ld(data, layer, rigged()), expected, 1e-9) << "layer " << layer;
  }
}

TEST(Ld, PromptShape) {
  const auto d = color_point("broccoli", "green", "purple");
  EXPECT_EQ(ld_prompt(d), "Here is an purple broccoli. What color is broccoli?");
}

TEST(Ld, ZeroWhenUnembeddingRowsCoincide) {
  auto cfg = toy_config();
  auto base = make_toy_model(7, cfg);
  Weights<float> w = base.weights<float>();
  const auto& tok = base.tokenizer();
  const auto green = static_cast<std::size_t>(*tok.find("green"));
  const auto purple = static_cast<std::size_t>(*tok.find("purple"));
  for (std::size_t k = 0; k < w.unembedding.cols(); ++k) w.unembedding.row(purple)[k] = w.unembedding.row(green)[k];
  const ModelBundle same(base.config(), base.tokenizer(), w);
  EXPECT_EQ(compute_ld({color_point("broccoli", "green", "purple")}, 2, same), 0.0);
}

TEST(Gsa, EngineGradientMatchesFiniteDifferences) {
  const auto data = small_set();
  const std::size_t layer = 2;
  const auto probe = train_probe(probe_examples(data, layer, rigged()));
  const auto got = compute_gsa(data, layer, rigged(), probe);
  ASSERT_EQ(got.used, data.size());

  double expected = 0.0;
  const double eps = 1e-5;
  for (const auto& d : data) {
    const auto plan = make_plan(d.source_prompt, d.noun, layer, d.target_prompt, layer, rigged());
    const auto src = oracle::forward(rigged(), plan.source.tokens);
    const std::size_t pos = plan.target.placeholder_positions.at(0);
    const auto base = src.hidden[layer][plan.source.positions.at(0)];
    const auto readout = static_cast<std::size_t>(*rigged().tokenizer().find(d.a_sec));
    auto f = [&](const oracle::Vec& v) {
      return oracle::log_prob(oracle::forward(rigged(), plan.target.tokens, {{{layer, pos}, v}}).logits.back(),
                              readout);
    };
    std::vector<double> g(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
      auto up = base, down = base;
      up[k] += eps;
      down[k] -= eps;
      g[k] = (f(up) - f(down)) / (2 * eps);
    }
    expected += cosine_abs(g, probe.direction(*probe.class_index(d.a_sec)));
  }
  expected /= static_cast<double>(data.size());
  EXPECT_NEAR(got.value, expected, 1e-3);
}

TEST(Scan, ReportsEveryLayerAndJson) {
  const auto data = small_set();
  SelectionConfig cfg;
  cfg.layer_range = {{1, 3}};
  const auto scan = scan_layers(data, data, rigged(), cfg);
  ASSERT_EQ(scan.scores.size(), 3u);
  EXPECT_GE(scan.chosen, 1u);
  EXPECT_LE(scan.chosen, 3u);
  EXPECT_TRUE(scan.probe_available);
  const nlohmann::json j = scan;
  EXPECT_EQ(j.at("chosen_layer").get<std::size_t>(), scan.chosen);

  cfg.jobs = 3;
  const auto threaded = scan_layers(data, data, rigged(), cfg);
  EXPECT_EQ(threaded.chosen, scan.chosen);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(threaded.scores[i].combined, scan.scores[i].combined);
}
