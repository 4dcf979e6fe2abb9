#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "faithscope/balor.hpp"
#include "faithscope/errors.hpp"
#include "faithscope/rng.hpp"
#include "test_helpers.hpp"

using namespace faithscope;

namespace {

const ModelBundle& rigged() {
  static const ModelBundle b = make_toy_model(7, toy_config(), testing_support::color_rig());
  return b;
}

PatchPlan color_plan(std::size_t layer = 1) {
  return make_plan("Here is an purple broccoli.", "broccoli", layer, "The color of {x} is", layer, rigged());
}

}  // namespace

TEST(Balor, HandRecalibration) {
  const std::vector<double> t{2.0, 1.0};
  const std::vector<double> c{3.0, 0.0};
  // z = 2t - c = [1, 2]
  const auto p = recalibrate(t, c, 1.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(1.0)), 1e-12);
  EXPECT_NEAR(p[1], 0.7310585786300049, 1e-12);
}

TEST(Balor, AlphaZeroIsPlainSoftmax) {
  const std::vector<double> t{0.3, -1.2, 2.5, 0.0};
  const std::vector<double> c{5.0, 1.0, -3.0, 2.0};
  const auto p = recalibrate(t, c, 0.0);
  const auto q = softmax(t);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p[i], q[i]);
}

TEST(Balor, IdenticalLogitsAreFixedPoint) {
  Rng rng(3);
  std::vector<double> t(9);
  for (double& v : t) v = rng.normal();
  const auto q = softmax(t);
  for (double alpha : {0.5, 1.0, 4.0}) {
    const auto p = recalibrate(t, t, alpha);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Balor, LogOddsDecompositionHoldsOnRandomVectors) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> t(12), c(12);
    for (double& v : t) v = 3.0 * rng.normal();
    for (double& v : c) v = 3.0 * rng.normal();
    const double alpha = 5.0 * rng.uniform();
    const auto y1 = static_cast<std::size_t>(rng.below(12));
    const auto y2 = (y1 + 1 + rng.below(11)) % 12;
    const auto lo = log_odds_decomposition(t, c, alpha, y1, y2);
    EXPECT_NEAR(lo.lhs, lo.rhs, 1e-9);
  }
}

TEST(Balor, FlipThresholdHand) {
  // dT = -1, dT* = -4: log-odds = (1 + a)(-1) + 4a = 3a - 1.
  const std::vector<double> t{0.0, 1.0};
  const std::vector<double> c{0.0, 4.0};
  const auto a = flip_threshold(t, c, 0, 1);
  ASSERT_TRUE(a);
  EXPECT_NEAR(*a, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(log_odds_decomposition(t, c, *a, 0, 1).lhs, 0.0, 1e-12);
  EXPECT_GT(log_odds_decomposition(t, c, *a + 0.01, 0, 1).lhs, 0.0);
  EXPECT_LT(log_odds_decomposition(t, c, *a - 0.01, 0, 1).lhs, 0.0);
}

TEST(Balor, FlipThresholdEdges) {
  EXPECT_EQ(flip_threshold(std::vector<double>{2.0, 1.0}, std::vector<double>{0.0, 0.0}, 0, 1), 0.0);
  // contrast favours y1 even more than the target: no alpha helps
  EXPECT_FALSE(flip_threshold(std::vector<double>{0.0, 1.0}, std::vector<double>{2.0, 1.0}, 0, 1));
}

TEST(Balor, TopKAndTopP) {
  const std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
  SamplingConfig cfg;
  cfg.temperature = 1.0;
  cfg.top_k = 2;
  auto p = sampling_distribution(logits, cfg);
  EXPECT_NEAR(p[0], 0.625, 1e-12);
  EXPECT_NEAR(p[1], 0.375, 1e-12);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(p[3], 0.0);

  cfg.top_k.reset();
  cfg.top_p = 0.79;
  p = sampling_distribution(logits, cfg);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  EXPECT_EQ(p[2], 0.0);

  cfg.top_p = 0.81;
  p = sampling_distribution(logits, cfg);
  EXPECT_NEAR(p[2], 0.15 / 0.95, 1e-12);
  EXPECT_EQ(p[3], 0.0);
}

TEST(Balor, SamplingIsSeedDeterministic) {
  const std::vector<double> logits{0.1, 0.2, 0.3, 0.4, 0.5};
  SamplingConfig cfg;
  cfg.temperature = 1.0;
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_token(logits, cfg, a), select_token(logits, cfg, b));
}

TEST(Balor, ConfigValidation) {
  BalorConfig cfg;
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.alpha = 1.0;
  cfg.sampling.top_p = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(balor_mode_from_string("D"), BalorMode::divided);
  EXPECT_THROW(balor_mode_from_string("x"), Error);
}

TEST(Balor, ContrastiveRestoresNoun) {
  const auto plan = color_plan();
  const auto pair = build_contrastive(plan, rigged());
  const auto& tok = rigged().tokenizer();
  EXPECT_EQ(tok.decode(pair.contrastive_tokens), "The color of broccoli is");
  EXPECT_EQ(pair.target_tokens, plan.target.tokens);
}

TEST(Balor, AlphaZeroDecodeMatchesVanilla) {
  const auto plan = color_plan();
  BalorConfig cfg;
  cfg.alpha = 0.0;
  cfg.max_new_tokens = 4;
  cfg.precision = Precision::f64;
  const auto balor = decode(build_contrastive(plan, rigged()), rigged(), cfg);
  const auto vanilla = decode_vanilla(plan, rigged(), cfg);
  EXPECT_EQ(balor.generated, vanilla.generated);
}

TEST(Balor, StepLogitsFollowRecalibration) {
  const auto plan = color_plan();
  BalorConfig cfg;
  cfg.alpha = 2.0;
  cfg.max_new_tokens = 1;
  cfg.precision = Precision::f64;
  const auto pair = build_contrastive(plan, rigged());
  const auto r = decode(pair, rigged(), cfg);
  const auto hooks = std::vector<Hook<double>>{patch_hook<double>(plan, extract_hidden<double>(plan.source, rigged()))};
  const auto target_run = forward<double>(rigged(), plan.target.tokens, hooks);
  const auto contrastive_run = forward<double>(rigged(), pair.contrastive_tokens);
  const auto lt = target_run.last_logits();
  const auto lc = contrastive_run.last_logits();
  const auto z = recalibrated_logits({lt.begin(), lt.end()}, {lc.begin(), lc.end()}, 2.0);
  const auto best = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
  EXPECT_EQ(r.generated.at(0), best);
}

TEST(Balor, SharedModeMirrorsTokens) {
  BalorConfig cfg;
  cfg.max_new_tokens = 3;
  const auto pair = build_contrastive(color_plan(), rigged());
  const auto r = decode(pair, rigged(), cfg);
  const std::size_t base = pair.contrastive_tokens.size();
  ASSERT_EQ(r.contrastive_sequence.size(), base + r.generated.size());
  for (std::size_t i = 0; i < r.generated.size(); ++i) EXPECT_EQ(r.contrastive_sequence[base + i], r.generated[i]);
}

TEST(Balor, DividedModeFreezesAtEos) {
  auto rig = testing_support::color_rig();
  rig.biased_token = "<eos>";
  rig.bias_strength = 40.0;
  const auto bundle = make_toy_model(7, toy_config(), rig);
  const auto plan = make_plan("Here is an purple broccoli.", "broccoli", 1, "The color of {x} is", 1, bundle);
  BalorConfig cfg;
  cfg.mode = BalorMode::divided;
  cfg.max_new_tokens = 4;
  const auto pair = build_contrastive(plan, bundle);
  const auto r = decode(pair, bundle, cfg);
  EXPECT_TRUE(r.contrastive_frozen);
  EXPECT_EQ(r.contrastive_sequence, pair.contrastive_tokens);
}

TEST(Balor, ForcedLogProbsMatchDecodeDistribution) {
  const auto plan = color_plan();
  const auto pair = build_contrastive(plan, rigged());
  BalorConfig cfg;
  cfg.alpha = 1.5;
  cfg.precision = Precision::f64;
  const TokenId purple = *rigged().tokenizer().find("purple");
  const std::vector<TokenId> cont{purple};
  const auto lp = forced_log_probs(plan, rigged(), cont, cfg, &pair.contrastive_tokens);
  const auto hooks = std::vector<Hook<double>>{patch_hook<double>(plan, extract_hidden<double>(plan.source, rigged()))};
  const auto target_run = forward<double>(rigged(), plan.target.tokens, hooks);
  const auto contrastive_run = forward<double>(rigged(), pair.contrastive_tokens);
  const auto lt = target_run.last_logits();
  const auto lc = contrastive_run.last_logits();
  const auto ref = log_softmax(recalibrated_logits({lt.begin(), lt.end()}, {lc.begin(), lc.end()}, 1.5));
  EXPECT_NEAR(lp.at(0), ref[static_cast<std::size_t>(purple)], 1e-12);
}
