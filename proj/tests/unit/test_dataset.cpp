#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "faithscope/dataset.hpp"
#include "faithscope/errors.hpp"
#include "test_helpers.hpp"

using namespace faithscope;

namespace {

Datapoint color_point(const std::string& noun, const std::string& pri, const std::string& sec) {
  Datapoint d;
  d.task = Task::color;
  d.noun = noun;
  d.a_pri = pri;
  d.a_sec = sec;
  d.id = "color-" + noun;
  return d;
}

}  // namespace

TEST(Corpus, SentenceCounts) {
  const std::vector<std::string> docs{
      "The broccoli was green. A green broccoli again! Some purple broccoli here. No vegetable here."};
  const auto table = scan_corpus(docs, {"broccoli", "carrot"}, {"green", "purple", "orange"});
  ASSERT_EQ(table.counts.count("broccoli"), 1u);
  const auto& b = table.counts.at("broccoli");
  EXPECT_EQ(b.at("green"), 2u);
  EXPECT_EQ(b.at("purple"), 1u);
  EXPECT_EQ(b.count("orange"), 0u);
  EXPECT_EQ(table.counts.count("carrot"), 0u);
}

TEST(Corpus, SentenceBoundaryNeedsWhitespace) {
  // "3.5" is not a boundary, so green and carrot share one sentence.
  const auto table = scan_corpus({"green 3.5 carrot. purple."}, {"carrot"}, {"green", "purple"});
  EXPECT_EQ(table.counts.at("carrot").at("green"), 1u);
  EXPECT_EQ(table.counts.at("carrot").count("purple"), 0u);
}

TEST(Corpus, WindowModeWithoutTerminators) {
  const auto table = scan_corpus({"green a b c d broccoli e f g h i j purple"}, {"broccoli"}, {"green", "purple"}, 5);
  EXPECT_EQ(table.counts.at("broccoli").at("green"), 1u);
  EXPECT_EQ(table.counts.at("broccoli").count("purple"), 0u);
}

TEST(Corpus, MultiWordNoun) {
  const auto table = scan_corpus({"Pink ice cream is sweet. Cream is white."}, {"ice cream", "cream"},
                                 {"pink", "white"});
  EXPECT_EQ(table.counts.at("ice cream").at("pink"), 1u);
  EXPECT_EQ(table.counts.at("cream").at("white"), 1u);
}

TEST(Assignment, MostFrequentAndTies) {
  CooccurrenceTable t;
  t.counts["broccoli"] = {{"green", 5}, {"purple", 2}, {"white", 1}};
  t.counts["rose"] = {{"white", 3}, {"red", 3}, {"pink", 3}};
  t.counts["lonely"] = {{"gray", 9}};
  AssignmentLog log;
  const auto pts = assign_attributes(t, Task::color, &log);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].noun, "broccoli");
  EXPECT_EQ(pts[0].a_pri, "green");
  EXPECT_EQ(pts[0].a_sec, "purple");
  EXPECT_EQ(pts[0].delta_f, 3.0);
  EXPECT_EQ(pts[1].a_pri, "pink");
  EXPECT_EQ(pts[1].a_sec, "red");
  EXPECT_EQ(log.dropped, std::vector<std::string>{"lonely"});
}

TEST(Prompts, ColorVerbatim) {
  auto d = color_point("broccoli", "green", "purple");
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "Here is an purple broccoli.");
  EXPECT_EQ(d.target_prompt, "The color of {x} is green or purple?");
  EXPECT_EQ(d.target_prompt_swapped, "The color of {x} is purple or green?");
  EXPECT_EQ(d.contrastive_prompt, "The color of broccoli is green or purple?");
  EXPECT_FALSE(d.fewshot_target);
}

TEST(Prompts, GenderVerbatim) {
  Datapoint d;
  d.task = Task::gender;
  d.category = "occupation";
  d.noun = "nurse";
  d.a_pri = "She";
  d.a_sec = "He";
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "This is an exceptional nurse man.");
  EXPECT_EQ(d.target_prompt, "Replace ? with \"She\" or \"He\". ? is an exceptional {x}.");
  d.category = "name";
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "He has the name nurse.");
  d.category = "degree";
  d.a_sec = "She";
  d.a_pri = "He";
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "This is a female outstanding student in department of nurse.");
}

TEST(Prompts, CultureAndAge) {
  Datapoint d;
  d.task = Task::culture;
  d.category = "religion";
  d.noun = "temple";
  d.a_pri = "buddhist";
  d.a_sec = "hindu";
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "Here is a hindu temple.");
  EXPECT_EQ(d.target_prompt, "The religion of {x} is buddhist or hindu?");
  d.task = Task::age;
  d.category.clear();
  render_prompts(d);
  EXPECT_EQ(d.source_prompt, "Here is an exceptional hindu temple.");
  EXPECT_EQ(d.target_prompt, "The age of {x} is buddhist or hindu?");
}

TEST(Prompts, SameAttributesRejected) {
  auto d = color_point("broccoli", "green", "green");
  EXPECT_THROW(render_prompts(d), Error);
}

TEST(Prompts, FewShotDrawsOtherNouns) {
  std::vector<Datapoint> pool{color_point("broccoli", "green", "purple"), color_point("carrot", "orange", "purple"),
                              color_point("banana", "yellow", "green"), color_point("tomato", "red", "green")};
  auto d = pool[0];
  render_prompts(d, 2, pool, 9);
  ASSERT_TRUE(d.fewshot_target);
  const auto& text = *d.fewshot_target;
  EXPECT_EQ(text.rfind("The color of ", 0), 0u);
  EXPECT_NE(text.find(", the color of {x} is"), std::string::npos);
  EXPECT_EQ(text.find("broccoli"), std::string::npos);
  auto again = pool[0];
  render_prompts(again, 2, pool, 9);
  EXPECT_EQ(again.fewshot_target, d.fewshot_target);

  auto short_pool = pool[0];
  try {
    render_prompts(short_pool, 5, pool, 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientExemplars);
  }
}

TEST(Dataset, JsonlRoundTrip) {
  const auto dir = testing_support::temp_dir("dataset_jsonl");
  std::vector<Datapoint> pts{color_point("broccoli", "green", "purple"), color_point("ice cream", "white", "pink")};
  for (auto& p : pts) render_prompts(p);
  pts[0].delta_f = 4.0;
  pts[1].subset = Subset::biased;
  write_jsonl((dir / "d.jsonl").string(), pts);
  EXPECT_EQ(read_jsonl((dir / "d.jsonl").string()), pts);
}

TEST(Dataset, PairsLoad) {
  const auto j = nlohmann::json::parse(R"([{"noun":"nurse","a_pri":"She","a_sec":"He","category":"occupation"}])");
  const auto pts = datapoints_from_pairs(j, Task::gender);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].id, "gender-occupation-nurse");
}

TEST(BiasSplit, StubChoosers) {
  std::vector<Datapoint> pts{color_point("broccoli", "green", "purple"), color_point("carrot", "orange", "purple"),
                             color_point("rose", "red", "white")};
  for (auto& p : pts) render_prompts(p);
  const auto always_first = [](const Datapoint&, const std::string&, const std::string& a, const std::string&) {
    return a;
  };
  const auto always_pri = [](const Datapoint& d, const std::string&, const std::string&, const std::string&) {
    return d.a_pri;
  };
  auto s = bias_split(pts, always_first);
  EXPECT_TRUE(s.biased.empty());
  EXPECT_EQ(s.nonbiased.size(), 3u);
  s = bias_split(pts, always_pri);
  EXPECT_EQ(s.biased.size(), 3u);
  for (const auto& d : s.biased) EXPECT_EQ(d.subset, Subset::biased);
}

TEST(BiasSplit, PartitionProperty) {
  const auto bundle = make_toy_model(7, toy_config(), testing_support::color_rig());
  std::vector<Datapoint> pts{color_point("broccoli", "green", "purple"), color_point("carrot", "orange", "purple"),
                             color_point("banana", "yellow", "green")};
  for (auto& p : pts) render_prompts(p);
  const auto s = bias_split(pts, model_chooser(bundle));
  EXPECT_EQ(s.biased.size() + s.nonbiased.size(), pts.size());
  std::set<std::string> ids;
  for (const auto& d : s.biased) ids.insert(d.id);
  for (const auto& d : s.nonbiased) EXPECT_EQ(ids.count(d.id), 0u);
}

TEST(BiasSplit, SplitPromptsOrder) {
  auto d = color_point("broccoli", "green", "purple");
  const auto [easy, hard] = split_prompts(d);
  EXPECT_EQ(easy, "The color of a broccoli is green or purple?");
  EXPECT_EQ(hard, "The color of a broccoli is purple or green?");
}
