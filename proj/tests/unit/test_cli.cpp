#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "faithscope/cli.hpp"
#include "test_helpers.hpp"

using namespace faithscope;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "faithscope");
  return run_command(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data_path(const std::string& rel) { return std::string(FAITHSCOPE_SOURCE_DIR) + "/data/" + rel; }

double sr_of(const fs::path& csv, const std::string& method) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() == 9 && cells[2] == method) return std::stod(cells[6]);
  }
  ADD_FAILURE() << "method " << method << " not in " << csv;
  return -1;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({"no-such-command"}), kExitUsage);
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"decode", "--layer", "x"}), kExitUsage);
}

TEST(Cli, PipelineErrorExitCode) {
  const auto dir = testing_support::temp_dir("cli_missing");
  EXPECT_EQ(run({"bias-split", "--model", (dir / "absent").string(), "--dataset", (dir / "absent.jsonl").string(),
                 "--out-dir", (dir / "out").string()}),
            kExitPipelineError);
}

TEST(Cli, GenToyIsDeterministic) {
  const auto dir = testing_support::temp_dir("cli_gen");
  ASSERT_EQ(run({"gen-toy", "--seed", "7", "--rig", "--out-dir", (dir / "a").string()}), kExitOk);
  ASSERT_EQ(run({"gen-toy", "--seed", "7", "--rig", "--out-dir", (dir / "b").string()}), kExitOk);
  EXPECT_EQ(slurp(dir / "a" / "model.fptl"), slurp(dir / "b" / "model.fptl"));
  EXPECT_EQ(slurp(dir / "a" / "vocab.json"), slurp(dir / "b" / "vocab.json"));
  const auto cfg = json::parse(slurp(dir / "a" / "config.json"));
  EXPECT_EQ(cfg.at("command"), "gen-toy");
}

TEST(Cli, EndToEndBiasedSubset) {
  const auto dir = testing_support::temp_dir("cli_e2e");
  const auto model = (dir / "model").string();
  ASSERT_EQ(run({"gen-toy", "--seed", "7", "--rig", "--out-dir", model}), kExitOk);
  ASSERT_EQ(run({"build-dataset", "--corpus", data_path("corpus/mini"), "--nouns", data_path("lexicons/color_nouns.json"),
                 "--attributes", data_path("lexicons/colors.json"), "--task", "color", "--out-dir",
                 (dir / "ds").string()}),
            kExitOk);
  ASSERT_EQ(run({"bias-split", "--model", model, "--dataset", (dir / "ds" / "dataset.jsonl").string(), "--out-dir",
                 (dir / "split").string()}),
            kExitOk);
  const auto summary = json::parse(slurp(dir / "split" / "split_summary.json"));
  ASSERT_GT(summary.at("biased").get<int>(), 0);
  ASSERT_EQ(run({"evaluate", "--model", model, "--dataset", (dir / "split" / "biased.jsonl").string(), "--methods",
                 "vanilla,balor_s", "--alpha", "1", "--layer", "1", "--out-dir", (dir / "eval").string()}),
            kExitOk);
  EXPECT_GE(sr_of(dir / "eval" / "results.csv", "balor_s"), sr_of(dir / "eval" / "results.csv", "vanilla"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "records_vanilla.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "summary.json"));
}

TEST(Cli, ConfigFileFillsMissingOptions) {
  const auto dir = testing_support::temp_dir("cli_config");
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"seed": 3, "gen-toy": {"n-layers": 2}, "log-level": "error"})";
  }
  ASSERT_EQ(run({"gen-toy", "--config", (dir / "cfg.json").string(), "--out-dir", (dir / "m").string()}), kExitOk);
  const auto snap = json::parse(slurp(dir / "m" / "config.json"));
  const auto& opts = snap.at("options");
  EXPECT_EQ(opts.at("n-layers"), "2") << snap.dump();
  EXPECT_EQ(opts.at("seed"), "3");
  // an explicit flag wins over the file
  ASSERT_EQ(run({"gen-toy", "--config", (dir / "cfg.json").string(), "--n-layers", "3", "--out-dir",
                 (dir / "m3").string()}),
            kExitOk);
  EXPECT_NE(slurp(dir / "m" / "model.fptl"), slurp(dir / "m3" / "model.fptl"));
}

TEST(Cli, StatsSubcommands) {
  const auto dir = testing_support::temp_dir("cli_stats");
  {
    std::ofstream csv(dir / "t.csv");
    csv << "x,y,g\n1,5,a\n2,2,a\n3,4,b\n4,1,b\n5,3,c\n";
  }
  const auto in = (dir / "t.csv").string();
  ASSERT_EQ(run({"stats", "spearman", "--input", in, "--x", "x", "--y", "y", "--out-dir", (dir / "s").string()}),
            kExitOk);
  const auto r = json::parse(slurp(dir / "s" / "stats_spearman.json"));
  EXPECT_NEAR(r.at("rho").get<double>(), -0.5, 1e-12);
  EXPECT_EQ(run({"stats", "isotonic", "--input", in, "--x", "x", "--y", "y"}), kExitOk);
  EXPECT_EQ(run({"stats", "kruskal", "--input", in, "--group", "g", "--value", "y"}), kExitOk);
  EXPECT_EQ(run({"stats", "spearman", "--input", in, "--x", "x", "--y", "missing"}), kExitPipelineError);
}
