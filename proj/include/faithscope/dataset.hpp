#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faithscope/model.hpp"

namespace faithscope {

enum class Task { color, gender, culture, age };
enum class Subset { unsplit, biased, nonbiased };

std::string_view to_string(Task t) noexcept;
std::string_view to_string(Subset s) noexcept;
Task task_from_string(std::string_view s);
Subset subset_from_string(std::string_view s);

struct CooccurrenceTable {
  std::map<std::string, std::map<std::string, std::size_t>> counts;  // noun -> attribute -> count
  std::size_t window_tokens = 16;
  std::string corpus_id;
};

/// Counts noun/attribute co-occurrences per sentence (split on . ! ? followed
/// by whitespace). Documents without any sentence terminator fall back to a
/// +/- `window` token span around each noun occurrence. Lexicon entries may
/// span several words.
CooccurrenceTable scan_corpus(const std::vector<std::string>& documents, const std::vector<std::string>& nouns,
                              const std::vector<std::string>& attributes, std::size_t window = 16,
                              std::string corpus_id = {});

/// Reads every regular file under `dir` (sorted by path) as one document.
std::vector<std::string> read_corpus_dir(const std::string& dir);

struct Datapoint {
  std::string id;
  Task task = Task::color;
  std::string category;  // relation within the task, e.g. "occupation" or "religion"
  std::string noun;
  std::string a_pri;
  std::string a_sec;
  std::optional<double> delta_f;
  std::string source_prompt;
  std::string target_prompt;          // a_pri listed first
  std::string target_prompt_swapped;  // a_sec listed first
  std::string contrastive_prompt;
  std::optional<std::string> fewshot_target;
  Subset subset = Subset::unsplit;

  friend bool operator==(const Datapoint&, const Datapoint&) = default;
};

void to_json(nlohmann::json& j, const Datapoint& d);
void from_json(const nlohmann::json& j, Datapoint& d);

struct AssignmentLog {
  std::vector<std::string> dropped;  // nouns with fewer than two attributes
};

/// a_pri = most frequent attribute, a_sec = second; ties broken
/// lexicographically. Prompts are left empty.
std::vector<Datapoint> assign_attributes(const CooccurrenceTable& table, Task task = Task::color,
                                         AssignmentLog* log = nullptr);

/// Fills source, target, swapped target and contrastive prompts; with
/// `shots > 0` also the few-shot target using exemplars (noun, a_sec) drawn
/// without replacement from other same-task entries of `pool`.
void render_prompts(Datapoint& d, std::size_t shots = 0, const std::vector<Datapoint>& pool = {},
                    std::uint64_t seed = 0);

/// Verbatim prompt texts.
std::string source_prompt_for(const Datapoint& d);
std::string target_prompt_for(const Datapoint& d, const std::string& first, const std::string& second);
std::string attribute_word(const Datapoint& d);

/// Summed log-probability of the attribute's tokens, force-decoded after `context`.
double score_choice(std::span<const TokenId> context, const std::string& attribute, const ModelBundle& bundle,
                    Precision precision = Precision::f32);

/// Answers an option-order question: returns the chosen option.
using Chooser = std::function<std::string(const Datapoint& d, const std::string& prompt, const std::string& first,
                                          const std::string& second)>;

/// Unpatched greedy choice: argmax of score_choice over the two options.
Chooser model_chooser(const ModelBundle& bundle, Precision precision = Precision::f32);

/// Easy-order prompt (a_pri first) and hard-order prompt (a_sec first) used for splitting.
std::pair<std::string, std::string> split_prompts(const Datapoint& d);

struct BiasSplit {
  std::vector<Datapoint> biased;
  std::vector<Datapoint> nonbiased;
};

/// Biased iff the chooser picks a_pri under both option orders.
BiasSplit bias_split(const std::vector<Datapoint>& datapoints, const Chooser& chooser);

void write_jsonl(const std::string& path, const std::vector<Datapoint>& points);
std::vector<Datapoint> read_jsonl(const std::string& path);

std::vector<std::string> read_lexicon(const std::string& path);

/// Datapoints given directly as (noun, a_pri, a_sec, category) records, for
/// tasks whose attribute pairs come from an external relation dataset.
std::vector<Datapoint> datapoints_from_pairs(const nlohmann::json& pairs, Task task);

}  // namespace faithscope
