#include "faithscope/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "faithscope/engine.hpp"
#include "faithscope/logging.hpp"
#include "faithscope/patchscope.hpp"
#include "faithscope/rng.hpp"

namespace faithscope {

std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::color: return "color";
    case Task::gender: return "gender";
    case Task::culture: return "culture";
    case Task::age: return "age";
  }
  return "color";
}

std::string_view to_string(Subset s) noexcept {
  switch (s) {
    case Subset::unsplit: return "unsplit";
    case Subset::biased: return "biased";
    case Subset::nonbiased: return "nonbiased";
  }
  return "unsplit";
}

Task task_from_string(std::string_view s) {
  if (s == "color") return Task::color;
  if (s == "gender") return Task::gender;
  if (s == "culture") return Task::culture;
  if (s == "age") return Task::age;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

Subset subset_from_string(std::string_view s) {
  if (s == "unsplit") return Subset::unsplit;
  if (s == "biased") return Subset::biased;
  if (s == "nonbiased") return Subset::nonbiased;
  throw Error(ErrorCode::InvalidArgument, "unknown subset '" + std::string(s) + "'");
}

namespace {

using Words = std::vector<std::string>;

Words split_words(std::string_view text) {
  Words words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'' || ch == '-' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Sentences end at . ! ? followed by whitespace or end of text.
std::vector<std::string_view> split_sentences(std::string_view text, bool& found_terminator) {
  std::vector<std::string_view> out;
  found_terminator = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      found_terminator = true;
      out.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

std::vector<std::size_t> occurrences(const Words& words, const Words& phrase) {
  std::vector<std::size_t> hits;
  if (phrase.empty() || phrase.size() > words.size()) return hits;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) hits.push_back(i);
  }
  return hits;
}

struct Lexeme {
  std::string key;
  Words words;
};

std::vector<Lexeme> prepare_lexicon(const std::vector<std::string>& entries) {
  std::vector<Lexeme> out;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    Words w = split_words(e);
    if (w.empty()) continue;
    std::string key;
    for (const auto& part : w) key += (key.empty() ? "" : " ") + part;
    if (seen.insert(key).second) out.push_back({key, std::move(w)});
  }
  return out;
}

std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(std::isspace(static_cast<unsigned char>(c)) ? '_' : c);
  return out;
}

std::string fill(std::string text, std::string_view key, std::string_view value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

// Gender word substituted into source prompts.
std::string gender_word(const std::string& category, const std::string& pronoun) {
  const bool female = pronoun == "She" || pronoun == "she";
  if (category == "name") return female ? "She" : "He";
  if (category == "degree") return female ? "female" : "male";
  return female ? "woman" : "man";
}

std::string contrastive_of(const std::string& target, const std::string& noun) {
  return fill(target, kPlaceholder, noun);
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

CooccurrenceTable scan_corpus(const std::vector<std::string>& documents, const std::vector<std::string>& nouns,
                              const std::vector<std::string>& attributes, std::size_t window, std::string corpus_id) {
  CooccurrenceTable table;
  table.window_tokens = window;
  table.corpus_id = std::move(corpus_id);
  const auto noun_lex = prepare_lexicon(nouns);
  const auto attr_lex = prepare_lexicon(attributes);
  if (documents.empty()) {
    log_event("warn", "empty_corpus", {{"corpus_id", table.corpus_id}});
    return table;
  }

  for (const auto& doc : documents) {
    bool has_terminator = false;
    const auto sentences = split_sentences(doc, has_terminator);
    if (has_terminator) {
      for (auto sentence : sentences) {
        const Words words = split_words(sentence);
        std::vector<const Lexeme*> present_attrs;
        for (const auto& a : attr_lex) {
          if (!occurrences(words, a.words).empty()) present_attrs.push_back(&a);
        }
        if (present_attrs.empty()) continue;
        for (const auto& n : noun_lex) {
          if (occurrences(words, n.words).empty()) continue;
          for (const auto* a : present_attrs) {
            if (a->key != n.key) ++table.counts[n.key][a->key];
          }
        }
      }
      continue;
    }
    // No sentence boundaries: count attributes within the window around each noun occurrence.
    const Words words = split_words(doc);
    for (const auto& n : noun_lex) {
      for (std::size_t start : occurrences(words, n.words)) {
        const std::size_t lo = start >= window ? start - window : 0;
        const std::size_t hi = start + n.words.size() + window;
        for (const auto& a : attr_lex) {
          if (a.key == n.key) continue;
          for (std::size_t pos : occurrences(words, a.words)) {
            const bool overlaps_noun = pos + a.words.size() > start && pos < start + n.words.size();
            if (pos >= lo && pos < hi && !overlaps_noun) {
              ++table.counts[n.key][a.key];
              break;
            }
          }
        }
      }
    }
  }
  return table;
}

std::vector<std::string> read_corpus_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  FS_CHECK(fs::is_directory(dir), ErrorCode::IoError, "corpus directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> docs;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    docs.push_back(ss.str());
  }
  return docs;
}

std::vector<Datapoint> assign_attributes(const CooccurrenceTable& table, Task task, AssignmentLog* log) {
  std::vector<Datapoint> out;
  for (const auto& [noun, counts] : table.counts) {
    if (counts.size() < 2) {
      if (log) log->dropped.push_back(noun);
      log_event("info", "noun_dropped", {{"noun", noun}, {"attributes", counts.size()}});
      continue;
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Datapoint d;
    d.task = task;
    d.noun = noun;
    d.a_pri = ranked[0].first;
    d.a_sec = ranked[1].first;
    d.delta_f = static_cast<double>(ranked[0].second) - static_cast<double>(ranked[1].second);
    d.id = std::string(to_string(task)) + "-" + slug(noun);
    out.push_back(std::move(d));
  }
  return out;
}

std::string attribute_word(const Datapoint& d) {
  if (d.task == Task::culture && !d.category.empty()) return d.category;
  return std::string(to_string(d.task));
}

std::string source_prompt_for(const Datapoint& d) {
  switch (d.task) {
    case Task::color:
      return "Here is an " + d.a_sec + " " + d.noun + ".";
    case Task::culture:
      return "Here is a " + d.a_sec + " " + d.noun + ".";
    case Task::age:
      return "Here is an exceptional " + d.a_sec + " " + d.noun + ".";
    case Task::gender: {
      const std::string g = gender_word(d.category, d.a_sec);
      if (d.category == "occupation") return "This is an exceptional " + d.noun + " " + g + ".";
      if (d.category == "name") return g + " has the name " + d.noun + ".";
      if (d.category == "degree") return "This is a " + g + " outstanding student in department of " + d.noun + ".";
      return "This " + g + " is a " + d.noun + " person.";
    }
  }
  return {};
}

std::string target_prompt_for(const Datapoint& d, const std::string& first, const std::string& second) {
  const std::string x(kPlaceholder);
  if (d.task != Task::gender) return "The " + attribute_word(d) + " of " + x + " is " + first + " or " + second + "?";
  const std::string head = "Replace ? with \"" + first + "\" or \"" + second + "\". ";
  if (d.category == "occupation") return head + "? is an exceptional " + x + ".";
  if (d.category == "name") return head + "? has the name " + x + ".";
  if (d.category == "degree") return head + "? stands out in the department of " + x + ".";
  return head + "? is a " + x + " person.";
}

void render_prompts(Datapoint& d, std::size_t shots, const std::vector<Datapoint>& pool, std::uint64_t seed) {
  FS_CHECK(d.a_pri != d.a_sec, ErrorCode::InvalidArgument, d.id + ": a_pri equals a_sec");
  d.source_prompt = source_prompt_for(d);
  d.target_prompt = target_prompt_for(d, d.a_pri, d.a_sec);
  d.target_prompt_swapped = target_prompt_for(d, d.a_sec, d.a_pri);
  d.contrastive_prompt = contrastive_of(d.target_prompt, d.noun);
  d.fewshot_target.reset();
  if (shots == 0) return;

  std::vector<const Datapoint*> candidates;
  for (const auto& p : pool) {
    if (p.task == d.task && p.noun != d.noun && p.id != d.id) candidates.push_back(&p);
  }
  FS_CHECK(candidates.size() >= shots, ErrorCode::InsufficientExemplars,
           d.id + ": needs " + std::to_string(shots) + " exemplars, pool has " + std::to_string(candidates.size()));
  Rng rng(derive_seed(seed, d.id));
  // Partial Fisher-Yates: first `shots` entries become the sample.
  for (std::size_t i = 0; i < shots; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  const std::string word = attribute_word(d);
  std::string text;
  for (std::size_t i = 0; i < shots; ++i) {
    text += (i == 0 ? "The " : "the ") + word + " of " + candidates[i]->noun + " is " + candidates[i]->a_sec + ", ";
  }
  text += "the " + word + " of " + std::string(kPlaceholder) + " is";
  d.fewshot_target = capitalize(text);
}

double score_choice(std::span<const TokenId> context, const std::string& attribute, const ModelBundle& bundle,
                    Precision precision) {
  const auto& tok = bundle.tokenizer();
  std::vector<TokenId> ids;
  try {
    ids = tok.encode(tok.mode() == TokenizerMode::bpe ? " " + attribute : attribute);
  } catch (const Error& e) {
    throw Error(ErrorCode::UnencodableText, "attribute '" + attribute + "': " + e.what());
  }
  FS_CHECK(!ids.empty(), ErrorCode::UnencodableText, "attribute '" + attribute + "' encodes to nothing");
  std::vector<TokenId> seq(context.begin(), context.end());
  double total = 0.0;
  for (TokenId t : ids) {
    const auto logits = last_logits(bundle, seq, {}, precision);
    total += log_softmax(logits)[t];
    seq.push_back(t);
  }
  return total;
}

Chooser model_chooser(const ModelBundle& bundle, Precision precision) {
  return [&bundle, precision](const Datapoint&, const std::string& prompt, const std::string& first,
                              const std::string& second) {
    const auto ctx = bundle.tokenizer().encode(prompt);
    const double s1 = score_choice(ctx, first, bundle, precision);
    const double s2 = score_choice(ctx, second, bundle, precision);
    return s2 > s1 ? second : first;
  };
}

std::pair<std::string, std::string> split_prompts(const Datapoint& d) {
  if (d.task == Task::color) {
    auto q = [&](const std::string& a, const std::string& b) {
      return "The color of a " + d.noun + " is " + a + " or " + b + "?";
    };
    return {q(d.a_pri, d.a_sec), q(d.a_sec, d.a_pri)};
  }
  return {contrastive_of(target_prompt_for(d, d.a_pri, d.a_sec), d.noun),
          contrastive_of(target_prompt_for(d, d.a_sec, d.a_pri), d.noun)};
}

BiasSplit bias_split(const std::vector<Datapoint>& datapoints, const Chooser& chooser) {
  BiasSplit split;
  for (const auto& d : datapoints) {
    const auto [easy, hard] = split_prompts(d);
    const bool easy_pri = chooser(d, easy, d.a_pri, d.a_sec) == d.a_pri;
    const bool hard_pri = chooser(d, hard, d.a_sec, d.a_pri) == d.a_pri;
    Datapoint copy = d;
    copy.subset = easy_pri && hard_pri ? Subset::biased : Subset::nonbiased;
    (copy.subset == Subset::biased ? split.biased : split.nonbiased).push_back(std::move(copy));
  }
  return split;
}

namespace {

nlohmann::ordered_json ordered(const Datapoint& d) {
  nlohmann::ordered_json j;
  j["id"] = d.id;
  j["task"] = to_string(d.task);
  j["category"] = d.category;
  j["noun"] = d.noun;
  j["a_pri"] = d.a_pri;
  j["a_sec"] = d.a_sec;
  j["delta_f"] = d.delta_f ? nlohmann::ordered_json(*d.delta_f) : nlohmann::ordered_json(nullptr);
  j["source_prompt"] = d.source_prompt;
  j["target_prompt"] = d.target_prompt;
  j["target_prompt_swapped"] = d.target_prompt_swapped;
  j["contrastive_prompt"] = d.contrastive_prompt;
  j["fewshot_target"] = d.fewshot_target ? nlohmann::ordered_json(*d.fewshot_target) : nlohmann::ordered_json(nullptr);
  j["subset"] = to_string(d.subset);
  return j;
}

}  // namespace

void to_json(nlohmann::json& j, const Datapoint& d) { j = nlohmann::json::parse(ordered(d).dump()); }

void from_json(const nlohmann::json& j, Datapoint& d) {
  d.id = j.at("id").get<std::string>();
  d.task = task_from_string(j.at("task").get<std::string>());
  d.category = j.value("category", "");
  d.noun = j.at("noun").get<std::string>();
  d.a_pri = j.at("a_pri").get<std::string>();
  d.a_sec = j.at("a_sec").get<std::string>();
  d.delta_f = j.contains("delta_f") && !j["delta_f"].is_null() ? std::optional<double>(j["delta_f"].get<double>())
                                                                : std::nullopt;
  d.source_prompt = j.value("source_prompt", "");
  d.target_prompt = j.value("target_prompt", "");
  d.target_prompt_swapped = j.value("target_prompt_swapped", "");
  d.contrastive_prompt = j.value("contrastive_prompt", "");
  d.fewshot_target = j.contains("fewshot_target") && !j["fewshot_target"].is_null()
                         ? std::optional<std::string>(j["fewshot_target"].get<std::string>())
                         : std::nullopt;
  d.subset = subset_from_string(j.value("subset", "unsplit"));
}

void write_jsonl(const std::string& path, const std::vector<Datapoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  FS_CHECK(out.good(), ErrorCode::IoError, "cannot write " + path);
  for (const auto& d : points) out << ordered(d).dump() << '\n';
}

std::vector<Datapoint> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  FS_CHECK(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<Datapoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<Datapoint>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> read_lexicon(const std::string& path) {
  std::ifstream in(path);
  FS_CHECK(in.good(), ErrorCode::IoError, "cannot open lexicon " + path);
  try {
    return nlohmann::json::parse(in).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "lexicon " + path + " must be a JSON array of strings: " + e.what());
  }
}

std::vector<Datapoint> datapoints_from_pairs(const nlohmann::json& pairs, Task task) {
  FS_CHECK(pairs.is_array(), ErrorCode::InvalidArgument, "pairs must be a JSON array");
  std::vector<Datapoint> out;
  for (const auto& p : pairs) {
    Datapoint d;
    d.task = task;
    d.category = p.value("category", "");
    d.noun = p.at("noun").get<std::string>();
    d.a_pri = p.at("a_pri").get<std::string>();
    d.a_sec = p.at("a_sec").get<std::string>();
    if (p.contains("delta_f") && !p["delta_f"].is_null()) d.delta_f = p["delta_f"].get<double>();
    d.id = std::string(to_string(task)) + "-" + (d.category.empty() ? "" : d.category + "-") + slug(d.noun);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace faithscope
