#include "faithscope/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "faithscope/engine.hpp"
#include "faithscope/rng.hpp"

namespace faithscope {

std::string_view to_string(MethodKind kind) noexcept {
  switch (kind) {
    case MethodKind::vanilla: return "vanilla";
    case MethodKind::cb: return "cb";
    case MethodKind::ie: return "ie";
    case MethodKind::db: return "db";
    case MethodKind::balor_s: return "balor_s";
    case MethodKind::balor_d: return "balor_d";
  }
  return "vanilla";
}

MethodKind method_kind_from_string(std::string_view s) {
  std::string k;
  for (char c : s) k.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "vanilla") return MethodKind::vanilla;
  if (k == "cb") return MethodKind::cb;
  if (k == "ie") return MethodKind::ie;
  if (k == "db") return MethodKind::db;
  if (k == "balor_s") return MethodKind::balor_s;
  if (k == "balor_d") return MethodKind::balor_d;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

std::string_view to_string(OptionOrder order) noexcept {
  return order == OptionOrder::original ? "original" : "swapped";
}

MethodSpec MethodSpec::make(MethodKind kind, double alpha) {
  MethodSpec m;
  m.kind = kind;
  switch (kind) {
    case MethodKind::cb: m.prefix = kPrefixCB; break;
    case MethodKind::ie: m.prefix = kPrefixIE; break;
    case MethodKind::db: m.prefix = kPrefixDB; break;
    case MethodKind::balor_s:
    case MethodKind::balor_d:
      m.balor = BalorConfig{};
      m.balor->alpha = alpha;
      m.balor->mode = kind == MethodKind::balor_s ? BalorMode::shared : BalorMode::divided;
      break;
    case MethodKind::vanilla: break;
  }
  return m;
}

void MethodSpec::validate() const {
  const bool prefixed = kind == MethodKind::cb || kind == MethodKind::ie || kind == MethodKind::db;
  const bool contrastive = kind == MethodKind::balor_s || kind == MethodKind::balor_d;
  FS_CHECK(prefixed == !prefix.empty(), ErrorCode::InvalidArgument, "prefix must be set exactly for cb, ie and db");
  FS_CHECK(contrastive == balor.has_value(), ErrorCode::InvalidArgument, "balor config must be set exactly for balor");
  if (balor) balor->validate();
}

void to_json(nlohmann::json& j, const ResponseRecord& r) {
  j = nlohmann::json{{"datapoint_id", r.datapoint_id},
                     {"order", to_string(r.order)},
                     {"prompt", r.prompt},
                     {"generated", r.generated},
                     {"matched", r.matched},
                     {"step_probabilities", r.step_probabilities}};
}

bool contains_word(std::string_view text, std::string_view word) {
  if (word.empty() || word.size() > text.size()) return false;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  for (std::size_t i = 0; i + word.size() <= text.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < word.size() && eq; ++k) eq = lower(text[i + k]) == lower(word[k]);
    if (!eq) continue;
    const bool left_ok = i == 0 || !is_word(text[i - 1]) || !is_word(word.front());
    const std::size_t end = i + word.size();
    const bool right_ok = end == text.size() || !is_word(text[end]) || !is_word(word.back());
    if (left_ok && right_ok) return true;
  }
  return false;
}

namespace {

std::vector<TokenId> option_tokens(const std::string& attribute, const Tokenizer& tok) {
  std::vector<TokenId> ids;
  try {
    ids = tok.encode(tok.mode() == TokenizerMode::bpe ? " " + attribute : attribute);
  } catch (const Error& e) {
    throw Error(ErrorCode::UnencodableText, "option '" + attribute + "': " + e.what());
  }
  FS_CHECK(!ids.empty(), ErrorCode::UnencodableText, "option '" + attribute + "' encodes to nothing");
  return ids;
}

BalorConfig decoding_config(const MethodSpec& method, const EvalConfig& cfg, std::uint64_t seed) {
  BalorConfig bc = method.balor.value_or(BalorConfig{});
  if (!method.balor) bc.alpha = 0.0;
  bc.sampling = cfg.sampling;
  bc.max_new_tokens = cfg.max_new_tokens;
  bc.precision = cfg.precision;
  bc.rng_seed = seed;
  return bc;
}

struct Unit {
  const Datapoint* d;
  OptionOrder order;
};

ResponseRecord run_unit(const Unit& u, const ModelBundle& bundle, const MethodSpec& method, const EvalConfig& cfg) {
  const Datapoint& d = *u.d;
  ResponseRecord rec;
  rec.datapoint_id = d.id;
  rec.order = u.order;
  const std::uint64_t seed =
      derive_seed(cfg.seed, d.id, u.order == OptionOrder::original ? 0 : 1);
  const BalorConfig bc = decoding_config(method, cfg, seed);
  const std::string source = d.source_prompt.empty() ? source_prompt_for(d) : d.source_prompt;

  std::string tmpl;
  if (cfg.shots > 0) {
    FS_CHECK(d.fewshot_target.has_value(), ErrorCode::InvalidArgument, d.id + ": few-shot prompt not rendered");
    tmpl = *d.fewshot_target;
  } else if (u.order == OptionOrder::original) {
    tmpl = d.target_prompt.empty() ? target_prompt_for(d, d.a_pri, d.a_sec) : d.target_prompt;
  } else {
    tmpl = d.target_prompt_swapped.empty() ? target_prompt_for(d, d.a_sec, d.a_pri) : d.target_prompt_swapped;
  }
  tmpl = method.prefix + tmpl;
  rec.prompt = tmpl;

  const auto plan = make_plan(source, d.noun, cfg.layer, tmpl, cfg.layer, bundle);
  std::optional<ContrastivePair> pair;
  if (method.balor) pair = build_contrastive(plan, bundle);

  if (cfg.shots > 0) {
    const DecodeResult res = pair ? decode(*pair, bundle, bc) : decode_vanilla(plan, bundle, bc);
    rec.generated = res.text;
    rec.matched = contains_word(res.text, d.a_sec);
    for (const auto& step : res.steps) {
      double p = 0.0;
      for (const auto& e : step.probabilities) {
        if (e.token == step.chosen) p = e.value;
      }
      rec.step_probabilities.push_back(p);
    }
    return rec;
  }

  const auto& tok = bundle.tokenizer();
  const std::vector<TokenId>* contra = pair ? &pair->contrastive_tokens : nullptr;
  auto score = [&](const std::string& option) {
    const auto lp = forced_log_probs(plan, bundle, option_tokens(option, tok), bc, contra);
    double s = 0.0;
    for (double v : lp) s += v;
    return s;
  };
  const double s_pri = score(d.a_pri);
  const double s_sec = score(d.a_sec);
  const double m = std::max(s_pri, s_sec);
  const double e_pri = std::exp(s_pri - m), e_sec = std::exp(s_sec - m);
  const double p_sec = e_sec / (e_pri + e_sec);
  rec.step_probabilities = {1.0 - p_sec, p_sec};
  bool pick_sec = false;
  if (cfg.sampling.temperature == 0.0) {
    pick_sec = s_sec > s_pri;
  } else {
    Rng rng(seed);
    pick_sec = rng.uniform() < p_sec;
  }
  rec.generated = pick_sec ? d.a_sec : d.a_pri;
  rec.matched = pick_sec;
  return rec;
}

}  // namespace

std::vector<ResponseRecord> run_method(const std::vector<Datapoint>& data, const ModelBundle& bundle,
                                       const MethodSpec& method, const EvalConfig& cfg) {
  method.validate();
  std::vector<Unit> units;
  for (const auto& d : data) {
    units.push_back({&d, OptionOrder::original});
    if (cfg.shots == 0) units.push_back({&d, OptionOrder::swapped});
  }
  std::vector<ResponseRecord> out(units.size());
  std::vector<std::exception_ptr> errors(units.size());
  std::atomic<std::size_t> next{0};
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, units.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < units.size(); i = next++) {
        try {
          out[i] = run_unit(units[i], bundle, method, cfg);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double compute_sr(const std::vector<ResponseRecord>& records) {
  FS_CHECK(!records.empty(), ErrorCode::EmptyRecords, "no records to score");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.matched; });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

ResultRow make_row(const std::vector<Datapoint>& data, const MethodSpec& method, const EvalConfig& cfg,
                   const std::vector<ResponseRecord>& records) {
  std::set<std::string> tasks;
  for (const auto& d : data) tasks.insert(std::string(to_string(d.task)));
  ResultRow row;
  row.task = tasks.size() == 1 ? *tasks.begin() : "mixed";
  row.model_id = cfg.model_id;
  row.method = method.name();
  row.alpha = method.balor ? method.balor->alpha : 0.0;
  row.temperature = cfg.sampling.temperature;
  row.shots = cfg.shots;
  row.sr = compute_sr(records);
  row.n = data.size();
  row.seed = cfg.seed;
  return row;
}

SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "temperature") return SweepAxis::temperature;
  throw Error(ErrorCode::InvalidArgument, "unknown sweep axis '" + std::string(s) + "'");
}

std::vector<ResultRow> sweep(const std::vector<Datapoint>& data, const ModelBundle& bundle, SweepAxis axis,
                             const std::vector<double>& grid, const MethodSpec& base, const EvalConfig& cfg) {
  FS_CHECK(!grid.empty(), ErrorCode::InvalidArgument, "sweep grid is empty");
  FS_CHECK(axis != SweepAxis::alpha || base.balor.has_value(), ErrorCode::InvalidArgument,
           "alpha sweeps need a balor method");
  std::vector<ResultRow> rows;
  for (double v : grid) {
    MethodSpec m = base;
    EvalConfig c = cfg;
    if (axis == SweepAxis::alpha) {
      m.balor->alpha = v;
    } else {
      c.sampling.temperature = v;
    }
    rows.push_back(make_row(data, m, c, run_method(data, bundle, m, c)));
  }
  return rows;
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  FS_CHECK(out.good(), ErrorCode::IoError, "cannot write " + path);
  out << "task,model_id,method,alpha,temperature,shots,sr,n,seed\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.task << ',' << r.model_id << ',' << r.method << ',' << r.alpha << ',' << r.temperature << ','
        << r.shots << ',' << r.sr << ',' << r.n << ',' << r.seed << '\n';
  }
}

void write_records_jsonl(const std::string& path, const std::vector<ResponseRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  FS_CHECK(out.good(), ErrorCode::IoError, "cannot write " + path);
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

}  // namespace faithscope
