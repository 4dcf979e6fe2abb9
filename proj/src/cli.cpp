#include "faithscope/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "faithscope/balor.hpp"
#include "faithscope/dataset.hpp"
#include "faithscope/evaluator.hpp"
#include "faithscope/fptl.hpp"
#include "faithscope/layer_selector.hpp"
#include "faithscope/logging.hpp"
#include "faithscope/stats.hpp"

namespace faithscope {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kSubcommands = {"gen-toy", "select-layer", "build-dataset", "bias-split",
                                               "decode",  "evaluate",     "stats"};

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Common {
  std::string out_dir;
  std::string log_level = "warn";
  std::size_t jobs = default_jobs();
};

void add_common(CLI::App* sub, Common& c, bool needs_out_dir = true) {
  auto* o = sub->add_option("--out-dir", c.out_dir, "Directory for all outputs");
  if (needs_out_dir) o->required();
  sub->add_option("--log-level", c.log_level, "debug, info, warn, error or off");
  sub->add_option("--jobs", c.jobs, "Worker threads");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  FS_CHECK(out.good(), ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  FS_CHECK(in.good(), ErrorCode::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

// Resolved options of the active subcommand chain.
json snapshot(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = snapshot(sub);
  return j;
}

void prepare_out_dir(const Common& c, const CLI::App* sub, const std::string& command) {
  fs::create_directories(c.out_dir);
  json snap = snapshot(sub);
  json doc = {{"command", command}, {"version", FAITHSCOPE_VERSION}, {"options", snap}};
  write_json(fs::path(c.out_dir) / "config.json", doc);
}

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "32") return Precision::f32;
  if (s == "f64" || s == "64") return Precision::f64;
  throw Error(ErrorCode::InvalidArgument, "precision must be f32 or f64");
}

// ---- gen-toy -----------------------------------------------------------------

struct GenToyOpts {
  Common common;
  std::uint64_t seed = 7;
  bool rig = false;
  std::string biased_token = "green";
  double bias_strength = 5.0;
  std::vector<std::string> context_tokens;
  double embed_gain = 1.0;
  double read_gain = 2.0;
  ModelConfig config = toy_config();
};

int run_gen_toy(const GenToyOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "gen-toy");
  std::optional<BiasRig> rig;
  if (o.rig) {
    BiasRig r;
    r.biased_token = o.biased_token;
    r.bias_strength = o.bias_strength;
    r.context_embed_gain = o.embed_gain;
    r.context_read_gain = o.read_gain;
    r.context_tokens = o.context_tokens;
    if (r.context_tokens.empty()) {
      const auto colors = read_lexicon(std::string(FAITHSCOPE_DATA_DIR) + "/lexicons/colors.json");
      const auto tok = toy_tokenizer();
      for (const auto& c : colors) {
        if (tok.find(c)) r.context_tokens.push_back(c);
      }
    }
    rig = r;
  }
  const auto bundle = make_toy_model(o.seed, o.config, rig);
  save_bundle(bundle, o.common.out_dir);
  log_event("info", "toy_model_written", {{"dir", o.common.out_dir}, {"rigged", o.rig}});
  return kExitOk;
}

// ---- build-dataset -----------------------------------------------------------

struct BuildOpts {
  Common common;
  std::string corpus;
  std::string nouns;
  std::string attributes;
  std::string pairs;
  std::string task = "color";
  std::size_t window = 16;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
};

int run_build_dataset(const BuildOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "build-dataset");
  const Task task = task_from_string(o.task);
  std::vector<Datapoint> points;
  json meta = json::object();
  if (!o.pairs.empty()) {
    points = datapoints_from_pairs(read_json_file(o.pairs), task);
    meta["source"] = o.pairs;
  } else {
    FS_CHECK(!o.corpus.empty() && !o.nouns.empty() && !o.attributes.empty(), ErrorCode::InvalidArgument,
             "build-dataset needs --pairs or all of --corpus, --nouns, --attributes");
    const auto table = scan_corpus(read_corpus_dir(o.corpus), read_lexicon(o.nouns), read_lexicon(o.attributes),
                                   o.window, o.corpus);
    AssignmentLog log;
    points = assign_attributes(table, task, &log);
    json counts = json::object();
    for (const auto& [noun, attrs] : table.counts) counts[noun] = attrs;
    write_json(fs::path(o.common.out_dir) / "cooccurrence.json",
               {{"corpus_id", table.corpus_id}, {"window_tokens", table.window_tokens}, {"counts", counts}});
    meta["dropped"] = log.dropped;
  }
  for (auto& d : points) render_prompts(d, o.shots, points, o.seed);
  write_jsonl((fs::path(o.common.out_dir) / "dataset.jsonl").string(), points);
  meta["datapoints"] = points.size();
  write_json(fs::path(o.common.out_dir) / "dataset_summary.json", meta);
  log_event("info", "dataset_written", {{"datapoints", points.size()}});
  return kExitOk;
}

// ---- bias-split --------------------------------------------------------------

struct SplitOpts {
  Common common;
  std::string model;
  std::string dataset;
  std::string precision = "f32";
};

int run_bias_split(const SplitOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "bias-split");
  const auto bundle = load_bundle_dir(o.model);
  const auto data = read_jsonl(o.dataset);
  const auto split = bias_split(data, model_chooser(bundle, parse_precision(o.precision)));
  const fs::path dir(o.common.out_dir);
  write_jsonl((dir / "biased.jsonl").string(), split.biased);
  write_jsonl((dir / "nonbiased.jsonl").string(), split.nonbiased);
  std::vector<Datapoint> all = split.biased;
  all.insert(all.end(), split.nonbiased.begin(), split.nonbiased.end());
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  write_jsonl((dir / "split.jsonl").string(), all);
  write_json(dir / "split_summary.json", {{"biased", split.biased.size()}, {"nonbiased", split.nonbiased.size()}});
  return kExitOk;
}

// ---- select-layer ------------------------------------------------------------

struct SelectOpts {
  Common common;
  std::string model;
  std::string dataset;
  std::string probe_dataset;
  double w = 0.8;
  std::optional<std::size_t> layer_min;
  std::optional<std::size_t> layer_max;
  ProbeHyper probe;
};

std::vector<Datapoint> default_probe_data(const std::vector<Datapoint>& data) {
  std::vector<Datapoint> nonbiased;
  for (const auto& d : data) {
    if (d.subset == Subset::nonbiased) nonbiased.push_back(d);
  }
  return nonbiased.empty() ? data : nonbiased;
}

LayerScan scan(const ModelBundle& bundle, const std::vector<Datapoint>& data, const std::vector<Datapoint>& probe_data,
               double w, std::optional<std::size_t> lo, std::optional<std::size_t> hi, const ProbeHyper& probe,
               std::size_t jobs) {
  SelectionConfig cfg;
  cfg.weight_w = w;
  cfg.probe = probe;
  cfg.jobs = jobs;
  if (lo || hi) cfg.layer_range = {lo.value_or(0), hi.value_or(bundle.config().n_layers - 1)};
  return scan_layers(data, probe_data, bundle, cfg);
}

int run_select_layer(const SelectOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "select-layer");
  const auto bundle = load_bundle_dir(o.model);
  const auto data = read_jsonl(o.dataset);
  const auto probe_data = o.probe_dataset.empty() ? default_probe_data(data) : read_jsonl(o.probe_dataset);
  const auto result = scan(bundle, data, probe_data, o.w, o.layer_min, o.layer_max, o.probe, o.common.jobs);
  json j = result;
  write_json(fs::path(o.common.out_dir) / "layers.json", j);
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

// ---- decode ------------------------------------------------------------------

struct DecodeOpts {
  Common common;
  std::string model;
  std::string plan;
  std::string source;
  std::string noun;
  std::string target;
  std::size_t layer = 0;
  std::optional<std::size_t> target_layer;
  double alpha = 1.0;
  std::string mode = "shared";
  double temperature = 0.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::size_t max_new_tokens = 16;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  bool vanilla = false;
};

int run_decode(const DecodeOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "decode");
  const auto bundle = load_bundle_dir(o.model);
  PatchPlan plan;
  if (!o.plan.empty()) {
    plan = plan_from_json(read_json_file(o.plan), bundle);
  } else {
    FS_CHECK(!o.source.empty() && !o.noun.empty() && !o.target.empty(), ErrorCode::InvalidArgument,
             "decode needs --plan or --source, --noun and --target");
    plan = make_plan(o.source, o.noun, o.layer, o.target, o.target_layer.value_or(o.layer), bundle);
  }
  BalorConfig cfg;
  cfg.alpha = o.alpha;
  cfg.mode = balor_mode_from_string(o.mode);
  cfg.sampling = {o.temperature, o.top_k, o.top_p};
  cfg.max_new_tokens = o.max_new_tokens;
  cfg.rng_seed = o.seed;
  cfg.precision = parse_precision(o.precision);

  json out;
  out["plan"] = plan;
  const auto pair = build_contrastive(plan, bundle);
  const auto& tok = bundle.tokenizer();
  out["target_prompt"] = tok.decode(pair.target_tokens);
  out["contrastive_prompt"] = tok.decode(pair.contrastive_tokens);
  out["alpha"] = o.vanilla ? 0.0 : cfg.alpha;
  out["mode"] = o.vanilla ? "vanilla" : std::string(to_string(cfg.mode));
  out["result"] = o.vanilla ? decode_vanilla(plan, bundle, cfg) : decode(pair, bundle, cfg);
  write_json(fs::path(o.common.out_dir) / "decode.json", out);
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvalOpts {
  Common common;
  std::string model;
  std::string dataset;
  std::vector<std::string> methods{"vanilla", "balor"};
  double alpha = 1.0;
  std::string mode = "shared";
  std::string layer = "auto";
  double w = 0.8;
  std::string probe_dataset;
  std::size_t shots = 0;
  double temperature = 0.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 16;
  std::string precision = "f32";
  std::string sweep_axis;
  std::vector<double> grid;
  std::string model_id;
};

std::vector<MethodSpec> parse_methods(const EvalOpts& o) {
  std::vector<MethodSpec> out;
  for (const auto& name : o.methods) {
    std::stringstream ss(name);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      MethodKind kind;
      if (item == "balor") {
        kind = balor_mode_from_string(o.mode) == BalorMode::shared ? MethodKind::balor_s : MethodKind::balor_d;
      } else {
        kind = method_kind_from_string(item);
      }
      out.push_back(MethodSpec::make(kind, o.alpha));
    }
  }
  FS_CHECK(!out.empty(), ErrorCode::InvalidArgument, "no methods given");
  return out;
}

int run_evaluate(const EvalOpts& o, const CLI::App* sub) {
  prepare_out_dir(o.common, sub, "evaluate");
  const auto bundle = load_bundle_dir(o.model);
  auto data = read_jsonl(o.dataset);
  FS_CHECK(!data.empty(), ErrorCode::EmptyRecords, "dataset is empty");
  if (o.shots > 0) {
    for (auto& d : data) {
      if (!d.fewshot_target) render_prompts(d, o.shots, data, o.seed);
    }
  }
  const fs::path dir(o.common.out_dir);

  EvalConfig cfg;
  cfg.shots = o.shots;
  cfg.sampling = {o.temperature, o.top_k, o.top_p};
  cfg.seed = o.seed;
  cfg.max_new_tokens = o.max_new_tokens;
  cfg.precision = parse_precision(o.precision);
  cfg.jobs = o.common.jobs;
  cfg.model_id = o.model_id.empty() ? fs::path(o.model).filename().string() : o.model_id;
  if (cfg.model_id.empty()) cfg.model_id = "model";

  if (o.layer == "auto") {
    const auto result = scan(bundle, data, default_probe_data(data), o.w, std::nullopt, std::nullopt, ProbeHyper{},
                             o.common.jobs);
    cfg.layer = result.chosen;
    write_json(dir / "layers.json", json(result));
    log_event("info", "layer_selected", {{"layer", cfg.layer}});
  } else {
    try {
      cfg.layer = std::stoul(o.layer);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "--layer must be an integer or 'auto'");
    }
  }

  const auto methods = parse_methods(o);
  std::vector<ResultRow> rows;
  if (!o.sweep_axis.empty()) {
    const SweepAxis axis = sweep_axis_from_string(o.sweep_axis);
    EvalConfig sc = cfg;
    if (!sc.sampling.top_k) sc.sampling.top_k = 50;
    if (!sc.sampling.top_p) sc.sampling.top_p = 0.9;
    for (const auto& m : methods) {
      if (axis == SweepAxis::alpha && !m.balor) continue;
      const auto part = sweep(data, bundle, axis, o.grid, m, sc);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    write_results_csv((dir / "sweep.csv").string(), rows);
  } else {
    for (const auto& m : methods) {
      const auto records = run_method(data, bundle, m, cfg);
      write_records_jsonl((dir / ("records_" + m.name() + ".jsonl")).string(), records);
      rows.push_back(make_row(data, m, cfg, records));
    }
    write_results_csv((dir / "results.csv").string(), rows);
  }
  json summary = json::array();
  for (const auto& r : rows) {
    summary.push_back({{"method", r.method}, {"alpha", r.alpha}, {"temperature", r.temperature}, {"sr", r.sr},
                       {"n", r.n}});
  }
  write_json(dir / "summary.json",
             {{"layer", cfg.layer},
              {"shots", cfg.shots},
              {"matching_rule", cfg.shots == 0 ? "zero-shot: option score argmax, both orders"
                                               : "few-shot: case-insensitive whole-word containment, v1"},
              {"rows", summary}});
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

// ---- stats -------------------------------------------------------------------

// Rows of a CSV (with header), JSON array of objects, or JSON lines file.
std::vector<json> read_rows(const std::string& path) {
  std::ifstream in(path);
  FS_CHECK(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<json> rows;
  if (fs::path(path).extension() == ".csv") {
    std::string line;
    std::vector<std::string> header;
    auto split = [](const std::string& s) {
      std::vector<std::string> cells;
      std::stringstream ss(s);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (!s.empty() && s.back() == ',') cells.emplace_back();
      return cells;
    };
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (header.empty()) {
        header = split(line);
        continue;
      }
      const auto cells = split(line);
      json row = json::object();
      for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
      rows.push_back(std::move(row));
    }
    return rows;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    for (auto& r : json::parse(text)) rows.push_back(r);
    return rows;
  }
  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) rows.push_back(json::parse(line));
  }
  return rows;
}

double cell_value(const json& v, const std::string& col) {
  if (v.is_number()) return v.get<double>();
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "biased") return 1.0;
    if (s == "false" || s == "nonbiased") return 0.0;
    try {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::InvalidArgument, "column '" + col + "' holds a non-numeric value: " + v.dump());
}

std::vector<double> column(const std::vector<json>& rows, const std::string& col) {
  std::vector<double> out;
  for (const auto& r : rows) {
    FS_CHECK(r.contains(col), ErrorCode::InvalidArgument, "missing column '" + col + "'");
    out.push_back(cell_value(r[col], col));
  }
  return out;
}

struct StatsOpts {
  Common common;
  std::string input;
  std::string x;
  std::string y;
  std::string weights;
  std::string group;
  std::string value;
  std::size_t runs = 5;
  std::uint64_t seed = 0;
};

int emit_stats(const StatsOpts& o, const CLI::App* sub, const std::string& name, const json& report) {
  if (!o.common.out_dir.empty()) {
    prepare_out_dir(o.common, sub, "stats " + name);
    write_json(fs::path(o.common.out_dir) / ("stats_" + name + ".json"), report);
  }
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

std::vector<int> labels_of(const std::vector<double>& v) {
  std::vector<int> out;
  for (double d : v) {
    FS_CHECK(d == 0.0 || d == 1.0, ErrorCode::InvalidArgument, "label column must be binary");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

int run_stats(const std::string& which, const StatsOpts& o, const CLI::App* sub) {
  const auto rows = read_rows(o.input);
  if (which == "logistic") {
    const auto x = column(rows, o.x);
    const auto y = labels_of(column(rows, o.y));
    return emit_stats(o, sub, which, json(stats::repeated_undersampling(x, y, o.runs, o.seed)));
  }
  if (which == "auc") {
    const auto x = column(rows, o.x);
    const auto y = labels_of(column(rows, o.y));
    return emit_stats(o, sub, which, {{"auc", stats::roc_auc(x, y)}, {"n", x.size()}});
  }
  if (which == "spearman") {
    return emit_stats(o, sub, which, json(stats::spearman(column(rows, o.x), column(rows, o.y))));
  }
  if (which == "isotonic") {
    auto y = column(rows, o.y);
    std::vector<double> w = o.weights.empty() ? std::vector<double>{} : column(rows, o.weights);
    std::vector<double> xs;
    if (!o.x.empty()) {
      // Order by x before fitting.
      xs = column(rows, o.x);
      std::vector<std::size_t> idx(xs.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
      std::vector<double> ys2, ws2, xs2;
      for (auto i : idx) {
        xs2.push_back(xs[i]);
        ys2.push_back(y[i]);
        if (!w.empty()) ws2.push_back(w[i]);
      }
      xs = std::move(xs2), y = std::move(ys2), w = std::move(ws2);
    }
    json report = stats::isotonic_pava(y, w);
    if (!xs.empty()) report["x"] = xs;
    return emit_stats(o, sub, which, report);
  }
  if (which == "kruskal") {
    std::map<std::string, std::vector<double>> groups;
    std::vector<std::string> order;
    for (const auto& r : rows) {
      FS_CHECK(r.contains(o.group) && r.contains(o.value), ErrorCode::InvalidArgument, "missing group/value column");
      const std::string key = r[o.group].is_string() ? r[o.group].get<std::string>() : r[o.group].dump();
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(cell_value(r[o.value], o.value));
    }
    std::vector<std::vector<double>> g;
    for (const auto& k : order) g.push_back(groups[k]);
    json report = stats::kruskal_wallis(g);
    report["groups"] = order;
    return emit_stats(o, sub, which, report);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown stats command " + which);
}

// ---- config file -------------------------------------------------------------

// Removes --config from args and appends the file's entries for options not
// given on the command line. Keys are long option names without dashes; a
// nested object named after the subcommand is merged over the top level.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  json cfg = read_json_file(path);
  FS_CHECK(cfg.is_object(), ErrorCode::InvalidArgument, "config file must hold a JSON object");
  std::string command;
  for (std::size_t i = 1; i < args.size() && command.empty(); ++i) {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), args[i]) != kSubcommands.end()) command = args[i];
  }
  json flat = json::object();
  for (auto& [k, v] : cfg.items()) {
    if (!v.is_object()) flat[k] = v;
  }
  if (!command.empty() && cfg.contains(command) && cfg[command].is_object()) {
    for (auto& [k, v] : cfg[command].items()) flat[k] = v;
  }
  std::set<std::string> given;
  for (const auto& a : args) {
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos
                                                                                        : a.find('=') - 2));
  }
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (auto& [k, v] : flat.items()) {
    if (given.count(k) || v.is_null()) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back("--" + k);
      continue;
    }
    args.push_back("--" + k);
    if (v.is_array()) {
      for (const auto& e : v) args.push_back(scalar(e));
    } else {
      args.push_back(scalar(v));
    }
  }
  return args;
}

}  // namespace

int run_command(const std::vector<std::string>& raw_args) {
  CLI::App app{"Hidden-representation patching and contrastive decoding workbench", "faithscope"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FAITHSCOPE_VERSION);
  app.footer("Global: --config FILE reads option defaults from a JSON object.");

  GenToyOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Write a seeded toy model bundle");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--seed", gen.seed, "Initialization seed")->capture_default_str();
  gen_cmd->add_flag("--rig", gen.rig, "Plant a biased token and a context channel");
  gen_cmd->add_option("--biased-token", gen.biased_token)->capture_default_str();
  gen_cmd->add_option("--bias-strength", gen.bias_strength)->capture_default_str();
  gen_cmd->add_option("--context-tokens", gen.context_tokens, "Tokens with a context channel (default: colors)");
  gen_cmd->add_option("--embed-gain", gen.embed_gain)->capture_default_str();
  gen_cmd->add_option("--read-gain", gen.read_gain)->capture_default_str();
  gen_cmd->add_option("--n-layers", gen.config.n_layers)->capture_default_str();
  gen_cmd->add_option("--d-model", gen.config.d_model)->capture_default_str();
  gen_cmd->add_option("--n-heads", gen.config.n_heads)->capture_default_str();
  gen_cmd->add_option("--d-ff", gen.config.d_ff)->capture_default_str();
  gen_cmd->add_option("--max-seq", gen.config.max_seq)->capture_default_str();

  BuildOpts build;
  auto* build_cmd = app.add_subcommand("build-dataset", "Build datapoints from a corpus or attribute pairs");
  add_common(build_cmd, build.common);
  build_cmd->add_option("--corpus", build.corpus, "Directory of UTF-8 text files");
  build_cmd->add_option("--nouns", build.nouns, "JSON array of nouns");
  build_cmd->add_option("--attributes", build.attributes, "JSON array of attribute values");
  build_cmd->add_option("--pairs", build.pairs, "JSON array of {noun, a_pri, a_sec, category}");
  build_cmd->add_option("--task", build.task)->capture_default_str();
  build_cmd->add_option("--window", build.window)->capture_default_str();
  build_cmd->add_option("--shots", build.shots)->capture_default_str();
  build_cmd->add_option("--seed", build.seed)->capture_default_str();

  SplitOpts split;
  auto* split_cmd = app.add_subcommand("bias-split", "Split a dataset by option-swapping QA");
  add_common(split_cmd, split.common);
  split_cmd->add_option("--model", split.model, "Model bundle directory")->required();
  split_cmd->add_option("--dataset", split.dataset, "Dataset JSONL")->required();
  split_cmd->add_option("--precision", split.precision)->capture_default_str();

  SelectOpts sel;
  auto* sel_cmd = app.add_subcommand("select-layer", "Score layers by LD and GSA and pick the patching layer");
  add_common(sel_cmd, sel.common);
  sel_cmd->add_option("--model", sel.model)->required();
  sel_cmd->add_option("--dataset", sel.dataset)->required();
  sel_cmd->add_option("--probe-dataset", sel.probe_dataset, "Probe training data (default: nonbiased entries)");
  sel_cmd->add_option("--w", sel.w, "Weight of LD in the combined score")->capture_default_str();
  sel_cmd->add_option("--layer-min", sel.layer_min);
  sel_cmd->add_option("--layer-max", sel.layer_max);
  sel_cmd->add_option("--probe-epochs", sel.probe.epochs)->capture_default_str();
  sel_cmd->add_option("--probe-step", sel.probe.step)->capture_default_str();
  sel_cmd->add_option("--probe-l2", sel.probe.l2)->capture_default_str();

  DecodeOpts dec;
  auto* dec_cmd = app.add_subcommand("decode", "Patched decoding with optional logit recalibration");
  add_common(dec_cmd, dec.common);
  dec_cmd->add_option("--model", dec.model)->required();
  dec_cmd->add_option("--plan", dec.plan, "Patch plan JSON");
  dec_cmd->add_option("--source", dec.source);
  dec_cmd->add_option("--noun", dec.noun);
  dec_cmd->add_option("--target", dec.target, "Target template containing {x}");
  dec_cmd->add_option("--layer", dec.layer)->capture_default_str();
  dec_cmd->add_option("--target-layer", dec.target_layer);
  dec_cmd->add_option("--alpha", dec.alpha)->capture_default_str();
  dec_cmd->add_option("--mode", dec.mode)->capture_default_str();
  dec_cmd->add_option("--temperature", dec.temperature)->capture_default_str();
  dec_cmd->add_option("--top-k", dec.top_k);
  dec_cmd->add_option("--top-p", dec.top_p);
  dec_cmd->add_option("--max-new-tokens", dec.max_new_tokens)->capture_default_str();
  dec_cmd->add_option("--seed", dec.seed)->capture_default_str();
  dec_cmd->add_option("--precision", dec.precision)->capture_default_str();
  dec_cmd->add_flag("--vanilla", dec.vanilla, "Skip the contrastive pass");

  EvalOpts ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Run methods over a dataset and report show rates");
  add_common(ev_cmd, ev.common);
  ev_cmd->add_option("--model", ev.model)->required();
  ev_cmd->add_option("--dataset", ev.dataset)->required();
  ev_cmd->add_option("--methods", ev.methods, "vanilla, cb, ie, db, balor, balor_s, balor_d")->delimiter(',');
  ev_cmd->add_option("--alpha", ev.alpha)->capture_default_str();
  ev_cmd->add_option("--mode", ev.mode, "Mode used for 'balor'")->capture_default_str();
  ev_cmd->add_option("--layer", ev.layer, "Layer index or 'auto'")->capture_default_str();
  ev_cmd->add_option("--w", ev.w)->capture_default_str();
  ev_cmd->add_option("--probe-dataset", ev.probe_dataset);
  ev_cmd->add_option("--shots", ev.shots)->capture_default_str();
  ev_cmd->add_option("--temperature", ev.temperature)->capture_default_str();
  ev_cmd->add_option("--top-k", ev.top_k);
  ev_cmd->add_option("--top-p", ev.top_p);
  ev_cmd->add_option("--seed", ev.seed)->capture_default_str();
  ev_cmd->add_option("--max-new-tokens", ev.max_new_tokens)->capture_default_str();
  ev_cmd->add_option("--precision", ev.precision)->capture_default_str();
  ev_cmd->add_option("--sweep", ev.sweep_axis, "alpha or temperature");
  ev_cmd->add_option("--grid", ev.grid, "Sweep values")->delimiter(',');
  ev_cmd->add_option("--model-id", ev.model_id);

  StatsOpts st;
  auto* st_cmd = app.add_subcommand("stats", "Statistics over CSV or JSON columns");
  st_cmd->require_subcommand(1);
  std::map<std::string, CLI::App*> stat_cmds;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"logistic", "Repeated-undersampling logistic regression (--x, --y)"},
           {"auc", "ROC-AUC of --x scores against --y labels"},
           {"spearman", "Spearman correlation of --x and --y"},
           {"isotonic", "Isotonic fit of --y (ordered by --x if given)"},
           {"kruskal", "Kruskal-Wallis test of --value grouped by --group"}}) {
    auto* c = st_cmd->add_subcommand(name, help);
    add_common(c, st.common, false);
    c->add_option("--input", st.input, "CSV, JSON array or JSON lines")->required();
    c->add_option("--x", st.x);
    c->add_option("--y", st.y);
    c->add_option("--weights", st.weights);
    c->add_option("--group", st.group);
    c->add_option("--value", st.value);
    c->add_option("--runs", st.runs)->capture_default_str();
    c->add_option("--seed", st.seed)->capture_default_str();
    stat_cmds[name] = c;
  }

  std::vector<std::string> args;
  try {
    args = apply_config_file(raw_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const CLI::App* active = app.get_subcommands().front();
  auto common_of = [&]() -> const Common* {
    if (active == gen_cmd) return &gen.common;
    if (active == build_cmd) return &build.common;
    if (active == split_cmd) return &split.common;
    if (active == sel_cmd) return &sel.common;
    if (active == dec_cmd) return &dec.common;
    if (active == ev_cmd) return &ev.common;
    return &st.common;
  };
  try {
    set_log_level(log_level_from_string(common_of()->log_level));
    if (active == gen_cmd) return run_gen_toy(gen, gen_cmd);
    if (active == build_cmd) return run_build_dataset(build, build_cmd);
    if (active == split_cmd) return run_bias_split(split, split_cmd);
    if (active == sel_cmd) return run_select_layer(sel, sel_cmd);
    if (active == dec_cmd) return run_decode(dec, dec_cmd);
    if (active == ev_cmd) return run_evaluate(ev, ev_cmd);
    const CLI::App* leaf = st_cmd->get_subcommands().front();
    return run_stats(leaf->get_name(), st, leaf);
  } catch (const Error& e) {
    log_event("error", "pipeline_error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitPipelineError;
  } catch (const std::exception& e) {
    log_event("error", "pipeline_error", {{"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return kExitPipelineError;
  }
}

}  // namespace faithscope
