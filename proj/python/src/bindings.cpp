#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "faithscope/balor.hpp"
#include "faithscope/cli.hpp"
#include "faithscope/dataset.hpp"
#include "faithscope/engine.hpp"
#include "faithscope/errors.hpp"
#include "faithscope/evaluator.hpp"
#include "faithscope/fptl.hpp"
#include "faithscope/layer_selector.hpp"
#include "faithscope/patchscope.hpp"
#include "faithscope/stats.hpp"

namespace py = pybind11;
using namespace faithscope;
using nlohmann::json;

namespace {

py::object to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null: return py::none();
    case json::value_t::boolean: return py::bool_(j.get<bool>());
    case json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case json::value_t::number_float: return py::float_(j.get<double>());
    case json::value_t::string: return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& e : j) out.append(to_py(e));
      return std::move(out);
    }
    case json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return std::move(out);
    }
    default: return py::none();
  }
}

json from_py(const py::handle& o) {
  if (o.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(o)) return o.cast<bool>();
  if (py::isinstance<py::int_>(o)) return o.cast<std::int64_t>();
  if (py::isinstance<py::float_>(o)) return o.cast<double>();
  if (py::isinstance<py::str>(o)) return o.cast<std::string>();
  if (py::isinstance<py::dict>(o)) {
    json out = json::object();
    for (auto [k, v] : o.cast<py::dict>()) out[py::str(k).cast<std::string>()] = from_py(v);
    return out;
  }
  if (py::isinstance<py::sequence>(o)) {
    json out = json::array();
    for (auto v : o.cast<py::sequence>()) out.push_back(from_py(v));
    return out;
  }
  throw py::type_error("value is not JSON-serializable");
}

Precision precision_of(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw Error(ErrorCode::InvalidArgument, "precision must be 'f32' or 'f64'");
}

template <typename T>
py::array_t<double> matrix_to_numpy(const Matrix<T>& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto r = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < m.cols(); ++k) r(i, k) = static_cast<double>(m(i, k));
  }
  return out;
}

template <typename T>
py::dict trace_to_py(const ActivationTrace<T>& trace) {
  const std::size_t layers = trace.hidden.size();
  const std::size_t seq = trace.seq_len();
  const std::size_t d = layers ? trace.hidden[0].cols() : 0;
  py::array_t<double> hidden({layers, seq, d});
  auto h = hidden.mutable_unchecked<3>();
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t k = 0; k < d; ++k) h(l, i, k) = static_cast<double>(trace.hidden[l](i, k));
    }
  }
  py::dict out;
  out["hidden"] = hidden;
  out["logits"] = matrix_to_numpy(trace.final_logits);
  return out;
}

using Overwrite = std::tuple<std::size_t, std::size_t, std::vector<double>>;

template <typename T>
py::dict forward_as(const ModelBundle& bundle, const std::vector<TokenId>& tokens,
                    const std::vector<Overwrite>& overwrites) {
  std::vector<Hook<T>> hooks;
  for (const auto& [layer, pos, vec] : overwrites) {
    hooks.push_back(Hook<T>::overwrite(layer, {pos}, {std::vector<T>(vec.begin(), vec.end())}));
  }
  return trace_to_py(forward<T>(bundle, tokens, hooks));
}

struct PyBalorConfig {
  double alpha = 1.0;
  std::string mode = "shared";
  double temperature = 0.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::size_t max_new_tokens = 16;
  std::uint64_t seed = 0;
  std::string precision = "f32";

  BalorConfig get() const {
    BalorConfig c;
    c.alpha = alpha;
    c.mode = balor_mode_from_string(mode);
    c.sampling = {temperature, top_k, top_p};
    c.max_new_tokens = max_new_tokens;
    c.rng_seed = seed;
    c.precision = precision_of(precision);
    return c;
  }
};

Datapoint datapoint_from_py(const py::dict& d) {
  Datapoint out;
  from_json(from_py(d), out);
  return out;
}

py::dict datapoint_to_py(const Datapoint& d) {
  json j;
  to_json(j, d);
  return to_py(j).cast<py::dict>();
}

}  // namespace

PYBIND11_MODULE(_faithscope, m) {
  m.doc() = "Hidden-state patching, contrastive logit recalibration and layer selection";
  m.attr("__version__") = FAITHSCOPE_VERSION;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  // ---- tokenizer and model ----------------------------------------------------

  py::class_<Tokenizer>(m, "Tokenizer")
      .def_static(
          "from_files",
          [](const std::string& mode, const std::string& vocab, const std::string& merges) {
            return Tokenizer::from_files(tokenizer_mode_from_string(mode), vocab, merges);
          },
          py::arg("mode"), py::arg("vocab_path"), py::arg("merges_path") = "")
      .def("encode", &Tokenizer::encode)
      .def("decode", [](const Tokenizer& t, const std::vector<TokenId>& ids) { return t.decode(ids); })
      .def("token", &Tokenizer::token)
      .def("find", &Tokenizer::find)
      .def_property_readonly("mode", [](const Tokenizer& t) { return std::string(to_string(t.mode())); })
      .def("__len__", &Tokenizer::size);

  m.def("toy_tokenizer", &toy_tokenizer);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq", &ModelConfig::max_seq)
      .def_readwrite("norm_eps", &ModelConfig::norm_eps)
      .def_readwrite("final_norm", &ModelConfig::final_norm)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });

  m.def("toy_config", &toy_config);

  py::class_<BiasRig>(m, "BiasRig")
      .def(py::init([](const std::string& biased_token, double bias_strength,
                       const std::vector<std::string>& context_tokens, double embed_gain, double read_gain) {
             return BiasRig{biased_token, bias_strength, context_tokens, embed_gain, read_gain};
           }),
           py::arg("biased_token") = "green", py::arg("bias_strength") = 5.0,
           py::arg("context_tokens") = std::vector<std::string>{}, py::arg("context_embed_gain") = 1.0,
           py::arg("context_read_gain") = 2.0)
      .def_readwrite("biased_token", &BiasRig::biased_token)
      .def_readwrite("bias_strength", &BiasRig::bias_strength)
      .def_readwrite("context_tokens", &BiasRig::context_tokens)
      .def_readwrite("context_embed_gain", &BiasRig::context_embed_gain)
      .def_readwrite("context_read_gain", &BiasRig::context_read_gain);

  py::class_<ModelBundle>(m, "ModelBundle")
      .def_property_readonly("config", &ModelBundle::config)
      .def_property_readonly("tokenizer", &ModelBundle::tokenizer, py::return_value_policy::reference_internal)
      .def("__eq__", [](const ModelBundle& a, const ModelBundle& b) { return a == b; });

  m.def(
      "make_toy_model",
      [](std::uint64_t seed, std::optional<ModelConfig> config, std::optional<BiasRig> rig) {
        return make_toy_model(seed, config.value_or(toy_config()), rig);
      },
      py::arg("seed") = 7, py::arg("config") = py::none(), py::arg("rig") = py::none());
  m.def("save_bundle", &save_bundle, py::arg("bundle"), py::arg("directory"));
  m.def("load_bundle", &load_bundle_dir, py::arg("directory"));

  // ---- engine -----------------------------------------------------------------

  m.def(
      "forward",
      [](const ModelBundle& bundle, const std::vector<TokenId>& tokens, const std::vector<Overwrite>& overwrites,
         const std::string& precision) {
        return precision_of(precision) == Precision::f64 ? forward_as<double>(bundle, tokens, overwrites)
                                                         : forward_as<float>(bundle, tokens, overwrites);
      },
      py::arg("bundle"), py::arg("tokens"), py::arg("overwrites") = std::vector<Overwrite>{},
      py::arg("precision") = "f64",
      "Runs the model; overwrites are (layer, position, vector) triples. Returns hidden and logits arrays.");
  m.def("logit_lens", [](const ModelBundle& b, const std::vector<double>& h) { return logit_lens(h, b); });

  // ---- patching ---------------------------------------------------------------

  py::class_<PatchPlan>(m, "PatchPlan")
      .def_property_readonly("source_tokens", [](const PatchPlan& p) { return p.source.tokens; })
      .def_property_readonly("noun_positions", [](const PatchPlan& p) { return p.source.positions; })
      .def_property_readonly("target_tokens", [](const PatchPlan& p) { return p.target.tokens; })
      .def_property_readonly("placeholder_positions", [](const PatchPlan& p) { return p.target.placeholder_positions; })
      .def_property_readonly("source_layer", [](const PatchPlan& p) { return p.source.layer; })
      .def_property_readonly("target_layer", [](const PatchPlan& p) { return p.target.layer; })
      .def("to_dict", [](const PatchPlan& p) {
        json j;
        to_json(j, p);
        return to_py(j);
      });

  m.def("make_plan", &make_plan, py::arg("source_prompt"), py::arg("noun"), py::arg("source_layer"),
        py::arg("target_template"), py::arg("target_layer"), py::arg("bundle"));
  m.def(
      "run_patched",
      [](const PatchPlan& plan, const ModelBundle& bundle, const std::string& precision) {
        return precision_of(precision) == Precision::f64 ? trace_to_py(run_patched<double>(plan, bundle))
                                                         : trace_to_py(run_patched<float>(plan, bundle));
      },
      py::arg("plan"), py::arg("bundle"), py::arg("precision") = "f64");

  // ---- recalibration ----------------------------------------------------------

  m.def("recalibrate", [](const std::vector<double>& lt, const std::vector<double>& lc,
                          double alpha) { return recalibrate(lt, lc, alpha); },
        py::arg("target_logits"), py::arg("contrastive_logits"), py::arg("alpha"));
  m.def(
      "log_odds_decomposition",
      [](const std::vector<double>& lt, const std::vector<double>& lc, double alpha, std::size_t y1, std::size_t y2) {
        const auto r = log_odds_decomposition(lt, lc, alpha, y1, y2);
        return std::make_pair(r.lhs, r.rhs);
      },
      py::arg("target_logits"), py::arg("contrastive_logits"), py::arg("alpha"), py::arg("y1"), py::arg("y2"));
  m.def("flip_threshold", [](const std::vector<double>& lt, const std::vector<double>& lc, std::size_t y1,
                             std::size_t y2) { return flip_threshold(lt, lc, y1, y2); });

  py::class_<PyBalorConfig>(m, "BalorConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &PyBalorConfig::alpha)
      .def_readwrite("mode", &PyBalorConfig::mode)
      .def_readwrite("temperature", &PyBalorConfig::temperature)
      .def_readwrite("top_k", &PyBalorConfig::top_k)
      .def_readwrite("top_p", &PyBalorConfig::top_p)
      .def_readwrite("max_new_tokens", &PyBalorConfig::max_new_tokens)
      .def_readwrite("seed", &PyBalorConfig::seed)
      .def_readwrite("precision", &PyBalorConfig::precision);

  m.def("build_contrastive_tokens", [](const PatchPlan& plan, const ModelBundle& bundle) {
    const auto pair = build_contrastive(plan, bundle);
    return std::make_pair(pair.target_tokens, pair.contrastive_tokens);
  });
  m.def(
      "decode",
      [](const PatchPlan& plan, const ModelBundle& bundle, const PyBalorConfig& cfg, bool vanilla) {
        const auto c = cfg.get();
        const DecodeResult r = vanilla ? decode_vanilla(plan, bundle, c) : decode(build_contrastive(plan, bundle), bundle, c);
        json j;
        to_json(j, r);
        return to_py(j);
      },
      py::arg("plan"), py::arg("bundle"), py::arg("config") = PyBalorConfig{}, py::arg("vanilla") = false);

  // ---- datasets ---------------------------------------------------------------

  py::class_<Datapoint>(m, "Datapoint")
      .def(py::init([](const py::dict& d) { return datapoint_from_py(d); }))
      .def_readwrite("id", &Datapoint::id)
      .def_readwrite("category", &Datapoint::category)
      .def_readwrite("noun", &Datapoint::noun)
      .def_readwrite("a_pri", &Datapoint::a_pri)
      .def_readwrite("a_sec", &Datapoint::a_sec)
      .def_readwrite("delta_f", &Datapoint::delta_f)
      .def_readonly("source_prompt", &Datapoint::source_prompt)
      .def_readonly("target_prompt", &Datapoint::target_prompt)
      .def_readonly("target_prompt_swapped", &Datapoint::target_prompt_swapped)
      .def_readonly("contrastive_prompt", &Datapoint::contrastive_prompt)
      .def_readonly("fewshot_target", &Datapoint::fewshot_target)
      .def_property_readonly("task", [](const Datapoint& d) { return std::string(to_string(d.task)); })
      .def_property_readonly("subset", [](const Datapoint& d) { return std::string(to_string(d.subset)); })
      .def("to_dict", &datapoint_to_py)
      .def("__eq__", [](const Datapoint& a, const Datapoint& b) { return a == b; })
      .def("__repr__", [](const Datapoint& d) { return "<Datapoint " + d.id + ">"; });

  m.def(
      "scan_corpus",
      [](const std::vector<std::string>& docs, const std::vector<std::string>& nouns,
         const std::vector<std::string>& attributes, std::size_t window) {
        return scan_corpus(docs, nouns, attributes, window).counts;
      },
      py::arg("documents"), py::arg("nouns"), py::arg("attributes"), py::arg("window") = 16);
  m.def(
      "assign_attributes",
      [](const std::map<std::string, std::map<std::string, std::size_t>>& counts, const std::string& task) {
        CooccurrenceTable t;
        t.counts = counts;
        return assign_attributes(t, task_from_string(task));
      },
      py::arg("counts"), py::arg("task") = "color");
  m.def(
      "render_prompts",
      [](std::vector<Datapoint> points, std::size_t shots, std::uint64_t seed) {
        const auto pool = points;
        for (auto& d : points) render_prompts(d, shots, pool, seed);
        return points;
      },
      py::arg("datapoints"), py::arg("shots") = 0, py::arg("seed") = 0,
      "Returns copies with all prompts filled; few-shot exemplars come from the same list.");
  m.def(
      "bias_split",
      [](const std::vector<Datapoint>& points, const ModelBundle& bundle, const std::string& precision) {
        const auto s = bias_split(points, model_chooser(bundle, precision_of(precision)));
        return std::make_pair(s.biased, s.nonbiased);
      },
      py::arg("datapoints"), py::arg("bundle"), py::arg("precision") = "f32");

  // ---- layer selection --------------------------------------------------------

  m.def(
      "train_probe",
      [](const std::vector<std::vector<double>>& xs, const std::vector<std::string>& labels, std::size_t epochs,
         double step, double l2) {
        if (xs.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "features and labels differ in length");
        std::vector<ProbeExample> ex;
        for (std::size_t i = 0; i < xs.size(); ++i) ex.push_back({xs[i], labels[i]});
        const auto probe = train_probe(ex, {epochs, step, l2});
        py::dict out;
        out["classes"] = probe.classes;
        out["weights"] = matrix_to_numpy(probe.weights);
        out["bias"] = probe.bias;
        out["losses"] = probe.losses;
        return out;
      },
      py::arg("features"), py::arg("labels"), py::arg("epochs") = 200, py::arg("step") = 0.1,
      py::arg("l2") = 1e-4);
  m.def("compute_ld", &compute_ld, py::arg("datapoints"), py::arg("layer"), py::arg("bundle"));
  m.def(
      "compute_gsa_with_probe",
      [](const std::vector<Datapoint>& data, std::size_t layer, const ModelBundle& bundle,
         const std::vector<Datapoint>& probe_data) {
        const auto probe = train_probe(probe_examples(probe_data, layer, bundle));
        const auto r = compute_gsa(data, layer, bundle, probe);
        return py::dict(py::arg("value") = r.value, py::arg("used") = r.used, py::arg("skipped") = r.skipped);
      },
      py::arg("datapoints"), py::arg("layer"), py::arg("bundle"), py::arg("probe_datapoints"));
  m.def(
      "select_layer",
      [](const std::vector<double>& ld, const std::vector<double>& gsa, double w) {
        if (ld.size() != gsa.size()) throw Error(ErrorCode::LengthMismatch, "LD and GSA differ in length");
        std::vector<LayerScore> scores(ld.size());
        for (std::size_t i = 0; i < ld.size(); ++i) scores[i] = {i, ld[i], gsa[i]};
        const auto chosen = select_layer(scores, w);
        std::vector<double> combined;
        for (const auto& s : scores) combined.push_back(s.combined);
        return std::make_pair(chosen, combined);
      },
      py::arg("ld"), py::arg("gsa"), py::arg("w") = 0.8);
  m.def(
      "scan_layers",
      [](const std::vector<Datapoint>& data, const std::vector<Datapoint>& probe_data, const ModelBundle& bundle,
         double w, std::optional<std::size_t> layer_min, std::optional<std::size_t> layer_max, std::size_t jobs) {
        SelectionConfig cfg;
        cfg.weight_w = w;
        cfg.jobs = jobs;
        if (layer_min || layer_max) {
          cfg.layer_range = {{layer_min.value_or(0), layer_max.value_or(bundle.config().n_layers - 1)}};
        }
        json j;
        to_json(j, scan_layers(data, probe_data, bundle, cfg));
        return to_py(j);
      },
      py::arg("datapoints"), py::arg("probe_datapoints"), py::arg("bundle"), py::arg("w") = 0.8,
      py::arg("layer_min") = py::none(), py::arg("layer_max") = py::none(), py::arg("jobs") = 1);

  // ---- evaluation -------------------------------------------------------------

  m.def(
      "run_method",
      [](const std::vector<Datapoint>& data, const ModelBundle& bundle, const std::string& method, double alpha,
         std::size_t layer, std::size_t shots, double temperature, std::optional<std::size_t> top_k,
         std::optional<double> top_p, std::uint64_t seed, const std::string& precision, std::size_t jobs) {
        EvalConfig cfg;
        cfg.layer = layer;
        cfg.shots = shots;
        cfg.sampling = {temperature, top_k, top_p};
        cfg.seed = seed;
        cfg.precision = precision_of(precision);
        cfg.jobs = jobs;
        const auto records = run_method(data, bundle, MethodSpec::make(method_kind_from_string(method), alpha), cfg);
        py::list out;
        for (const auto& r : records) {
          json j;
          to_json(j, r);
          out.append(to_py(j));
        }
        return out;
      },
      py::arg("datapoints"), py::arg("bundle"), py::arg("method") = "balor_s", py::arg("alpha") = 1.0,
      py::arg("layer") = 0, py::arg("shots") = 0, py::arg("temperature") = 0.0, py::arg("top_k") = py::none(),
      py::arg("top_p") = py::none(), py::arg("seed") = 0, py::arg("precision") = "f32", py::arg("jobs") = 1);
  m.def(
      "compute_sr",
      [](const py::list& records) {
        std::vector<ResponseRecord> rs;
        for (auto r : records) {
          ResponseRecord rec;
          rec.matched = r.cast<py::dict>()["matched"].cast<bool>();
          rs.push_back(rec);
        }
        return compute_sr(rs);
      },
      py::arg("records"));
  m.def("contains_word", &contains_word, py::arg("text"), py::arg("word"));

  // ---- statistics -------------------------------------------------------------

  auto st = m.def_submodule("stats", "Rank statistics, isotonic fits and logistic analysis");
  auto as_json = [](const auto& r) {
    json j;
    to_json(j, r);
    return to_py(j);
  };
  st.def("spearman", [as_json](const std::vector<double>& x, const std::vector<double>& y) {
    return as_json(stats::spearman(x, y));
  });
  st.def(
      "isotonic",
      [as_json](const std::vector<double>& y, const std::vector<double>& w) { return as_json(stats::isotonic_pava(y, w)); },
      py::arg("y"), py::arg("weights") = std::vector<double>{});
  st.def("kruskal_wallis",
         [as_json](const std::vector<std::vector<double>>& groups) { return as_json(stats::kruskal_wallis(groups)); });
  st.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return stats::roc_auc(s, y); });
  st.def("chi2_sf", &stats::chi2_sf, py::arg("x"), py::arg("df"));
  st.def(
      "fit_logistic",
      [](const std::vector<double>& x, const std::vector<int>& y, bool allow_separation) {
        const auto f = stats::fit_logistic(x, y, allow_separation);
        return py::dict(py::arg("coef") = f.coef, py::arg("intercept") = f.intercept, py::arg("coef_se") = f.coef_se,
                        py::arg("x_mean") = f.x_mean, py::arg("x_sd") = f.x_sd, py::arg("iterations") = f.iterations,
                        py::arg("converged") = f.converged, py::arg("separated") = f.separated);
      },
      py::arg("x"), py::arg("y"), py::arg("allow_separation") = false);
  st.def(
      "repeated_undersampling",
      [as_json](const std::vector<double>& x, const std::vector<int>& y, std::size_t runs, std::uint64_t seed) {
        return as_json(stats::repeated_undersampling(x, y, runs, seed));
      },
      py::arg("x"), py::arg("y"), py::arg("runs") = 5, py::arg("seed") = 0);

  // ---- command line -----------------------------------------------------------

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "faithscope");
        py::gil_scoped_release release;
        return run_command(args);
      },
      py::arg("args"), "Runs a faithscope subcommand in-process and returns its exit code.");
}
