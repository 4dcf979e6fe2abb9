#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faithscope/balor.hpp"
#include "faithscope/dataset.hpp"

namespace faithscope {

enum class MethodKind { vanilla, cb, ie, db, balor_s, balor_d };

std::string_view to_string(MethodKind kind) noexcept;
MethodKind method_kind_from_string(std::string_view s);

inline constexpr std::string_view kPrefixCB = "Do not use outside or empirical knowledge, directly answer. ";
inline constexpr std::string_view kPrefixIE =
    "Use only internal evidence from the input, exclude background knowledge. ";
inline constexpr std::string_view kPrefixDB = "Answer strictly from the given data, avoid any external reasoning. ";

struct MethodSpec {
  MethodKind kind = MethodKind::vanilla;
  std::string prefix;                // prepended to the target prompt; non-empty only for cb, ie, db
  std::optional<BalorConfig> balor;  // set only for balor_s and balor_d

  static MethodSpec make(MethodKind kind, double alpha = 1.0);
  std::string name() const { return std::string(to_string(kind)); }
  void validate() const;
};

enum class OptionOrder { original, swapped };
std::string_view to_string(OptionOrder order) noexcept;

struct EvalConfig {
  std::size_t layer = 0;
  std::size_t shots = 0;
  SamplingConfig sampling;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 16;
  Precision precision = Precision::f32;
  std::size_t jobs = 1;
  std::string model_id = "model";
};

struct ResponseRecord {
  std::string datapoint_id;
  OptionOrder order = OptionOrder::original;
  std::string prompt;      // target prompt as run, placeholder included
  std::string generated;   // chosen option (zero-shot) or decoded text (few-shot)
  bool matched = false;
  std::vector<double> step_probabilities;  // zero-shot: [p(a_pri), p(a_sec)]; few-shot: p of each chosen token
};

void to_json(nlohmann::json& j, const ResponseRecord& r);

struct ResultRow {
  std::string task;
  std::string model_id;
  std::string method;
  double alpha = 0.0;
  double temperature = 0.0;
  std::size_t shots = 0;
  double sr = 0.0;
  std::size_t n = 0;  // datapoints
  std::uint64_t seed = 0;
};

/// Case-insensitive whole-word containment of `word` in `text`.
bool contains_word(std::string_view text, std::string_view word);

/// Zero-shot: both option orders per datapoint; the option with the higher
/// summed log-probability under the method's distribution is the answer
/// (ties go to a_pri), or with temperature > 0 one option is drawn from the
/// softmax of the two temperature-scaled scores. Few-shot: one record per
/// datapoint, matched when a_sec appears in the generated continuation.
std::vector<ResponseRecord> run_method(const std::vector<Datapoint>& data, const ModelBundle& bundle,
                                       const MethodSpec& method, const EvalConfig& cfg);

/// Fraction of matched records.
double compute_sr(const std::vector<ResponseRecord>& records);

ResultRow make_row(const std::vector<Datapoint>& data, const MethodSpec& method, const EvalConfig& cfg,
                   const std::vector<ResponseRecord>& records);

enum class SweepAxis { alpha, temperature };
SweepAxis sweep_axis_from_string(std::string_view s);

/// One ResultRow per grid value of alpha (BALOR methods) or temperature.
std::vector<ResultRow> sweep(const std::vector<Datapoint>& data, const ModelBundle& bundle, SweepAxis axis,
                             const std::vector<double>& grid, const MethodSpec& base, const EvalConfig& cfg);

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_records_jsonl(const std::string& path, const std::vector<ResponseRecord>& records);

}  // namespace faithscope
