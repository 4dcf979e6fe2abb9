#include "faithscope/patchscope.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

namespace faithscope {
namespace {

std::vector<std::size_t> find_all(std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  std::vector<std::size_t> hits;
  if (needle.empty() || needle.size() > haystack.size()) return hits;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) hits.push_back(i);
  }
  return hits;
}

std::vector<TokenId> try_encode(const Tokenizer& tok, std::string_view text) {
  try {
    return tok.encode(text);
  } catch (const Error&) {
    return {};
  }
}

}  // namespace

SourceSpec make_source(const std::string& prompt, const std::string& noun, std::size_t layer,
                       const ModelBundle& bundle) {
  FS_CHECK(layer <= bundle.config().n_layers, ErrorCode::PositionOutOfRange, "source layer exceeds n_layers");
  FS_CHECK(!noun.empty(), ErrorCode::NounNotFound, "empty noun");
  const auto& tok = bundle.tokenizer();
  SourceSpec spec{prompt, noun, layer, tok.encode(prompt), {}};

  std::set<std::vector<TokenId>> forms;
  for (const std::string& form : {noun, " " + noun}) {
    if (auto ids = try_encode(tok, form); !ids.empty()) forms.insert(std::move(ids));
  }
  std::set<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& form : forms) {
    for (std::size_t start : find_all(spec.tokens, form)) spans.emplace(start, form.size());
  }
  FS_CHECK(!spans.empty(), ErrorCode::NounNotFound, "noun '" + noun + "' not found in '" + prompt + "'");
  FS_CHECK(spans.size() == 1, ErrorCode::DuplicateNoun, "noun '" + noun + "' occurs more than once in '" + prompt + "'");
  const auto [start, len] = *spans.begin();
  for (std::size_t k = 0; k < len; ++k) spec.positions.push_back(start + k);
  return spec;
}

TargetSpec resolve_placeholder(const std::string& prompt_template, std::size_t noun_token_count,
                               const ModelBundle& bundle, std::size_t layer) {
  FS_CHECK(layer <= bundle.config().n_layers, ErrorCode::PositionOutOfRange, "target layer exceeds n_layers");
  const auto first = prompt_template.find(kPlaceholder);
  FS_CHECK(first != std::string::npos, ErrorCode::NoPlaceholder,
           "template has no placeholder " + std::string(kPlaceholder) + ": '" + prompt_template + "'");
  FS_CHECK(prompt_template.find(kPlaceholder, first + kPlaceholder.size()) == std::string::npos,
           ErrorCode::MultiplePlaceholders, "template has more than one placeholder: '" + prompt_template + "'");
  FS_CHECK(noun_token_count > 0, ErrorCode::InvalidArgument, "noun token count must be positive");

  const auto& tok = bundle.tokenizer();
  std::string prefix = prompt_template.substr(0, first);
  while (!prefix.empty() && prefix.back() == ' ') prefix.pop_back();
  const std::string suffix = prompt_template.substr(first + kPlaceholder.size());

  TargetSpec spec{prompt_template, layer, tok.encode(prefix), {}};
  const TokenId filler = tok.filler_id();
  for (std::size_t k = 0; k < noun_token_count; ++k) {
    spec.placeholder_positions.push_back(spec.tokens.size());
    spec.tokens.push_back(filler);
  }
  const auto tail = tok.encode(suffix);
  spec.tokens.insert(spec.tokens.end(), tail.begin(), tail.end());
  return spec;
}

PatchPlan make_plan(const std::string& source_prompt, const std::string& noun, std::size_t source_layer,
                    const std::string& target_template, std::size_t target_layer, const ModelBundle& bundle) {
  PatchPlan plan;
  plan.source = make_source(source_prompt, noun, source_layer, bundle);
  plan.target = resolve_placeholder(target_template, plan.source.positions.size(), bundle, target_layer);
  return plan;
}

template <typename T>
std::vector<std::vector<T>> extract_hidden(const SourceSpec& source, const ModelBundle& bundle) {
  FS_CHECK(!source.positions.empty(), ErrorCode::NounNotFound, "source has no noun positions");
  const std::vector<Hook<T>> hooks{Hook<T>::record(source.layer, source.positions)};
  const auto trace = forward<T>(bundle, source.tokens, hooks);
  std::vector<std::vector<T>> out;
  for (std::size_t p : source.positions) {
    auto row = trace.hidden_at(source.layer, p);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

template <typename T>
Hook<T> patch_hook(const PatchPlan& plan, std::vector<std::vector<T>> vectors) {
  FS_CHECK(vectors.size() == plan.target.placeholder_positions.size(), ErrorCode::SpanMismatch,
           "vector count does not match placeholder positions");
  return Hook<T>::overwrite(plan.target.layer, plan.target.placeholder_positions, std::move(vectors));
}

template <typename T>
ActivationTrace<T> run_patched_with(const PatchPlan& plan, const ModelBundle& bundle,
                                    std::vector<std::vector<T>> vectors, std::span<const Hook<T>> extra_hooks) {
  std::vector<Hook<T>> hooks(extra_hooks.begin(), extra_hooks.end());
  hooks.push_back(patch_hook<T>(plan, std::move(vectors)));
  return forward<T>(bundle, plan.target.tokens, hooks);
}

template <typename T>
ActivationTrace<T> run_patched(const PatchPlan& plan, const ModelBundle& bundle, std::span<const Hook<T>> extra_hooks) {
  FS_CHECK(plan.source.positions.size() == plan.target.placeholder_positions.size(), ErrorCode::SpanMismatch,
           "source span and placeholder span differ in length");
  return run_patched_with<T>(plan, bundle, extract_hidden<T>(plan.source, bundle), extra_hooks);
}

#define FS_INSTANTIATE(T)                                                                                         \
  template std::vector<std::vector<T>> extract_hidden<T>(const SourceSpec&, const ModelBundle&);                  \
  template Hook<T> patch_hook<T>(const PatchPlan&, std::vector<std::vector<T>>);                                 \
  template ActivationTrace<T> run_patched<T>(const PatchPlan&, const ModelBundle&, std::span<const Hook<T>>);    \
  template ActivationTrace<T> run_patched_with<T>(const PatchPlan&, const ModelBundle&, std::vector<std::vector<T>>, \
                                                  std::span<const Hook<T>>);
FS_INSTANTIATE(float)
FS_INSTANTIATE(double)
#undef FS_INSTANTIATE

void to_json(nlohmann::json& j, const PatchPlan& plan) {
  j = nlohmann::json{{"source_prompt", plan.source.prompt},
                     {"noun", plan.source.noun},
                     {"source_layer", plan.source.layer},
                     {"target_template", plan.target.prompt_template},
                     {"target_layer", plan.target.layer}};
}

PatchPlan plan_from_json(const nlohmann::json& j, const ModelBundle& bundle) {
  try {
    const auto layer = j.at("source_layer").get<std::size_t>();
    return make_plan(j.at("source_prompt").get<std::string>(), j.at("noun").get<std::string>(), layer,
                     j.at("target_template").get<std::string>(), j.value("target_layer", layer), bundle);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed patch plan: ") + e.what());
  }
}

}  // namespace faithscope
