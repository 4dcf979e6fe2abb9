#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faithscope/engine.hpp"

namespace faithscope {

inline constexpr std::string_view kPlaceholder = "{x}";

struct SourceSpec {
  std::string prompt;
  std::string noun;
  std::size_t layer = 0;
  std::vector<TokenId> tokens;
  std::vector<std::size_t> positions;  // noun span within `tokens`
};

struct TargetSpec {
  std::string prompt_template;
  std::size_t layer = 0;
  std::vector<TokenId> tokens;  // placeholder expanded to filler tokens
  std::vector<std::size_t> placeholder_positions;
};

/// Source -> target patch with identity mapping. Source and target run on the
/// same bundle.
struct PatchPlan {
  SourceSpec source;
  TargetSpec target;
};

/// Tokenizes `prompt` and locates the noun's in-context span. The noun is
/// tokenized alone and with a leading space; exactly one occurrence across
/// both forms is required.
SourceSpec make_source(const std::string& prompt, const std::string& noun, std::size_t layer,
                       const ModelBundle& bundle);

TargetSpec resolve_placeholder(const std::string& prompt_template, std::size_t noun_token_count,
                               const ModelBundle& bundle, std::size_t layer = 0);

PatchPlan make_plan(const std::string& source_prompt, const std::string& noun, std::size_t source_layer,
                    const std::string& target_template, std::size_t target_layer, const ModelBundle& bundle);

/// Source-side residual vectors h^(layer)_i(S), one per noun position.
template <typename T>
std::vector<std::vector<T>> extract_hidden(const SourceSpec& source, const ModelBundle& bundle);

template <typename T>
Hook<T> patch_hook(const PatchPlan& plan, std::vector<std::vector<T>> vectors);

/// Target run with the extracted vectors injected at the placeholder positions.
template <typename T>
ActivationTrace<T> run_patched(const PatchPlan& plan, const ModelBundle& bundle,
                               std::span<const Hook<T>> extra_hooks = {});

/// Target run with caller-supplied vectors in place of the extracted ones.
template <typename T>
ActivationTrace<T> run_patched_with(const PatchPlan& plan, const ModelBundle& bundle,
                                    std::vector<std::vector<T>> vectors, std::span<const Hook<T>> extra_hooks = {});

void to_json(nlohmann::json& j, const PatchPlan& plan);
/// Rebuilds a plan from its JSON form (prompts, noun, layers) against `bundle`.
PatchPlan plan_from_json(const nlohmann::json& j, const ModelBundle& bundle);

}  // namespace faithscope
