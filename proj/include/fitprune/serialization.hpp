#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fitprune/core.hpp"
#include "fitprune/recipe_search.hpp"
#include "fitprune/runtime.hpp"

namespace fitprune::io {

using json = nlohmann::ordered_json;

inline constexpr int format_version = 1;

json to_json(const ModelConfig& config);
/// Strict: unknown keys are a ValidationError. mlp_matmul_count and num_text_tokens may be omitted.
ModelConfig model_config_from_json(const json& j);

json to_json(const PruningRecipe& recipe);
PruningRecipe recipe_from_json(const json& j);

json to_json(const AttentionStatistics& stats);
AttentionStatistics statistics_from_json(const json& j);

json to_json(const DivergenceReport& report);
DivergenceReport report_from_json(const json& j);

json to_json(const search::SearchIteration& step);

/// alpha,pruning_ratio,flops
std::string curve_csv(const std::vector<runtime::CurvePoint>& curve);

/// layer,pruned,surviving_visual,tokens
std::string schedule_csv(const PruningRecipe& recipe, const ModelConfig& config);

json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace fitprune::io
