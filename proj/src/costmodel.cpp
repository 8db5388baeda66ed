#include "fitprune/costmodel.hpp"

namespace fitprune::costmodel {

LayerFlops layer_flops(std::size_t tokens, const ModelConfig& config) {
    const double n = static_cast<double>(tokens);
    const double d = static_cast<double>(config.hidden_size);
    const double d_ff = static_cast<double>(config.mlp_intermediate);
    const double matmuls = static_cast<double>(config.mlp_matmul_count);
    LayerFlops f;
    f.projection = 8.0 * n * d * d;
    f.attention = 4.0 * n * n * d;
    f.mlp = 2.0 * matmuls * n * d * d_ff;
    return f;
}

FlopsBreakdown total_flops(std::span<const std::size_t> per_layer_counts, const ModelConfig& config) {
    if (per_layer_counts.size() != config.num_layers) {
        throw ValidationError("schedule has " + std::to_string(per_layer_counts.size()) + " layers, model has " +
                              std::to_string(config.num_layers));
    }
    FlopsBreakdown breakdown;
    breakdown.layers.reserve(config.num_layers);
    std::size_t pruned = 0;
    for (std::size_t i = 0; i < per_layer_counts.size(); ++i) {
        pruned += per_layer_counts[i];
        if (pruned > config.num_visual_tokens) {
            throw ValidationError("cumulative-overflow: " + std::to_string(pruned) + " tokens pruned by layer " +
                                  std::to_string(i + 1) + " but N = " + std::to_string(config.num_visual_tokens));
        }
        const auto layer = layer_flops(config.num_visual_tokens - pruned + config.num_text_tokens, config);
        breakdown.total += layer.total();
        breakdown.layers.push_back(layer);
    }
    return breakdown;
}

FlopsBreakdown total_flops(const PruningRecipe& recipe, const ModelConfig& config) {
    return total_flops(std::span<const std::size_t>(recipe.per_layer_counts), config);
}

double full_flops(const ModelConfig& config) {
    return static_cast<double>(config.num_layers) * layer_flops(config.sequence_length(), config).total();
}

double visual_flops(const ModelConfig& config) {
    const double text_only =
        static_cast<double>(config.num_layers) * layer_flops(config.num_text_tokens, config).total();
    return full_flops(config) - text_only;
}

double resolve_budget(const Budget& budget, const ModelConfig& config) {
    budget.validate();
    if (budget.mode == BudgetMode::absolute_flops)
        return budget.value;
    return full_flops(config) - budget.value * visual_flops(config);
}

double overall_reduction(double flops, const ModelConfig& config) {
    return 1.0 - flops / full_flops(config);
}

double visual_reduction(double flops, const ModelConfig& config) {
    const double visual = visual_flops(config);
    return visual > 0.0 ? (full_flops(config) - flops) / visual : 0.0;
}

}  // namespace fitprune::costmodel
