#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fitprune/core.hpp"

namespace fitprune::costmodel {

inline constexpr double flops_per_tflop = 1e12;

/// Prefill FLOPs of one decoder layer, 2 FLOPs per multiply-accumulate.
struct LayerFlops {
    double projection = 0.0;  // Q, K, V and output projections: 8 n d^2
    double attention = 0.0;   // scores and weighted sum: 4 n^2 d
    double mlp = 0.0;         // 2 * mlp_matmul_count * n * d * d_ff

    double total() const {
        return projection + attention + mlp;
    }
};

struct FlopsBreakdown {
    std::vector<LayerFlops> layers;
    double total = 0.0;
};

LayerFlops layer_flops(std::size_t tokens, const ModelConfig& config);

/// Sum of layer_flops(N - t_i + M) over layers, t_i being the cumulative pruned count.
/// Layer i is charged at its post-pruning length.
FlopsBreakdown total_flops(std::span<const std::size_t> per_layer_counts, const ModelConfig& config);
FlopsBreakdown total_flops(const PruningRecipe& recipe, const ModelConfig& config);

/// Prefill FLOPs with every visual token present.
double full_flops(const ModelConfig& config);

/// Share of full_flops attributable to the visual tokens: full minus a text-only model.
double visual_flops(const ModelConfig& config);

/// Budget as absolute FLOPs. Ratio r maps to full - r * visual.
double resolve_budget(const Budget& budget, const ModelConfig& config);

/// 1 - flops / full_flops.
double overall_reduction(double flops, const ModelConfig& config);

/// Fraction of visual FLOPs saved: (full - flops) / visual.
double visual_reduction(double flops, const ModelConfig& config);

}  // namespace fitprune::costmodel
