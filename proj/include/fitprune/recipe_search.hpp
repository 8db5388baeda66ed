#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fitprune/core.hpp"

namespace fitprune::search {

struct SearchParams {
    double epsilon = 0.01;
    double alpha_lo = 0.0;
    double alpha_hi = 1.0;

    void validate() const;
};

/// Candidate sets for one layer. Indices are original visual-token positions.
struct LayerPruneSet {
    std::size_t layer_index = 0;
    IndexSet self_set;    // in removal order (ascending a_s)
    IndexSet cross_set;   // in removal order (ascending a_c)
    IndexSet pruned_set;  // self_set ∩ cross_set, ascending index

    std::size_t count() const {
        return pruned_set.size();
    }
};

/**
 * Longest ascending-weight prefix whose removed mass stays within `alpha`.
 *
 * Survivors are ordered by (weight, index). The prefix grows while
 * sum(prefix) / reference <= alpha, where `reference` is the layer's total mass
 * (defaults to the survivors' own mass). A zero reference makes every survivor
 * removable for any alpha > 0 and none for alpha = 0.
 */
IndexSet greedy_prefix(std::span<const std::size_t> survivors, std::span<const double> weights, double alpha,
                       std::optional<double> reference = std::nullopt);

LayerPruneSet greedy_layer_sets(std::span<const std::size_t> survivors, std::span<const double> self_received,
                                std::span<const double> cross_received, double alpha,
                                std::optional<double> self_reference = std::nullopt,
                                std::optional<double> cross_reference = std::nullopt);

/// One pass over the layers at a fixed divergence bound.
struct AlphaSweep {
    double alpha = 0.0;
    std::vector<std::size_t> counts;
    std::vector<LayerPruneSet> layers;
};

/// Layer-by-layer greedy sweep over static statistics; each layer removes
/// T_S ∩ T_C from the survivor set before the next layer is considered.
/// Removed mass is measured against the layer's full a_s and a_c totals, so a
/// larger alpha never prunes fewer tokens by any layer.
AlphaSweep recipe_for_alpha(const AttentionStatistics& stats, double alpha, const ModelConfig& config);

struct SearchIteration {
    std::size_t iteration = 0;  // 1-based
    double alpha_lo = 0.0;      // interval at the start of the iteration
    double alpha_hi = 0.0;
    double midpoint = 0.0;
    double flops = 0.0;
    bool feasible = false;
};

struct SearchResult {
    PruningRecipe recipe;
    std::vector<SearchIteration> trace;
};

/// ceil(log2((alpha_hi - alpha_lo) / epsilon)), the number of bisection steps.
std::size_t expected_iterations(const SearchParams& params);

/**
 * Bisection on alpha for the smallest bound whose recipe fits the FLOPs budget.
 *
 * The returned recipe is always recomputed on the feasible side. If no probe ever
 * moved the lower bound and the recipe at alpha_lo itself fits, that recipe is
 * returned. Throws InfeasibleBudgetError when even alpha_hi exceeds the budget.
 */
SearchResult search(const AttentionStatistics& stats, const Budget& budget, const SearchParams& params,
                    const ModelConfig& config);

}  // namespace fitprune::search
