#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fitprune/core.hpp"
#include "fitprune/recipe_search.hpp"

namespace fitprune::runtime {

/// Received attention of the surviving visual tokens at one layer.
struct RuntimeAttentionSnapshot {
    std::size_t layer_index = 0;
    IndexSet tokens;                    // original ids of surviving visual tokens, ascending
    std::vector<double> self_received;  // a_s per survivor
    std::vector<double> cross_received; // a_c per survivor
    std::vector<double> combined;       // a_u = a_s * a_c
};

/**
 * Builds a snapshot from an attention matrix over the current sequence, whose
 * first `visual_tokens.size()` rows and columns are the surviving visual tokens
 * and the remainder are text tokens.
 */
RuntimeAttentionSnapshot make_snapshot(const Matrix& attention, const IndexSet& visual_tokens, std::size_t layer_index);

/// The `count` survivors with the smallest a_u, ties to the lower id. Returned ascending.
IndexSet select_pruned_tokens(const RuntimeAttentionSnapshot& snapshot, std::size_t count);

/// Picks which survivors to drop at a layer, given how many.
using TokenSelector = std::function<IndexSet(const RuntimeAttentionSnapshot&, std::size_t count)>;

/// Lowest combined importance a_u first; the inference-time rule for recipes.
TokenSelector combined_importance_selector();

/// Lowest cross-received attention a_c first, ties to the lower id.
TokenSelector cross_attention_selector();

/// Uniformly random survivors from a seeded generator. The returned selector owns its
/// generator state, so successive calls draw fresh tokens.
TokenSelector random_selector(std::uint64_t seed);

/// Keeps rows and columns at `positions` (ascending) and rescales each row to sum to 1.
Matrix restrict_and_renormalize(const Matrix& attention, std::span<const std::size_t> positions);

struct SimulationResult {
    AttentionRecord pruned;               // layer i has side N + M - t_i
    std::vector<IndexSet> pruned_per_layer;  // newly pruned ids per layer, ascending
    DivergenceReport report;
};

/**
 * Removes the given visual tokens layer by layer (a token pruned at layer i stays
 * pruned) and renormalizes surviving rows, then compares the averaged self and
 * cross attention of each layer before and after.
 */
SimulationResult simulate_pruned_attention(const AttentionRecord& record, std::size_t num_visual,
                                           std::span<const IndexSet> pruned_per_layer);

/// Online pruning over a recorded trace: at layer i, rank the survivors on that layer's
/// renormalized attention and drop counts[i] of them chosen by `selector`.
SimulationResult simulate_schedule(const AttentionRecord& record, std::size_t num_visual,
                                   std::span<const std::size_t> counts, const TokenSelector& selector);

/// Removed-mass divergence of an alpha sweep measured on the statistics it was built from.
/// Per layer, *_divergence is the fraction of the layer's total received mass that was removed.
DivergenceReport removed_mass_report(const AttentionStatistics& stats, const search::AlphaSweep& sweep);

/// Counts that drop floor(ratio * N) tokens once, at `layer` (1-based).
std::vector<std::size_t> single_shot_schedule(std::size_t num_layers, std::size_t num_visual, std::size_t layer,
                                              double ratio);

SimulationResult baseline_random(const AttentionRecord& record, std::size_t num_visual, std::size_t layer,
                                 double ratio, std::uint64_t seed);

SimulationResult baseline_crossattn_once(const AttentionRecord& record, std::size_t num_visual, std::size_t layer,
                                         double ratio);

struct CurvePoint {
    double alpha = 0.0;
    double pruning_ratio = 0.0;  // fraction of visual FLOPs removed
    double flops = 0.0;
};

std::vector<CurvePoint> alpha_ratio_curve(const AttentionStatistics& stats, const ModelConfig& config,
                                          std::span<const double> alphas);

}  // namespace fitprune::runtime
