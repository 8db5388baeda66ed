#include "fitprune/recipe_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fitprune/costmodel.hpp"

namespace fitprune::search {

void SearchParams::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
        throw ValidationError("epsilon must be positive");
    if (!(alpha_lo >= 0.0 && alpha_lo < alpha_hi && alpha_hi <= 1.0))
        throw ValidationError("alpha bounds must satisfy 0 <= alpha_lo < alpha_hi <= 1");
}

IndexSet greedy_prefix(std::span<const std::size_t> survivors, std::span<const double> weights, double alpha,
                       std::optional<double> reference) {
    if (survivors.size() != weights.size())
        throw ValidationError("survivor and weight vectors differ in length");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("alpha must lie in [0, 1]");
    if (survivors.empty())
        return {};

    std::vector<std::size_t> order(survivors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (weights[a] != weights[b])
            return weights[a] < weights[b];
        return survivors[a] < survivors[b];
    });

    // summed in removal order so the full prefix equals the total exactly
    double total = 0.0;
    for (auto k : order)
        total += weights[k];
    if (reference) {
        if (!(*reference >= 0.0) || !std::isfinite(*reference))
            throw ValidationError("reference mass must be finite and non-negative");
        total = std::max(total, *reference);
    }
    IndexSet removed;
    if (total <= 0.0) {
        if (alpha > 0.0) {
            for (auto k : order)
                removed.push_back(survivors[k]);
        }
        return removed;
    }

    double mass = 0.0;
    for (auto k : order) {
        const double next = mass + weights[k];
        if (next / total > alpha)
            break;
        mass = next;
        removed.push_back(survivors[k]);
    }
    return removed;
}

LayerPruneSet greedy_layer_sets(std::span<const std::size_t> survivors, std::span<const double> self_received,
                                std::span<const double> cross_received, double alpha,
                                std::optional<double> self_reference, std::optional<double> cross_reference) {
    LayerPruneSet sets;
    sets.self_set = greedy_prefix(survivors, self_received, alpha, self_reference);
    sets.cross_set = greedy_prefix(survivors, cross_received, alpha, cross_reference);

    IndexSet self_sorted = sets.self_set;
    IndexSet cross_sorted = sets.cross_set;
    std::sort(self_sorted.begin(), self_sorted.end());
    std::sort(cross_sorted.begin(), cross_sorted.end());
    std::set_intersection(self_sorted.begin(), self_sorted.end(), cross_sorted.begin(), cross_sorted.end(),
                          std::back_inserter(sets.pruned_set));
    return sets;
}

AlphaSweep recipe_for_alpha(const AttentionStatistics& stats, double alpha, const ModelConfig& config) {
    check_statistics(stats, config);

    AlphaSweep sweep;
    sweep.alpha = alpha;
    sweep.counts.reserve(config.num_layers);
    sweep.layers.reserve(config.num_layers);

    IndexSet survivors(config.num_visual_tokens);
    std::iota(survivors.begin(), survivors.end(), std::size_t{0});
    std::vector<double> self_w;
    std::vector<double> cross_w;

    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const auto& layer = stats.layers[i];
        self_w.clear();
        cross_w.clear();
        for (auto j : survivors) {
            self_w.push_back(layer.self_received[j]);
            cross_w.push_back(layer.cross_received[j]);
        }
        const double self_total = std::accumulate(layer.self_received.begin(), layer.self_received.end(), 0.0);
        const double cross_total = std::accumulate(layer.cross_received.begin(), layer.cross_received.end(), 0.0);
        LayerPruneSet sets = greedy_layer_sets(survivors, self_w, cross_w, alpha, self_total, cross_total);
        sets.layer_index = i;

        if (!sets.pruned_set.empty()) {
            IndexSet kept;
            kept.reserve(survivors.size() - sets.pruned_set.size());
            std::set_difference(survivors.begin(), survivors.end(), sets.pruned_set.begin(), sets.pruned_set.end(),
                                std::back_inserter(kept));
            survivors = std::move(kept);
        }
        sweep.counts.push_back(sets.count());
        sweep.layers.push_back(std::move(sets));
    }
    return sweep;
}

std::size_t expected_iterations(const SearchParams& params) {
    params.validate();
    const double ratio = (params.alpha_hi - params.alpha_lo) / params.epsilon;
    if (ratio <= 1.0)
        return 0;
    return static_cast<std::size_t>(std::ceil(std::log2(ratio)));
}

SearchResult search(const AttentionStatistics& stats, const Budget& budget, const SearchParams& params,
                    const ModelConfig& config) {
    params.validate();
    check_statistics(stats, config);
    const double delta = costmodel::resolve_budget(budget, config);

    auto flops_at = [&](const AlphaSweep& sweep) {
        return costmodel::total_flops(std::span<const std::size_t>(sweep.counts), config).total;
    };

    const AlphaSweep widest = recipe_for_alpha(stats, params.alpha_hi, config);
    const double widest_flops = flops_at(widest);
    if (widest_flops > delta)
        throw InfeasibleBudgetError(delta, widest_flops);

    SearchResult result;
    double lo = params.alpha_lo;
    double hi = params.alpha_hi;
    bool lo_moved = false;
    while (hi - lo > params.epsilon) {
        SearchIteration step;
        step.iteration = result.trace.size() + 1;
        step.alpha_lo = lo;
        step.alpha_hi = hi;
        step.midpoint = (lo + hi) / 2.0;
        step.flops = flops_at(recipe_for_alpha(stats, step.midpoint, config));
        step.feasible = step.flops <= delta;
        if (step.feasible) {
            hi = step.midpoint;
        } else {
            lo = step.midpoint;
            lo_moved = true;
        }
        result.trace.push_back(step);
    }

    AlphaSweep chosen = recipe_for_alpha(stats, hi, config);
    double chosen_flops = flops_at(chosen);

    const AlphaSweep lower = recipe_for_alpha(stats, lo, config);
    const double lower_flops = flops_at(lower);
    if (!lo_moved && lower_flops <= delta) {
        chosen = lower;
        chosen_flops = lower_flops;
    } else if (chosen_flops > lower_flops) {
        throw Error(ErrorKind::search_anomaly,
                    "non-monotone-anomaly: recipe at alpha " + std::to_string(hi) + " costs " +
                        std::to_string(chosen_flops) + " FLOPs, more than " + std::to_string(lower_flops) +
                        " at alpha " + std::to_string(lo));
    }

    if (chosen_flops > delta) {
        throw Error(ErrorKind::search_anomaly,
                    "non-monotone-anomaly: recipe at feasible bound " + std::to_string(chosen.alpha) +
                        " exceeds the budget");
    }

    result.recipe.per_layer_counts = std::move(chosen.counts);
    result.recipe.alpha = chosen.alpha;
    result.recipe.predicted_flops = chosen_flops;
    result.recipe.budget = delta;
    result.recipe.config_digest = config.digest();
    return result;
}

}  // namespace fitprune::search
