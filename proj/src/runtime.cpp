#include "fitprune/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "fitprune/costmodel.hpp"

namespace fitprune::runtime {

namespace {

struct BlockMeans {
    double self = 0.0;
    double cross = 0.0;
};

// Averaged visual->visual and text->visual mass of a matrix whose first
// `visual` rows/columns are visual tokens.
BlockMeans block_means(const Matrix& a, std::size_t visual) {
    const auto side = a.rows();
    const auto r = static_cast<Eigen::Index>(visual);
    const auto m = side - r;
    BlockMeans means;
    if (r > 0)
        means.self = a.topLeftCorner(r, r).sum() / static_cast<double>(r);
    if (r > 0 && m > 0)
        means.cross = a.bottomLeftCorner(m, r).sum() / static_cast<double>(m);
    return means;
}

std::vector<std::size_t> keep_positions(const IndexSet& visual_survivors, std::size_t num_visual, std::size_t side) {
    std::vector<std::size_t> keep(visual_survivors.begin(), visual_survivors.end());
    for (std::size_t p = num_visual; p < side; ++p)
        keep.push_back(p);
    return keep;
}

IndexSet lowest_by(const RuntimeAttentionSnapshot& snapshot, const std::vector<double>& score, std::size_t count) {
    const std::size_t r = snapshot.tokens.size();
    if (count > r) {
        throw ValidationError("count-exceeds-survivors: asked to prune " + std::to_string(count) + " of " +
                              std::to_string(r) + " surviving tokens at layer " +
                              std::to_string(snapshot.layer_index + 1));
    }
    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (score[a] != score[b])
                              return score[a] < score[b];
                          return snapshot.tokens[a] < snapshot.tokens[b];
                      });
    IndexSet chosen;
    chosen.reserve(count);
    for (std::size_t k = 0; k < count; ++k)
        chosen.push_back(snapshot.tokens[order[k]]);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

void check_layer_and_ratio(std::size_t num_layers, std::size_t layer, double ratio) {
    if (layer < 1 || layer > num_layers)
        throw ValidationError("layer must lie in 1.." + std::to_string(num_layers));
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw ValidationError("ratio must lie in [0, 1]");
}

}  // namespace

RuntimeAttentionSnapshot make_snapshot(const Matrix& attention, const IndexSet& visual_tokens,
                                       std::size_t layer_index) {
    const auto r = static_cast<Eigen::Index>(visual_tokens.size());
    if (attention.rows() != attention.cols() || attention.rows() < r)
        throw ValidationError("attention matrix is smaller than the surviving visual block");
    const auto m = attention.rows() - r;

    RuntimeAttentionSnapshot snapshot;
    snapshot.layer_index = layer_index;
    snapshot.tokens = visual_tokens;
    snapshot.self_received.resize(visual_tokens.size());
    snapshot.cross_received.resize(visual_tokens.size());
    snapshot.combined.resize(visual_tokens.size());
    for (Eigen::Index j = 0; j < r; ++j) {
        const double self = attention.col(j).head(r).sum();
        const double cross = attention.col(j).tail(m).sum();
        snapshot.self_received[j] = self;
        snapshot.cross_received[j] = cross;
        snapshot.combined[j] = self * cross;
    }
    return snapshot;
}

IndexSet select_pruned_tokens(const RuntimeAttentionSnapshot& snapshot, std::size_t count) {
    return lowest_by(snapshot, snapshot.combined, count);
}

TokenSelector combined_importance_selector() {
    return [](const RuntimeAttentionSnapshot& snapshot, std::size_t count) {
        return select_pruned_tokens(snapshot, count);
    };
}

TokenSelector cross_attention_selector() {
    return [](const RuntimeAttentionSnapshot& snapshot, std::size_t count) {
        return lowest_by(snapshot, snapshot.cross_received, count);
    };
}

TokenSelector random_selector(std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    return [rng](const RuntimeAttentionSnapshot& snapshot, std::size_t count) {
        const std::size_t r = snapshot.tokens.size();
        if (count > r)
            throw ValidationError("count-exceeds-survivors: asked to prune " + std::to_string(count) + " of " +
                                  std::to_string(r));
        IndexSet pool = snapshot.tokens;
        for (std::size_t k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, r - 1);
            std::swap(pool[k], pool[pick(*rng)]);
        }
        IndexSet chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    };
}

Matrix restrict_and_renormalize(const Matrix& attention, std::span<const std::size_t> positions) {
    const auto n = static_cast<Eigen::Index>(positions.size());
    Matrix out(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c)
            out(r, c) = attention(static_cast<Eigen::Index>(positions[r]), static_cast<Eigen::Index>(positions[c]));
        const double sum = out.row(r).sum();
        if (sum > 0.0)
            out.row(r) /= sum;
    }
    return out;
}

SimulationResult simulate_pruned_attention(const AttentionRecord& record, std::size_t num_visual,
                                           std::span<const IndexSet> pruned_per_layer) {
    if (pruned_per_layer.size() != record.matrices.size()) {
        throw ValidationError("got prune sets for " + std::to_string(pruned_per_layer.size()) + " layers, record has " +
                              std::to_string(record.matrices.size()));
    }
    SimulationResult result;
    result.pruned.example_id = record.example_id;
    result.pruned.matrices.reserve(record.matrices.size());
    result.report.layers.reserve(record.matrices.size());

    std::vector<bool> pruned(num_visual, false);
    std::size_t pruned_total = 0;
    for (std::size_t i = 0; i < record.matrices.size(); ++i) {
        const Matrix& a = record.matrices[i];
        const auto side = static_cast<std::size_t>(a.rows());
        if (side < num_visual || a.cols() != a.rows())
            throw ValidationError("layer " + std::to_string(i + 1) + " matrix is not square over N + M tokens");

        IndexSet fresh = pruned_per_layer[i];
        std::sort(fresh.begin(), fresh.end());
        for (auto id : fresh) {
            if (id >= num_visual)
                throw ValidationError("cannot prune text token at position " + std::to_string(id));
            if (pruned[id])
                throw ValidationError("token " + std::to_string(id) + " pruned twice (again at layer " +
                                      std::to_string(i + 1) + ")");
            pruned[id] = true;
            ++pruned_total;
        }

        IndexSet survivors;
        survivors.reserve(num_visual - pruned_total);
        for (std::size_t j = 0; j < num_visual; ++j) {
            if (!pruned[j])
                survivors.push_back(j);
        }
        const auto keep = keep_positions(survivors, num_visual, side);
        Matrix after = restrict_and_renormalize(a, keep);

        const BlockMeans before_means = block_means(a, num_visual);
        const BlockMeans after_means = block_means(after, survivors.size());
        LayerDivergence layer;
        layer.self_before = before_means.self;
        layer.self_after = after_means.self;
        layer.cross_before = before_means.cross;
        layer.cross_after = after_means.cross;
        layer.self_divergence = relative_divergence(layer.self_before, layer.self_after);
        layer.cross_divergence = relative_divergence(layer.cross_before, layer.cross_after);
        result.report.layers.push_back(layer);

        result.pruned.matrices.push_back(std::move(after));
        result.pruned_per_layer.push_back(std::move(fresh));
    }
    result.report.finalize();
    return result;
}

SimulationResult simulate_schedule(const AttentionRecord& record, std::size_t num_visual,
                                   std::span<const std::size_t> counts, const TokenSelector& selector) {
    if (counts.size() != record.matrices.size())
        throw ValidationError("schedule length does not match the record's layer count");

    IndexSet survivors(num_visual);
    std::iota(survivors.begin(), survivors.end(), std::size_t{0});
    std::vector<IndexSet> chosen_per_layer(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0)
            continue;
        if (counts[i] > survivors.size())
            throw ValidationError("cumulative schedule exceeds N at layer " + std::to_string(i + 1));
        const Matrix& a = record.matrices[i];
        const auto keep = keep_positions(survivors, num_visual, static_cast<std::size_t>(a.rows()));
        const auto snapshot = make_snapshot(restrict_and_renormalize(a, keep), survivors, i);
        IndexSet chosen = selector(snapshot, counts[i]);
        if (chosen.size() != counts[i])
            throw ValidationError("token selector returned the wrong number of tokens");
        IndexSet kept;
        std::set_difference(survivors.begin(), survivors.end(), chosen.begin(), chosen.end(),
                            std::back_inserter(kept));
        survivors = std::move(kept);
        chosen_per_layer[i] = std::move(chosen);
    }
    return simulate_pruned_attention(record, num_visual, chosen_per_layer);
}

DivergenceReport removed_mass_report(const AttentionStatistics& stats, const search::AlphaSweep& sweep) {
    if (sweep.layers.size() != stats.layers.size())
        throw ValidationError("sweep and statistics differ in layer count");
    const std::size_t n = stats.num_visual_tokens();
    std::vector<bool> alive(n, true);
    std::size_t alive_count = n;

    DivergenceReport report;
    for (std::size_t i = 0; i < stats.layers.size(); ++i) {
        const auto& layer = stats.layers[i];
        const double total_self = std::accumulate(layer.self_received.begin(), layer.self_received.end(), 0.0);
        const double total_cross = std::accumulate(layer.cross_received.begin(), layer.cross_received.end(), 0.0);
        double self_mass = 0.0;
        double cross_mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (alive[j]) {
                self_mass += layer.self_received[j];
                cross_mass += layer.cross_received[j];
            }
        }
        double self_removed = 0.0;
        double cross_removed = 0.0;
        for (auto j : sweep.layers[i].pruned_set) {
            self_removed += layer.self_received[j];
            cross_removed += layer.cross_received[j];
            alive[j] = false;
        }
        const std::size_t before_count = alive_count;
        alive_count -= sweep.layers[i].pruned_set.size();

        const double cross_scale = total_cross > 0.0 ? layer.cross_mean / total_cross : 0.0;
        LayerDivergence entry;
        entry.self_before = before_count ? self_mass / static_cast<double>(before_count) : 0.0;
        entry.self_after = alive_count ? (self_mass - self_removed) / static_cast<double>(alive_count) : 0.0;
        entry.cross_before = cross_mass * cross_scale;
        entry.cross_after = (cross_mass - cross_removed) * cross_scale;
        entry.self_divergence = total_self > 0.0 ? self_removed / total_self : 0.0;
        entry.cross_divergence = total_cross > 0.0 ? cross_removed / total_cross : 0.0;
        report.layers.push_back(entry);
    }
    report.finalize();
    return report;
}

std::vector<std::size_t> single_shot_schedule(std::size_t num_layers, std::size_t num_visual, std::size_t layer,
                                              double ratio) {
    check_layer_and_ratio(num_layers, layer, ratio);
    std::vector<std::size_t> counts(num_layers, 0);
    counts[layer - 1] = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_visual)));
    return counts;
}

SimulationResult baseline_random(const AttentionRecord& record, std::size_t num_visual, std::size_t layer,
                                 double ratio, std::uint64_t seed) {
    const auto counts = single_shot_schedule(record.matrices.size(), num_visual, layer, ratio);
    return simulate_schedule(record, num_visual, counts, random_selector(seed));
}

SimulationResult baseline_crossattn_once(const AttentionRecord& record, std::size_t num_visual, std::size_t layer,
                                         double ratio) {
    const auto counts = single_shot_schedule(record.matrices.size(), num_visual, layer, ratio);
    return simulate_schedule(record, num_visual, counts, cross_attention_selector());
}

std::vector<CurvePoint> alpha_ratio_curve(const AttentionStatistics& stats, const ModelConfig& config,
                                          std::span<const double> alphas) {
    std::vector<CurvePoint> curve;
    curve.reserve(alphas.size());
    for (double alpha : alphas) {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw ValidationError("curve alphas must lie in [0, 1]");
        const auto sweep = search::recipe_for_alpha(stats, alpha, config);
        CurvePoint point;
        point.alpha = alpha;
        point.flops = costmodel::total_flops(std::span<const std::size_t>(sweep.counts), config).total;
        point.pruning_ratio = costmodel::visual_reduction(point.flops, config);
        curve.push_back(point);
    }
    return curve;
}

}  // namespace fitprune::runtime
