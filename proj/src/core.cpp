#include "fitprune/core.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace fitprune {

namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

RecordValidation violation_at(RecordViolation kind, std::size_t layer, std::size_t row, std::size_t column,
                              std::string message) {
    RecordValidation result;
    result.violation = kind;
    result.layer = layer;
    result.row = row;
    result.column = column;
    result.message = std::move(message);
    return result;
}

}  // namespace

void ModelConfig::validate() const {
    if (num_layers == 0)
        throw ValidationError("model config: num_layers must be >= 1");
    if (hidden_size == 0)
        throw ValidationError("model config: hidden_size must be >= 1");
    if (mlp_intermediate == 0)
        throw ValidationError("model config: mlp_intermediate must be >= 1");
    if (num_visual_tokens == 0)
        throw ValidationError("model config: num_visual_tokens must be >= 1");
    if (mlp_matmul_count == 0)
        throw ValidationError("model config: mlp_matmul_count must be >= 1");
}

std::string ModelConfig::digest() const {
    std::ostringstream canonical;
    canonical << "K=" << num_layers << ";d=" << hidden_size << ";dff=" << mlp_intermediate
              << ";N=" << num_visual_tokens << ";M=" << num_text_tokens << ";mlp=" << mlp_matmul_count;
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical.str());
    return hex.str();
}

const char* to_string(RecordViolation violation) {
    switch (violation) {
    case RecordViolation::layer_count_mismatch:
        return "layer-count-mismatch";
    case RecordViolation::dimension_mismatch:
        return "dimension-mismatch";
    case RecordViolation::negative_entry:
        return "negative-entry";
    case RecordViolation::acausal_entry:
        return "acausal-entry";
    case RecordViolation::non_stochastic_row:
        return "non-stochastic-row";
    }
    return "unknown";
}

RecordValidation validate_record(const AttentionRecord& record, const ModelConfig& config) {
    if (record.matrices.size() != config.num_layers) {
        return violation_at(RecordViolation::layer_count_mismatch, 0, 0, 0,
                            "expected " + std::to_string(config.num_layers) + " layers, got " +
                                std::to_string(record.matrices.size()));
    }
    const auto side = static_cast<Eigen::Index>(config.sequence_length());
    for (std::size_t layer = 0; layer < record.matrices.size(); ++layer) {
        const Matrix& a = record.matrices[layer];
        if (a.rows() != side || a.cols() != side) {
            return violation_at(RecordViolation::dimension_mismatch, layer, 0, 0,
                                "layer " + std::to_string(layer) + " is " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + ", expected side " + std::to_string(side));
        }
        for (Eigen::Index r = 0; r < side; ++r) {
            double sum = 0.0;
            for (Eigen::Index c = 0; c < side; ++c) {
                const double v = a(r, c);
                if (!(v >= 0.0)) {
                    return violation_at(RecordViolation::negative_entry, layer, r, c,
                                        "negative entry at layer " + std::to_string(layer) + " (" +
                                            std::to_string(r) + "," + std::to_string(c) + ")");
                }
                if (c > r && v > 0.0) {
                    return violation_at(RecordViolation::acausal_entry, layer, r, c,
                                        "entry above the diagonal at layer " + std::to_string(layer) + " (" +
                                            std::to_string(r) + "," + std::to_string(c) + ")");
                }
                if (v > 1.0 + row_sum_tolerance) {
                    return violation_at(RecordViolation::non_stochastic_row, layer, r, c,
                                        "entry above 1 at layer " + std::to_string(layer));
                }
                sum += v;
            }
            if (std::abs(sum - 1.0) > row_sum_tolerance) {
                return violation_at(RecordViolation::non_stochastic_row, layer, r, 0,
                                    "row " + std::to_string(r) + " of layer " + std::to_string(layer) +
                                        " sums to " + std::to_string(sum));
            }
        }
    }
    return {};
}

void require_valid_record(const AttentionRecord& record, const ModelConfig& config) {
    const auto result = validate_record(record, config);
    if (!result.ok()) {
        std::string id = record.example_id.empty() ? std::string{} : " [" + record.example_id + "]";
        throw ValidationError(std::string(to_string(*result.violation)) + id + ": " + result.message);
    }
}

void check_statistics(const AttentionStatistics& stats, const ModelConfig& config) {
    if (stats.config_digest != config.digest()) {
        throw ValidationError("statistics config digest " + stats.config_digest + " does not match model config " +
                              config.digest());
    }
    if (stats.layers.size() != config.num_layers)
        throw ValidationError("statistics layer count does not match model config");
    for (const auto& layer : stats.layers) {
        if (layer.self_received.size() != config.num_visual_tokens ||
            layer.cross_received.size() != config.num_visual_tokens) {
            throw ValidationError("statistics vector length does not match num_visual_tokens");
        }
    }
}

std::vector<std::size_t> PruningRecipe::cumulative_counts() const {
    std::vector<std::size_t> cumulative(per_layer_counts.size());
    std::partial_sum(per_layer_counts.begin(), per_layer_counts.end(), cumulative.begin());
    return cumulative;
}

std::size_t PruningRecipe::total_pruned() const {
    return std::accumulate(per_layer_counts.begin(), per_layer_counts.end(), std::size_t{0});
}

PruningRecipe zero_recipe(const ModelConfig& config) {
    PruningRecipe recipe;
    recipe.per_layer_counts.assign(config.num_layers, 0);
    recipe.config_digest = config.digest();
    return recipe;
}

void check_recipe(const PruningRecipe& recipe, const ModelConfig& config) {
    if (recipe.config_digest != config.digest()) {
        throw ValidationError("recipe config digest " + recipe.config_digest + " does not match model config " +
                              config.digest());
    }
    if (recipe.per_layer_counts.size() != config.num_layers)
        throw ValidationError("recipe has " + std::to_string(recipe.per_layer_counts.size()) + " layers, expected " +
                              std::to_string(config.num_layers));
    if (recipe.total_pruned() > config.num_visual_tokens)
        throw ValidationError("recipe prunes " + std::to_string(recipe.total_pruned()) + " tokens but only " +
                              std::to_string(config.num_visual_tokens) + " are visual");
}

Budget Budget::absolute(double flops) {
    Budget budget{BudgetMode::absolute_flops, flops};
    budget.validate();
    return budget;
}

Budget Budget::visual_ratio(double ratio) {
    Budget budget{BudgetMode::visual_reduction_ratio, ratio};
    budget.validate();
    return budget;
}

void Budget::validate() const {
    if (!(value >= 0.0) || !std::isfinite(value))
        throw ValidationError("budget value must be a finite non-negative number");
    if (mode == BudgetMode::visual_reduction_ratio && value > 1.0)
        throw ValidationError("visual reduction ratio must lie in [0, 1]");
}

void DivergenceReport::finalize() {
    if (layers.empty()) {
        total = 0.0;
        return;
    }
    double sum = 0.0;
    for (const auto& layer : layers)
        sum += layer.self_divergence + layer.cross_divergence;
    total = sum / static_cast<double>(layers.size());
}

double relative_divergence(double before, double after) {
    if (before == 0.0)
        return after == 0.0 ? 0.0 : 1.0;
    return std::abs(before - after) / before;
}

DivergenceReport average_reports(const std::vector<DivergenceReport>& reports) {
    DivergenceReport mean;
    if (reports.empty())
        return mean;
    const std::size_t layers = reports.front().layers.size();
    mean.layers.resize(layers);
    for (const auto& report : reports) {
        if (report.layers.size() != layers)
            throw ValidationError("cannot average divergence reports with different layer counts");
        for (std::size_t i = 0; i < layers; ++i) {
            auto& acc = mean.layers[i];
            const auto& cur = report.layers[i];
            acc.self_before += cur.self_before;
            acc.self_after += cur.self_after;
            acc.cross_before += cur.cross_before;
            acc.cross_after += cur.cross_after;
            acc.self_divergence += cur.self_divergence;
            acc.cross_divergence += cur.cross_divergence;
        }
    }
    const double n = static_cast<double>(reports.size());
    for (auto& acc : mean.layers) {
        acc.self_before /= n;
        acc.self_after /= n;
        acc.cross_before /= n;
        acc.cross_after /= n;
        acc.self_divergence /= n;
        acc.cross_divergence /= n;
    }
    mean.finalize();
    return mean;
}

}  // namespace fitprune
