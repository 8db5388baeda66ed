#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fitprune/error.hpp"

namespace fitprune {

/// Dense row-major attention matrix. Row = query position, column = key position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Token positions. Visual tokens occupy [0, N), text tokens [N, N+M).
using IndexSet = std::vector<std::size_t>;

inline constexpr double row_sum_tolerance = 1e-4;

/**
 * Decoder dimensions used by the FLOPs model and for validating attention dumps.
 *
 * The text block (num_text_tokens) includes any system prompt; it always follows
 * the visual block.
 */
struct ModelConfig {
    std::size_t num_layers = 0;
    std::size_t hidden_size = 0;
    std::size_t mlp_intermediate = 0;
    std::size_t num_visual_tokens = 0;
    std::size_t num_text_tokens = 0;
    std::size_t mlp_matmul_count = 3;

    std::size_t sequence_length() const {
        return num_visual_tokens + num_text_tokens;
    }

    /// Throws ValidationError if any dimension is out of range.
    void validate() const;

    /// Stable hex digest over every field; used to tie statistics and recipes to a config.
    std::string digest() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Head-averaged causal attention for one example, one matrix per layer.
struct AttentionRecord {
    std::vector<Matrix> matrices;
    std::string example_id;
};

enum class RecordViolation {
    layer_count_mismatch,
    dimension_mismatch,
    negative_entry,
    acausal_entry,
    non_stochastic_row,
};

const char* to_string(RecordViolation violation);

struct RecordValidation {
    std::optional<RecordViolation> violation;
    std::size_t layer = 0;
    std::size_t row = 0;
    std::size_t column = 0;
    std::string message;

    bool ok() const {
        return !violation.has_value();
    }
    explicit operator bool() const {
        return ok();
    }
};

/// Checks the record against the config; reports the first violated invariant.
RecordValidation validate_record(const AttentionRecord& record, const ModelConfig& config);

/// Throws ValidationError carrying the first violation, if any.
void require_valid_record(const AttentionRecord& record, const ModelConfig& config);

/// Received-attention statistics for one layer (visual tokens only).
struct LayerStatistics {
    std::vector<double> self_received;   // a_s: mass from visual queries, per visual token
    std::vector<double> cross_received;  // a_c: mass from text queries, per visual token
    double self_mean = 0.0;              // sum(a_s) / N
    double cross_mean = 0.0;             // sum(a_c) / M
};

struct AttentionStatistics {
    std::vector<LayerStatistics> layers;
    std::size_t sample_count = 0;
    std::string config_digest;

    std::size_t num_layers() const {
        return layers.size();
    }
    std::size_t num_visual_tokens() const {
        return layers.empty() ? 0 : layers.front().self_received.size();
    }
};

/// Throws ValidationError on digest or shape mismatch against the config.
void check_statistics(const AttentionStatistics& stats, const ModelConfig& config);

/// Per-layer counts of newly pruned visual tokens, plus search provenance.
struct PruningRecipe {
    std::vector<std::size_t> per_layer_counts;
    double alpha = 0.0;
    double predicted_flops = 0.0;
    double budget = 0.0;
    std::string config_digest;

    /// Running totals t_i = t_1* + ... + t_i*.
    std::vector<std::size_t> cumulative_counts() const;
    std::size_t total_pruned() const;
};

/// Recipe for a config that prunes nothing.
PruningRecipe zero_recipe(const ModelConfig& config);

/// Throws ValidationError if the recipe does not belong to the config or overruns N.
void check_recipe(const PruningRecipe& recipe, const ModelConfig& config);

enum class BudgetMode {
    absolute_flops,
    visual_reduction_ratio,
};

struct Budget {
    BudgetMode mode = BudgetMode::visual_reduction_ratio;
    double value = 0.0;

    static Budget absolute(double flops);
    static Budget visual_ratio(double ratio);

    void validate() const;
};

struct LayerDivergence {
    double self_before = 0.0;
    double self_after = 0.0;
    double cross_before = 0.0;
    double cross_after = 0.0;
    double self_divergence = 0.0;
    double cross_divergence = 0.0;
};

struct DivergenceReport {
    std::vector<LayerDivergence> layers;
    double total = 0.0;  // mean over layers of (self_divergence + cross_divergence)

    /// Recomputes `total` from the per-layer entries.
    void finalize();
};

/// |before - after| / before, with 0/0 taken as 0.
double relative_divergence(double before, double after);

/// Element-wise mean of reports with equal layer counts.
DivergenceReport average_reports(const std::vector<DivergenceReport>& reports);

}  // namespace fitprune
