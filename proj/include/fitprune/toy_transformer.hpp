#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fitprune/core.hpp"
#include "fitprune/runtime.hpp"

namespace fitprune::toy {

struct ToyTransformerConfig {
    ModelConfig model;
    std::size_t num_heads = 4;
    std::uint64_t seed = 0;
    double weight_scale = 1.0;
    double example_noise = 0.3;  // stddev of the per-example perturbation of every input embedding
    double salience_bias = 2.0;  // weight of the shared key-salience term in every head's logits

    void validate() const;
};

struct ToyRun {
    AttentionRecord attention;               // head-averaged, post-pruning side at every layer
    std::vector<std::vector<Matrix>> head_attention;  // [layer][head], same sides as `attention`
    std::vector<IndexSet> pruned_per_layer;  // newly dropped visual ids per layer, ascending
    IndexSet final_positions;                // original positions of the surviving tokens
    Matrix final_states;                     // one row per surviving token
};

/**
 * Seeded decoder-only stack: pre-norm causal multi-head attention followed by a
 * GELU MLP, both with residual connections. Sinusoidal position encodings are
 * added once at the input, so dropped tokens never shift anyone's position.
 *
 * Every visual token carries a fixed coefficient along a model-wide salience
 * direction u. Each head adds salience_bias * <LN(x_c), u> / sqrt(d) to the logits
 * of key c (a query bias shared by all queries), so the same tokens draw attention
 * at every depth.
 *
 * When a layer has a pruning count, its attention is first computed over the
 * current survivors to rank visual tokens; the chosen tokens are then removed and
 * the layer's softmax is recomputed over the remaining keys before the layer output.
 */
class ToyTransformer {
public:
    explicit ToyTransformer(const ToyTransformerConfig& config);

    const ToyTransformerConfig& config() const {
        return m_config;
    }

    /// N visual + M text embeddings. Visual tokens share per-model prototypes and
    /// saliences; each example adds its own perturbation.
    Matrix synthetic_inputs(std::uint64_t example_seed) const;

    /// Forward pass. `counts` empty means no pruning; otherwise it has one entry per layer.
    ToyRun forward(const Matrix& inputs, std::span<const std::size_t> counts,
                   const runtime::TokenSelector& selector = runtime::combined_importance_selector()) const;

private:
    struct Layer {
        Matrix wq, wk, wv, wo, w_up, w_down;
    };

    ToyTransformerConfig m_config;
    std::vector<Layer> m_layers;
    Matrix m_visual_prototypes;
    std::vector<double> m_visual_salience;
    Eigen::RowVectorXd m_salience_direction;
    Matrix m_text_prototypes;
};

/// Runs the model on the inputs derived from config.seed. The recipe, when given,
/// must belong to config.model.
ToyRun run_toy_transformer(const ToyTransformerConfig& config, const std::optional<PruningRecipe>& recipe);

/// Single-shot random or cross-attention baselines on the toy model (pruning at `layer`, 1-based).
ToyRun baseline_random(const ToyTransformerConfig& config, std::size_t layer, double ratio, std::uint64_t seed);
ToyRun baseline_crossattn_once(const ToyTransformerConfig& config, std::size_t layer, double ratio);

/// ||pruned - reference|| / ||reference|| over the text-token rows of the final states.
double text_state_deviation(const ToyRun& reference, const ToyRun& pruned, std::size_t num_visual);

}  // namespace fitprune::toy
