#include "fitprune/toy_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace fitprune::toy {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Matrix gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = dist(rng);
    return m;
}

Matrix layer_norm(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / d;
        out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + 1e-5);
    }
    return out;
}

Matrix gelu(const Matrix& x) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return x.unaryExpr([c](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); });
}

// Row softmax over the causal lower triangle; entries above the diagonal are 0.
Matrix causal_softmax(const Matrix& logits) {
    const auto n = logits.rows();
    Matrix p = Matrix::Zero(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double peak = logits.row(r).head(r + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c <= r; ++c) {
            const double e = std::exp(logits(r, c) - peak);
            p(r, c) = e;
            sum += e;
        }
        p.row(r).head(r + 1) /= sum;
    }
    return p;
}

Matrix take_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

Matrix take_square(const Matrix& m, std::span<const Eigen::Index> idx) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Matrix out(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c)
            out(r, c) = m(idx[r], idx[c]);
    return out;
}

}  // namespace

void ToyTransformerConfig::validate() const {
    model.validate();
    if (num_heads == 0 || model.hidden_size % num_heads != 0)
        throw ValidationError("toy transformer: hidden_size must be divisible by num_heads");
    if (!(weight_scale > 0.0) || !std::isfinite(weight_scale))
        throw ValidationError("toy transformer: weight_scale must be positive");
    if (!(example_noise >= 0.0) || !std::isfinite(example_noise))
        throw ValidationError("toy transformer: example_noise must be non-negative");
    if (!std::isfinite(salience_bias))
        throw ValidationError("toy transformer: salience_bias must be finite");
}

ToyTransformer::ToyTransformer(const ToyTransformerConfig& config) : m_config(config) {
    m_config.validate();
    const std::size_t d = config.model.hidden_size;
    const std::size_t d_ff = config.model.mlp_intermediate;
    const double s = config.weight_scale;
    std::mt19937_64 rng(splitmix64(config.seed));

    m_layers.reserve(config.model.num_layers);
    for (std::size_t i = 0; i < config.model.num_layers; ++i) {
        Layer layer;
        const double in_std = s / std::sqrt(static_cast<double>(d));
        layer.wq = gaussian(rng, d, d, in_std);
        layer.wk = gaussian(rng, d, d, in_std);
        layer.wv = gaussian(rng, d, d, in_std);
        layer.wo = gaussian(rng, d, d, in_std);
        layer.w_up = gaussian(rng, d, d_ff, in_std);
        layer.w_down = gaussian(rng, d_ff, d, s / std::sqrt(static_cast<double>(d_ff)));
        m_layers.push_back(std::move(layer));
    }

    m_visual_prototypes = gaussian(rng, config.model.num_visual_tokens, d, 1.0);
    m_text_prototypes = gaussian(rng, config.model.num_text_tokens, d, 1.0);
    std::normal_distribution<double> salience(0.0, 1.0);
    m_visual_salience.resize(config.model.num_visual_tokens);
    for (auto& v : m_visual_salience)
        v = salience(rng);
    m_salience_direction = gaussian(rng, 1, d, 1.0);
    m_salience_direction.normalize();
}

Matrix ToyTransformer::synthetic_inputs(std::uint64_t example_seed) const {
    const std::size_t n = m_config.model.num_visual_tokens;
    const std::size_t m = m_config.model.num_text_tokens;
    const std::size_t d = m_config.model.hidden_size;
    std::mt19937_64 rng(splitmix64(splitmix64(m_config.seed) ^ splitmix64(example_seed + 1)));

    Matrix x(n + m, d);
    const Matrix visual_noise = gaussian(rng, n, d, m_config.example_noise);
    const Matrix text_noise = gaussian(rng, m, d, m_config.example_noise);
    for (std::size_t j = 0; j < n; ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        x.row(r) = m_visual_prototypes.row(r) +
                   m_visual_salience[j] * std::sqrt(static_cast<double>(d)) * m_salience_direction +
                   visual_noise.row(r);
    }
    for (std::size_t j = 0; j < m; ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        x.row(static_cast<Eigen::Index>(n + j)) = m_text_prototypes.row(r) + text_noise.row(r);
    }
    for (Eigen::Index p = 0; p < x.rows(); ++p) {
        for (std::size_t k = 0; k < d; ++k) {
            const double freq = std::pow(10000.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(d));
            const double angle = static_cast<double>(p) * freq;
            x(p, static_cast<Eigen::Index>(k)) += (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return x;
}

ToyRun ToyTransformer::forward(const Matrix& inputs, std::span<const std::size_t> counts,
                               const runtime::TokenSelector& selector) const {
    const ModelConfig& model = m_config.model;
    const std::size_t num_visual = model.num_visual_tokens;
    if (static_cast<std::size_t>(inputs.rows()) != model.sequence_length() ||
        static_cast<std::size_t>(inputs.cols()) != model.hidden_size)
        throw ValidationError("toy transformer inputs must be (N + M) x hidden_size");
    if (!counts.empty()) {
        if (counts.size() != model.num_layers)
            throw ValidationError("pruning schedule length does not match num_layers");
        if (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) > num_visual)
            throw ValidationError("cumulative recipe exceeds N");
    }

    const std::size_t heads = m_config.num_heads;
    const auto head_dim = static_cast<Eigen::Index>(model.hidden_size / heads);
    const double logit_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const auto d = static_cast<double>(model.hidden_size);

    ToyRun run;
    run.attention.example_id = "toy";
    run.pruned_per_layer.assign(model.num_layers, {});
    Matrix x = inputs;
    IndexSet positions(model.sequence_length());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    IndexSet visual(num_visual);
    std::iota(visual.begin(), visual.end(), std::size_t{0});

    for (std::size_t l = 0; l < model.num_layers; ++l) {
        const Layer& layer = m_layers[l];
        const Matrix xn = layer_norm(x);
        Matrix q = xn * layer.wq;
        Matrix k = xn * layer.wk;
        Matrix v = xn * layer.wv;

        const Eigen::RowVectorXd key_bias =
            (xn * m_salience_direction.transpose()).transpose() * (m_config.salience_bias / std::sqrt(d));

        std::vector<Matrix> logits(heads);
        std::vector<Matrix> probs(heads);
        Matrix averaged = Matrix::Zero(x.rows(), x.rows());
        for (std::size_t h = 0; h < heads; ++h) {
            const auto col = static_cast<Eigen::Index>(h) * head_dim;
            logits[h] = (q.middleCols(col, head_dim) * k.middleCols(col, head_dim).transpose()) * logit_scale;
            logits[h].rowwise() += key_bias;
            probs[h] = causal_softmax(logits[h]);
            averaged += probs[h];
        }
        averaged /= static_cast<double>(heads);

        const std::size_t drop = counts.empty() ? 0 : counts[l];
        if (drop > 0) {
            const auto snapshot = runtime::make_snapshot(averaged, visual, l);
            IndexSet chosen = selector(snapshot, drop);
            if (chosen.size() != drop)
                throw ValidationError("token selector returned the wrong number of tokens");

            std::vector<Eigen::Index> keep;
            IndexSet kept_visual;
            for (std::size_t j = 0; j < visual.size(); ++j) {
                if (!std::binary_search(chosen.begin(), chosen.end(), visual[j])) {
                    keep.push_back(static_cast<Eigen::Index>(j));
                    kept_visual.push_back(visual[j]);
                }
            }
            for (auto r = static_cast<Eigen::Index>(visual.size()); r < x.rows(); ++r)
                keep.push_back(r);

            x = take_rows(x, keep);
            v = take_rows(v, keep);
            IndexSet kept_positions;
            for (auto r : keep)
                kept_positions.push_back(positions[static_cast<std::size_t>(r)]);
            positions = std::move(kept_positions);
            visual = std::move(kept_visual);

            averaged = Matrix::Zero(x.rows(), x.rows());
            for (std::size_t h = 0; h < heads; ++h) {
                probs[h] = causal_softmax(take_square(logits[h], keep));
                averaged += probs[h];
            }
            averaged /= static_cast<double>(heads);
            run.pruned_per_layer[l] = std::move(chosen);
        }

        Matrix context(x.rows(), static_cast<Eigen::Index>(model.hidden_size));
        for (std::size_t h = 0; h < heads; ++h) {
            const auto col = static_cast<Eigen::Index>(h) * head_dim;
            context.middleCols(col, head_dim) = probs[h] * v.middleCols(col, head_dim);
        }
        x += context * layer.wo;
        x += gelu(layer_norm(x) * layer.w_up) * layer.w_down;

        run.attention.matrices.push_back(std::move(averaged));
        run.head_attention.push_back(std::move(probs));
    }
    run.final_positions = std::move(positions);
    run.final_states = std::move(x);
    return run;
}

ToyRun run_toy_transformer(const ToyTransformerConfig& config, const std::optional<PruningRecipe>& recipe) {
    const ToyTransformer model(config);
    const Matrix inputs = model.synthetic_inputs(0);
    if (!recipe)
        return model.forward(inputs, {});
    check_recipe(*recipe, config.model);
    return model.forward(inputs, recipe->per_layer_counts);
}

ToyRun baseline_random(const ToyTransformerConfig& config, std::size_t layer, double ratio, std::uint64_t seed) {
    const ToyTransformer model(config);
    const auto counts =
        runtime::single_shot_schedule(config.model.num_layers, config.model.num_visual_tokens, layer, ratio);
    return model.forward(model.synthetic_inputs(0), counts, runtime::random_selector(seed));
}

ToyRun baseline_crossattn_once(const ToyTransformerConfig& config, std::size_t layer, double ratio) {
    const ToyTransformer model(config);
    const auto counts =
        runtime::single_shot_schedule(config.model.num_layers, config.model.num_visual_tokens, layer, ratio);
    return model.forward(model.synthetic_inputs(0), counts, runtime::cross_attention_selector());
}

double text_state_deviation(const ToyRun& reference, const ToyRun& pruned, std::size_t num_visual) {
    auto text_rows = [num_visual](const ToyRun& run) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < run.final_positions.size(); ++i) {
            if (run.final_positions[i] >= num_visual)
                rows.push_back(static_cast<Eigen::Index>(i));
        }
        return take_rows(run.final_states, rows);
    };
    const Matrix ref = text_rows(reference);
    const Matrix cur = text_rows(pruned);
    if (ref.rows() != cur.rows() || ref.rows() == 0)
        return 0.0;
    const double norm = ref.norm();
    return norm > 0.0 ? (cur - ref).norm() / norm : 0.0;
}

}  // namespace fitprune::toy
