#include <random>

#include <gtest/gtest.h>

#include "fitprune/costmodel.hpp"
#include "oracles.hpp"

using namespace fitprune;
using namespace fitprune::costmodel;

namespace {

ModelConfig tiny(std::size_t k, std::size_t n, std::size_t m) {
    ModelConfig c;
    c.num_layers = k;
    c.hidden_size = 2;
    c.mlp_intermediate = 4;
    c.num_visual_tokens = n;
    c.num_text_tokens = m;
    return c;
}

ModelConfig llava(std::size_t text_tokens) {
    ModelConfig c;
    c.num_layers = 32;
    c.hidden_size = 4096;
    c.mlp_intermediate = 11008;
    c.num_visual_tokens = 576;
    c.num_text_tokens = text_tokens;
    return c;
}

}  // namespace

TEST(LayerFlops, EmptySequenceCostsNothing) {
    const auto f = layer_flops(0, tiny(1, 1, 0));
    EXPECT_EQ(f.projection, 0.0);
    EXPECT_EQ(f.attention, 0.0);
    EXPECT_EQ(f.mlp, 0.0);
}

TEST(LayerFlops, HandArithmetic) {
    const auto f = layer_flops(3, tiny(1, 2, 1));
    EXPECT_EQ(f.projection, 96.0);
    EXPECT_EQ(f.attention, 72.0);
    EXPECT_EQ(f.mlp, 144.0);
    EXPECT_EQ(f.total(), 312.0);
}

TEST(LayerFlops, MatchesMacCountingOracle) {
    for (std::size_t n = 0; n <= 8; ++n)
        for (std::size_t d = 1; d <= 8; ++d)
            for (std::size_t d_ff = 1; d_ff <= 8; d_ff += 3)
                for (std::size_t mm = 2; mm <= 3; ++mm) {
                    ModelConfig c = tiny(1, 1, 0);
                    c.hidden_size = d;
                    c.mlp_intermediate = d_ff;
                    c.mlp_matmul_count = mm;
                    EXPECT_EQ(layer_flops(n, c).total(), oracle::layer_flops_by_counting(n, d, d_ff, mm))
                        << "n=" << n << " d=" << d << " d_ff=" << d_ff << " mlp=" << mm;
                }
}

TEST(LayerFlops, LlavaPrefillNearReportedBaseline) {
    // 576 visual + 60 text tokens = 636; reported baseline 9.1 TFLOPs, +-15%.
    const auto c = llava(60);
    const double total = static_cast<double>(c.num_layers) * layer_flops(636, c).total();
    EXPECT_NEAR(total, 9.1e12, 0.15 * 9.1e12);
    EXPECT_DOUBLE_EQ(full_flops(c), total);
}

TEST(TotalFlops, ZeroRecipeChargesFullLengthEveryLayer) {
    const auto c = tiny(3, 4, 2);
    const auto breakdown = total_flops(zero_recipe(c), c);
    EXPECT_DOUBLE_EQ(breakdown.total, 3.0 * layer_flops(6, c).total());
    EXPECT_EQ(breakdown.layers.size(), 3u);
}

TEST(TotalFlops, CumulativeCountsChargedFromPruningLayer) {
    const auto c = tiny(2, 4, 2);
    PruningRecipe r = zero_recipe(c);
    r.per_layer_counts = {2, 0};
    EXPECT_DOUBLE_EQ(total_flops(r, c).total, 2.0 * layer_flops(4, c).total());
    r.per_layer_counts = {0, 2};
    EXPECT_DOUBLE_EQ(total_flops(r, c).total, layer_flops(6, c).total() + layer_flops(4, c).total());
}

TEST(TotalFlops, OverflowIsAnError) {
    const auto c = tiny(2, 4, 2);
    const std::vector<std::size_t> counts{3, 2};
    EXPECT_THROW(total_flops(std::span<const std::size_t>(counts), c), ValidationError);
}

TEST(TotalFlops, AdditiveAndStrictlyMonotone) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        ModelConfig c = tiny(1 + rng() % 6, 1 + rng() % 12, rng() % 5);
        c.hidden_size = 1 + rng() % 8;
        c.mlp_intermediate = 1 + rng() % 8;
        std::vector<std::size_t> counts(c.num_layers, 0);
        std::size_t left = c.num_visual_tokens;
        for (auto& t : counts) {
            t = left ? rng() % (left + 1) / 2 : 0;
            left -= t;
        }
        const auto base = total_flops(std::span<const std::size_t>(counts), c);
        double sum = 0.0;
        for (const auto& l : base.layers)
            sum += l.total();
        EXPECT_DOUBLE_EQ(base.total, sum);
        if (left == 0)
            continue;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            auto more = counts;
            ++more[i];
            EXPECT_LT(total_flops(std::span<const std::size_t>(more), c).total, base.total);
        }
    }
}

TEST(ResolveBudget, RatioEndpoints) {
    const auto c = tiny(2, 4, 2);
    EXPECT_DOUBLE_EQ(resolve_budget(Budget::visual_ratio(0.0), c), full_flops(c));
    EXPECT_DOUBLE_EQ(resolve_budget(Budget::visual_ratio(1.0), tiny(2, 4, 0)), 0.0);
    EXPECT_DOUBLE_EQ(resolve_budget(Budget::absolute(123.0), c), 123.0);
}

TEST(ResolveBudget, HalfRatioOnSmallestModel) {
    // full = layer(3) = 312, text-only = layer(1) = 88 (counted independently), so delta = 312 - 0.5 * 224.
    const auto c = tiny(1, 2, 1);
    EXPECT_EQ(oracle::layer_flops_by_counting(3, 2, 4, 3), 312.0);
    EXPECT_EQ(oracle::layer_flops_by_counting(1, 2, 4, 3), 88.0);
    EXPECT_DOUBLE_EQ(resolve_budget(Budget::visual_ratio(0.5), c), 200.0);
}

TEST(ResolveBudget, LlavaFortyPercentVisualReduction) {
    // Cutting 40% of the visual FLOPs lowers total prefill by 0.4 * visual share, which
    // shrinks as the text block grows.
    double previous = 1.0;
    for (std::size_t m = 30; m <= 100; m += 10) {
        const auto c = llava(m);
        const double delta = resolve_budget(Budget::visual_ratio(0.4), c);
        const double reduction = overall_reduction(delta, c);
        EXPECT_LT(reduction, previous);
        EXPECT_NEAR(visual_reduction(delta, c), 0.4, 1e-12);
        previous = reduction;
    }
    const double at_100 = overall_reduction(resolve_budget(Budget::visual_ratio(0.4), llava(100)), llava(100));
    EXPECT_GE(at_100, 0.30);
    EXPECT_LE(at_100, 0.37);
}
