#include "fitprune/serialization.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fitprune::io {

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
    if (!j.is_object())
        throw ValidationError(what + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key))
            throw ValidationError("unknown key '" + key + "' in " + what);
    }
}

template <typename Fn>
auto guarded(const std::string& what, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw ValidationError("malformed " + what + ": " + e.what());
    }
}

void check_version(const json& j, const std::string& what) {
    const int version = j.at("version").get<int>();
    if (version != format_version)
        throw ValidationError("unsupported " + what + " version " + std::to_string(version));
}

std::string format_double(double v) {
    // Same shortest round-trip form the JSON writer uses.
    return json(v).dump();
}

}  // namespace

json to_json(const ModelConfig& config) {
    return json{
        {"num_layers", config.num_layers},
        {"hidden_size", config.hidden_size},
        {"mlp_intermediate", config.mlp_intermediate},
        {"num_visual_tokens", config.num_visual_tokens},
        {"num_text_tokens", config.num_text_tokens},
        {"mlp_matmul_count", config.mlp_matmul_count},
    };
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"num_layers", "hidden_size", "mlp_intermediate", "num_visual_tokens", "num_text_tokens",
                         "mlp_matmul_count"},
                        "model config");
    return guarded("model config", [&] {
        ModelConfig config;
        config.num_layers = j.at("num_layers").get<std::size_t>();
        config.hidden_size = j.at("hidden_size").get<std::size_t>();
        config.mlp_intermediate = j.at("mlp_intermediate").get<std::size_t>();
        config.num_visual_tokens = j.at("num_visual_tokens").get<std::size_t>();
        config.num_text_tokens = j.value("num_text_tokens", std::size_t{0});
        config.mlp_matmul_count = j.value("mlp_matmul_count", std::size_t{3});
        config.validate();
        return config;
    });
}

json to_json(const PruningRecipe& recipe) {
    return json{
        {"version", format_version},
        {"num_layers", recipe.per_layer_counts.size()},
        {"per_layer_counts", recipe.per_layer_counts},
        {"alpha", recipe.alpha},
        {"predicted_flops", recipe.predicted_flops},
        {"budget", recipe.budget},
        {"config_digest", recipe.config_digest},
    };
}

PruningRecipe recipe_from_json(const json& j) {
    return guarded("recipe", [&] {
        check_version(j, "recipe");
        PruningRecipe recipe;
        recipe.per_layer_counts = j.at("per_layer_counts").get<std::vector<std::size_t>>();
        if (j.at("num_layers").get<std::size_t>() != recipe.per_layer_counts.size())
            throw ValidationError("recipe num_layers disagrees with per_layer_counts");
        recipe.alpha = j.at("alpha").get<double>();
        recipe.predicted_flops = j.at("predicted_flops").get<double>();
        recipe.budget = j.at("budget").get<double>();
        recipe.config_digest = j.at("config_digest").get<std::string>();
        if (!(recipe.alpha >= 0.0 && recipe.alpha <= 1.0))
            throw ValidationError("recipe alpha must lie in [0, 1]");
        return recipe;
    });
}

json to_json(const AttentionStatistics& stats) {
    json layers = json::array();
    for (const auto& layer : stats.layers) {
        layers.push_back(json{
            {"a_s", layer.self_received},
            {"a_c", layer.cross_received},
            {"a_s_mean", layer.self_mean},
            {"a_c_mean", layer.cross_mean},
        });
    }
    return json{
        {"version", format_version},
        {"sample_count", stats.sample_count},
        {"config_digest", stats.config_digest},
        {"layers", std::move(layers)},
    };
}

AttentionStatistics statistics_from_json(const json& j) {
    return guarded("statistics", [&] {
        check_version(j, "statistics");
        AttentionStatistics stats;
        stats.sample_count = j.at("sample_count").get<std::size_t>();
        if (stats.sample_count == 0)
            throw ValidationError("statistics sample_count must be positive");
        stats.config_digest = j.value("config_digest", std::string{});
        for (const auto& entry : j.at("layers")) {
            LayerStatistics layer;
            layer.self_received = entry.at("a_s").get<std::vector<double>>();
            layer.cross_received = entry.at("a_c").get<std::vector<double>>();
            layer.self_mean = entry.at("a_s_mean").get<double>();
            layer.cross_mean = entry.at("a_c_mean").get<double>();
            if (layer.self_received.size() != layer.cross_received.size())
                throw ValidationError("statistics a_s and a_c lengths differ");
            stats.layers.push_back(std::move(layer));
        }
        return stats;
    });
}

json to_json(const DivergenceReport& report) {
    std::vector<double> self_before, self_after, cross_before, cross_after, self_div, cross_div;
    for (const auto& layer : report.layers) {
        self_before.push_back(layer.self_before);
        self_after.push_back(layer.self_after);
        cross_before.push_back(layer.cross_before);
        cross_after.push_back(layer.cross_after);
        self_div.push_back(layer.self_divergence);
        cross_div.push_back(layer.cross_divergence);
    }
    return json{
        {"self_before", self_before}, {"self_after", self_after}, {"cross_before", cross_before},
        {"cross_after", cross_after}, {"self_div", self_div},     {"cross_div", cross_div},
        {"d_total", report.total},
    };
}

DivergenceReport report_from_json(const json& j) {
    return guarded("divergence report", [&] {
        const auto self_before = j.at("self_before").get<std::vector<double>>();
        const auto self_after = j.at("self_after").get<std::vector<double>>();
        const auto cross_before = j.at("cross_before").get<std::vector<double>>();
        const auto cross_after = j.at("cross_after").get<std::vector<double>>();
        const auto self_div = j.at("self_div").get<std::vector<double>>();
        const auto cross_div = j.at("cross_div").get<std::vector<double>>();
        const std::size_t k = self_before.size();
        if (self_after.size() != k || cross_before.size() != k || cross_after.size() != k || self_div.size() != k ||
            cross_div.size() != k)
            throw ValidationError("divergence report arrays differ in length");
        DivergenceReport report;
        for (std::size_t i = 0; i < k; ++i) {
            report.layers.push_back(
                {self_before[i], self_after[i], cross_before[i], cross_after[i], self_div[i], cross_div[i]});
        }
        report.total = j.at("d_total").get<double>();
        return report;
    });
}

json to_json(const search::SearchIteration& step) {
    return json{
        {"iteration", step.iteration}, {"alpha_lo", step.alpha_lo}, {"alpha_hi", step.alpha_hi},
        {"midpoint", step.midpoint},   {"flops", step.flops},       {"feasible", step.feasible},
    };
}

std::string curve_csv(const std::vector<runtime::CurvePoint>& curve) {
    std::ostringstream out;
    out << "alpha,pruning_ratio,flops\n";
    for (const auto& point : curve)
        out << format_double(point.alpha) << ',' << format_double(point.pruning_ratio) << ','
            << format_double(point.flops) << '\n';
    return out.str();
}

std::string schedule_csv(const PruningRecipe& recipe, const ModelConfig& config) {
    check_recipe(recipe, config);
    std::ostringstream out;
    out << "layer,pruned,surviving_visual,tokens\n";
    const auto cumulative = recipe.cumulative_counts();
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
        const std::size_t surviving = config.num_visual_tokens - cumulative[i];
        out << (i + 1) << ',' << recipe.per_layer_counts[i] << ',' << surviving << ','
            << surviving + config.num_text_tokens << '\n';
    }
    return out.str();
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
    if (!out)
        throw IoError("write failed on " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

}  // namespace fitprune::io
