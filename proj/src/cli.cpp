#include "fitprune/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "fitprune/costmodel.hpp"
#include "fitprune/parallel.hpp"
#include "fitprune/recipe_search.hpp"
#include "fitprune/runtime.hpp"
#include "fitprune/serialization.hpp"
#include "fitprune/statistics.hpp"
#include "fitprune/toy_transformer.hpp"

namespace fitprune::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

struct ToySettings {
    std::size_t hidden_size = 64;
    std::size_t mlp_intermediate = 128;
    std::size_t num_heads = 4;
    double weight_scale = 1.0;
    double example_noise = toy::ToyTransformerConfig{}.example_noise;
    double salience_bias = toy::ToyTransformerConfig{}.salience_bias;
};

struct Paths {
    std::string dumps;
    std::string stats;
    std::string recipe;
    std::string out;
    std::string trace;
};

/// Parsed --config file: model dimensions, search defaults, toy settings, paths.
struct ConfigFile {
    ModelConfig model;
    search::SearchParams search;
    ToySettings toy;
    Paths paths;
};

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
    if (!j.is_object())
        throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ValidationError("unknown key '" + key + "' in config section '" + section + "'");
    }
}

ConfigFile load_config(const std::string& path) {
    const json j = io::read_json(path);
    reject_unknown(j, {"model", "search", "toy", "paths"}, "<root>");
    ConfigFile config;
    if (!j.contains("model"))
        throw ValidationError("config file needs a 'model' section");
    config.model = io::model_config_from_json(j.at("model"));
    try {
        if (j.contains("search")) {
            const auto& s = j.at("search");
            reject_unknown(s, {"epsilon", "alpha_lo", "alpha_hi"}, "search");
            config.search.epsilon = s.value("epsilon", config.search.epsilon);
            config.search.alpha_lo = s.value("alpha_lo", config.search.alpha_lo);
            config.search.alpha_hi = s.value("alpha_hi", config.search.alpha_hi);
            config.search.validate();
        }
        if (j.contains("toy")) {
            const auto& t = j.at("toy");
            reject_unknown(t, {"hidden_size", "mlp_intermediate", "num_heads", "weight_scale", "example_noise", "salience_bias"}, "toy");
            config.toy.hidden_size = t.value("hidden_size", config.toy.hidden_size);
            config.toy.mlp_intermediate = t.value("mlp_intermediate", config.toy.mlp_intermediate);
            config.toy.num_heads = t.value("num_heads", config.toy.num_heads);
            config.toy.weight_scale = t.value("weight_scale", config.toy.weight_scale);
            config.toy.example_noise = t.value("example_noise", config.toy.example_noise);
            config.toy.salience_bias = t.value("salience_bias", config.toy.salience_bias);
        }
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            reject_unknown(p, {"dumps", "stats", "recipe", "out", "trace"}, "paths");
            config.paths.dumps = p.value("dumps", std::string{});
            config.paths.stats = p.value("stats", std::string{});
            config.paths.recipe = p.value("recipe", std::string{});
            config.paths.out = p.value("out", std::string{});
            config.paths.trace = p.value("trace", std::string{});
        }
    } catch (const json::exception& e) {
        throw ValidationError("malformed config file " + path + ": " + e.what());
    }
    return config;
}

toy::ToyTransformerConfig toy_config(const ConfigFile& config, std::uint64_t seed) {
    toy::ToyTransformerConfig toy;
    toy.model = config.model;
    toy.model.hidden_size = config.toy.hidden_size;
    toy.model.mlp_intermediate = config.toy.mlp_intermediate;
    toy.num_heads = config.toy.num_heads;
    toy.weight_scale = config.toy.weight_scale;
    toy.example_noise = config.toy.example_noise;
    toy.salience_bias = config.toy.salience_bias;
    toy.seed = seed;
    toy.validate();
    return toy;
}

const std::string& pick(const std::string& flag, const std::string& fallback, const char* name) {
    if (!flag.empty())
        return flag;
    if (!fallback.empty())
        return fallback;
    throw ValidationError(std::string("missing required path: ") + name);
}

std::string tflops(double flops) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << flops / costmodel::flops_per_tflop;
    return s.str();
}

std::string percent(double fraction) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << fraction * 100.0 << "%";
    return s.str();
}

std::string example_dir_name(std::size_t index) {
    std::ostringstream s;
    s << "example_" << std::setw(5) << std::setfill('0') << index;
    return s.str();
}

std::vector<double> parse_alpha_list(const std::string& text) {
    std::vector<double> alphas;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty())
            continue;
        try {
            std::size_t used = 0;
            alphas.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("cannot parse alpha '" + item + "'");
        }
    }
    if (alphas.empty())
        throw ValidationError("--curve needs at least one alpha");
    return alphas;
}

struct Options {
    std::string config;
    // synth
    std::uint64_t seed = 0;
    std::size_t examples = 1;
    std::string out;
    // stats
    std::vector<std::string> inputs;
    // search
    std::string stats;
    std::optional<double> budget_ratio;
    std::optional<double> budget_flops;
    std::optional<double> epsilon;
    std::string trace;
    // simulate
    std::string recipe;
    std::vector<std::string> dumps;
    bool toy = false;
    std::string selector = "fitprune";
    // report
    std::string curve;
    std::string schedule;
    std::string format = "csv";
};

int cmd_synth(const Options& opt, std::ostream& out) {
    const ConfigFile config = load_config(opt.config);
    const fs::path dir = pick(opt.out, config.paths.dumps, "--out");
    if (opt.examples == 0)
        throw ValidationError("--examples must be at least 1");
    const toy::ToyTransformer model(toy_config(config, opt.seed));
    parallel_for(opt.examples, [&](std::size_t i) {
        const Matrix inputs = model.synthetic_inputs(i);
        toy::ToyRun run = model.forward(inputs, {});
        run.attention.example_id = example_dir_name(i);
        statistics::write_dump(dir / example_dir_name(i), run.attention, config.model.num_visual_tokens);
    });
    out << "wrote " << opt.examples << " dump(s) to " << dir.string() << "\n";
    return exit_ok;
}

int cmd_stats(const Options& opt, std::ostream& out) {
    const ConfigFile config = load_config(opt.config);
    std::vector<fs::path> inputs(opt.inputs.begin(), opt.inputs.end());
    if (inputs.empty() && !config.paths.dumps.empty())
        inputs.emplace_back(config.paths.dumps);
    if (inputs.empty())
        throw ValidationError("stats needs at least one --in directory");
    const auto dirs = statistics::collect_dump_dirs(inputs);
    if (dirs.empty())
        throw ValidationError("no dump directories found under the given inputs");
    const AttentionStatistics stats = statistics::aggregate_dumps(dirs, config.model);
    io::write_json(pick(opt.out, config.paths.stats, "--out"), io::to_json(stats));

    out << "sample_count " << stats.sample_count << "\n";
    out << "layer,a_s_mean,a_c_mean,a_c_min,a_c_max\n";
    for (std::size_t i = 0; i < stats.layers.size(); ++i) {
        const auto& layer = stats.layers[i];
        const auto [lo, hi] = std::minmax_element(layer.cross_received.begin(), layer.cross_received.end());
        out << (i + 1) << ',' << layer.self_mean << ',' << layer.cross_mean << ',' << *lo << ',' << *hi << "\n";
    }
    return exit_ok;
}

int cmd_search(const Options& opt, std::ostream& out) {
    const ConfigFile config = load_config(opt.config);
    const AttentionStatistics stats = io::statistics_from_json(io::read_json(pick(opt.stats, config.paths.stats, "--stats")));
    if (opt.budget_ratio.has_value() == opt.budget_flops.has_value())
        throw ValidationError("give exactly one of --budget-ratio or --budget-flops");
    const Budget budget =
        opt.budget_ratio ? Budget::visual_ratio(*opt.budget_ratio) : Budget::absolute(*opt.budget_flops);
    search::SearchParams params = config.search;
    if (opt.epsilon)
        params.epsilon = *opt.epsilon;

    const search::SearchResult result = search::search(stats, budget, params, config.model);

    io::write_json(pick(opt.out, config.paths.recipe, "--out"), io::to_json(result.recipe));
    const std::string trace_path = !opt.trace.empty() ? opt.trace : config.paths.trace;
    if (!trace_path.empty()) {
        std::string lines;
        for (const auto& step : result.trace)
            lines += io::to_json(step).dump() + "\n";
        io::write_text(trace_path, lines);
    }

    const double full = costmodel::full_flops(config.model);
    out << "alpha " << result.recipe.alpha << "\n";
    out << "iterations " << result.trace.size() << "\n";
    out << "pruned_tokens " << result.recipe.total_pruned() << "\n";
    out << "full_tflops " << tflops(full) << "\n";
    out << "predicted_tflops " << tflops(result.recipe.predicted_flops) << "\n";
    out << "budget_tflops " << tflops(result.recipe.budget) << "\n";
    out << "overall_reduction " << percent(costmodel::overall_reduction(result.recipe.predicted_flops, config.model))
        << "\n";
    out << "visual_reduction " << percent(costmodel::visual_reduction(result.recipe.predicted_flops, config.model))
        << "\n";
    return exit_ok;
}

runtime::TokenSelector make_selector(const std::string& name, std::uint64_t seed) {
    if (name == "fitprune")
        return runtime::combined_importance_selector();
    if (name == "random")
        return runtime::random_selector(seed);
    if (name == "crossattn")
        return runtime::cross_attention_selector();
    throw ValidationError("unknown selector '" + name + "' (expected fitprune, random or crossattn)");
}

int cmd_simulate(const Options& opt, std::ostream& out) {
    const ConfigFile config = load_config(opt.config);
    const PruningRecipe recipe = io::recipe_from_json(io::read_json(pick(opt.recipe, config.paths.recipe, "--recipe")));
    check_recipe(recipe, config.model);
    make_selector(opt.selector, opt.seed);

    std::vector<DivergenceReport> reports;
    json extra = json::object();
    if (opt.toy) {
        if (!opt.dumps.empty())
            throw ValidationError("--toy and --dumps are mutually exclusive");
        const toy::ToyTransformer model(toy_config(config, opt.seed));
        std::vector<double> deviations(opt.examples);
        reports.resize(opt.examples);
        parallel_for(opt.examples, [&](std::size_t i) {
            const Matrix inputs = model.synthetic_inputs(i);
            const toy::ToyRun reference = model.forward(inputs, {});
            const toy::ToyRun pruned =
                model.forward(inputs, recipe.per_layer_counts, make_selector(opt.selector, opt.seed + i));
            reports[i] = runtime::simulate_pruned_attention(reference.attention, config.model.num_visual_tokens,
                                                            pruned.pruned_per_layer)
                             .report;
            deviations[i] = toy::text_state_deviation(reference, pruned, config.model.num_visual_tokens);
        });
        double mean_deviation = 0.0;
        for (double d : deviations)
            mean_deviation += d;
        mean_deviation /= static_cast<double>(deviations.size());
        extra["hidden_state_deviation"] = mean_deviation;
    } else {
        std::vector<fs::path> inputs(opt.dumps.begin(), opt.dumps.end());
        if (inputs.empty() && !config.paths.dumps.empty())
            inputs.emplace_back(config.paths.dumps);
        if (inputs.empty())
            throw ValidationError("simulate needs --dumps or --toy");
        const auto dirs = statistics::collect_dump_dirs(inputs);
        if (dirs.empty())
            throw ValidationError("no dump directories found under the given inputs");
        reports.resize(dirs.size());
        parallel_for(dirs.size(), [&](std::size_t i) {
            const auto dump = statistics::read_dump(dirs[i]);
            if (dump.manifest.num_layers != config.model.num_layers ||
                dump.manifest.num_visual != config.model.num_visual_tokens)
                throw ValidationError("dump " + dirs[i].string() + " does not match the model config");
            require_valid_record(dump.record,
                                 statistics::config_for_example(config.model, dump.manifest.num_text));
            reports[i] = runtime::simulate_schedule(dump.record, config.model.num_visual_tokens,
                                                    recipe.per_layer_counts,
                                                    make_selector(opt.selector, opt.seed + i))
                             .report;
        });
    }

    const DivergenceReport mean = average_reports(reports);
    json j = io::to_json(mean);
    j["examples"] = reports.size();
    j["selector"] = opt.selector;
    for (const auto& [key, value] : extra.items())
        j[key] = value;
    io::write_json(pick(opt.out, config.paths.out, "--out"), j);

    out << "examples " << reports.size() << "\n";
    out << "d_total " << mean.total << "\n";
    if (extra.contains("hidden_state_deviation"))
        out << "hidden_state_deviation " << extra["hidden_state_deviation"].get<double>() << "\n";
    return exit_ok;
}

int cmd_report(const Options& opt, std::ostream& out) {
    const ConfigFile config = load_config(opt.config);
    if (opt.format != "csv")
        throw ValidationError("unsupported --format '" + opt.format + "' (only csv)");
    if (opt.curve.empty() == opt.schedule.empty())
        throw ValidationError("give exactly one of --curve or --schedule");

    std::string csv;
    if (!opt.curve.empty()) {
        const AttentionStatistics stats =
            io::statistics_from_json(io::read_json(pick(opt.stats, config.paths.stats, "--stats")));
        const auto alphas = parse_alpha_list(opt.curve);
        csv = io::curve_csv(runtime::alpha_ratio_curve(stats, config.model, alphas));
    } else {
        const PruningRecipe recipe = io::recipe_from_json(io::read_json(opt.schedule));
        csv = io::schedule_csv(recipe, config.model);
    }
    if (opt.out.empty())
        out << csv;
    else
        io::write_text(opt.out, csv);
    return exit_ok;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::validation:
        return exit_validation;
    case ErrorKind::io:
        return exit_io;
    case ErrorKind::infeasible_budget:
        return exit_infeasible;
    case ErrorKind::search_anomaly:
        return exit_internal;
    }
    return exit_internal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Budgeted visual-token pruning: statistics, recipe search and simulation", "fitprune"};
    app.require_subcommand(1);
    Options opt;

    auto* synth = app.add_subcommand("synth", "Write attention dumps from the toy transformer");
    synth->add_option("--config", opt.config, "Config JSON")->required();
    synth->add_option("--seed", opt.seed, "Model seed");
    synth->add_option("--examples", opt.examples, "Number of examples");
    synth->add_option("--out", opt.out, "Output directory");

    auto* stats = app.add_subcommand("stats", "Aggregate dumps into statistics");
    stats->add_option("--config", opt.config, "Config JSON")->required();
    stats->add_option("--in", opt.inputs, "Dump directories or parents of dump directories");
    stats->add_option("--out", opt.out, "Output stats.json");

    auto* search_cmd = app.add_subcommand("search", "Find a pruning recipe under a FLOPs budget");
    search_cmd->add_option("--config", opt.config, "Config JSON")->required();
    search_cmd->add_option("--stats", opt.stats, "stats.json");
    auto* ratio = search_cmd->add_option("--budget-ratio", opt.budget_ratio, "Target visual FLOPs reduction in [0,1]");
    auto* flops = search_cmd->add_option("--budget-flops", opt.budget_flops, "Absolute FLOPs budget");
    ratio->excludes(flops);
    search_cmd->add_option("--epsilon", opt.epsilon, "Bisection tolerance");
    search_cmd->add_option("--out", opt.out, "Output recipe.json");
    search_cmd->add_option("--trace", opt.trace, "Write one JSON line per bisection iteration");

    auto* simulate = app.add_subcommand("simulate", "Apply a recipe and report attention divergence");
    simulate->add_option("--config", opt.config, "Config JSON")->required();
    simulate->add_option("--recipe", opt.recipe, "recipe.json");
    simulate->add_option("--dumps", opt.dumps, "Dump directories or parents of dump directories");
    simulate->add_flag("--toy", opt.toy, "Run the toy transformer instead of recorded dumps");
    simulate->add_option("--seed", opt.seed, "Toy model seed and random-selector seed");
    simulate->add_option("--examples", opt.examples, "Toy examples to run");
    simulate->add_option("--selector", opt.selector, "fitprune | random | crossattn");
    simulate->add_option("--out", opt.out, "Output report.json");

    auto* report = app.add_subcommand("report", "Emit the alpha curve or a per-layer schedule as CSV");
    report->add_option("--config", opt.config, "Config JSON")->required();
    report->add_option("--stats", opt.stats, "stats.json (for --curve)");
    report->add_option("--curve", opt.curve, "Comma-separated alpha grid");
    report->add_option("--schedule", opt.schedule, "recipe.json");
    report->add_option("--format", opt.format, "Output format (csv)");
    report->add_option("--out", opt.out, "Output file (default stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_validation;
    }

    try {
        if (synth->parsed())
            return cmd_synth(opt, out);
        if (stats->parsed())
            return cmd_stats(opt, out);
        if (search_cmd->parsed())
            return cmd_search(opt, out);
        if (simulate->parsed())
            return cmd_simulate(opt, out);
        if (report->parsed())
            return cmd_report(opt, out);
    } catch (const InfeasibleBudgetError& e) {
        err << "error: " << e.what() << "\n";
        err << "minimum_achievable_flops " << e.minimum_flops() << " (" << tflops(e.minimum_flops()) << " TFLOPs)\n";
        return exit_infeasible;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return exit_internal;
    }
    return exit_internal;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace fitprune::cli
