#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "fitprune/cli.hpp"
#include "fitprune/serialization.hpp"
#include "fitprune/statistics.hpp"

namespace fs = std::filesystem;
using namespace fitprune;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / ("fitprune_cli_" + std::to_string(::getpid()) + "_" + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = (dir / "config.json").string();
        write_config(R"({
  "model": {"num_layers": 3, "hidden_size": 16, "mlp_intermediate": 32, "num_visual_tokens": 10, "num_text_tokens": 4},
  "toy": {"hidden_size": 16, "mlp_intermediate": 32, "num_heads": 4}
})");
    }

    void TearDown() override {
        fs::remove_all(dir);
    }

    void write_config(const std::string& text) {
        std::ofstream(config) << text;
    }

    std::string path(const std::string& name) const {
        return (dir / name).string();
    }

    // synth -> stats, leaving stats.json in the temp dir
    void prepare_stats(std::size_t examples = 6) {
        ASSERT_EQ(run_cli({"synth", "--config", config, "--examples", std::to_string(examples), "--out",
                           path("dumps")})
                      .code,
                  0);
        ASSERT_EQ(run_cli({"stats", "--config", config, "--in", path("dumps"), "--out", path("stats.json")}).code, 0);
    }

    fs::path dir;
    std::string config;
};

}  // namespace

TEST_F(CliTest, SynthWritesManifestAndLayerFiles) {
    const auto r = run_cli({"synth", "--config", config, "--examples", "1", "--out", path("dumps")});
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path example = dir / "dumps" / "example_00000";
    ASSERT_TRUE(fs::exists(example / "manifest.json"));
    const auto manifest = io::read_json(example / "manifest.json");
    EXPECT_EQ(manifest["num_layers"], 3);
    EXPECT_EQ(manifest["num_visual"], 10);
    EXPECT_EQ(manifest["num_text"], 4);
    EXPECT_EQ(manifest["dtype"], "f32le");
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(fs::file_size(example / statistics::layer_file_name(i, 3)), 14u * 14u * 4u);
}

TEST_F(CliTest, SynthIsByteIdenticalForSameSeed) {
    ASSERT_EQ(run_cli({"synth", "--config", config, "--seed", "9", "--examples", "2", "--out", path("a")}).code, 0);
    ASSERT_EQ(run_cli({"synth", "--config", config, "--seed", "9", "--examples", "2", "--out", path("b")}).code, 0);
    ASSERT_EQ(run_cli({"synth", "--config", config, "--seed", "10", "--examples", "2", "--out", path("c")}).code, 0);
    const std::string file = "example_00001/" + statistics::layer_file_name(2, 3);
    EXPECT_EQ(slurp(dir / "a" / file), slurp(dir / "b" / file));
    EXPECT_NE(slurp(dir / "a" / file), slurp(dir / "c" / file));
}

TEST_F(CliTest, StatsSummaryAndOutput) {
    ASSERT_EQ(run_cli({"synth", "--config", config, "--examples", "4", "--out", path("dumps")}).code, 0);
    const auto r = run_cli({"stats", "--config", config, "--in", path("dumps"), "--out", path("stats.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("sample_count 4"), std::string::npos);
    const auto stats = io::statistics_from_json(io::read_json(path("stats.json")));
    EXPECT_EQ(stats.sample_count, 4u);
    EXPECT_EQ(stats.layers.size(), 3u);
    EXPECT_NEAR(stats.layers[0].self_mean, 1.0, 1e-5);
}

TEST_F(CliTest, SearchRatioZeroAndTrace) {
    prepare_stats();
    const auto r = run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0",
                            "--out", path("recipe.json"), "--trace", path("trace.jsonl")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto recipe = io::recipe_from_json(io::read_json(path("recipe.json")));
    EXPECT_EQ(recipe.per_layer_counts, (std::vector<std::size_t>{0, 0, 0}));
    EXPECT_NE(r.out.find("iterations 7"), std::string::npos);

    std::ifstream trace(path("trace.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(trace, line)) {
        const auto step = io::json::parse(line);
        EXPECT_EQ(step["iteration"], lines + 1);
        EXPECT_TRUE(step.contains("feasible"));
        ++lines;
    }
    EXPECT_EQ(lines, 7u);
}

TEST_F(CliTest, SearchIsIdempotent) {
    prepare_stats();
    for (const char* name : {"r1.json", "r2.json"})
        ASSERT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0.5",
                           "--out", path(name)})
                      .code,
                  0);
    EXPECT_EQ(slurp(path("r1.json")), slurp(path("r2.json")));
}

TEST_F(CliTest, InfeasibleBudgetExitsFour) {
    prepare_stats();
    const auto r = run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-flops", "1",
                            "--out", path("recipe.json")});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("minimum_achievable_flops"), std::string::npos);
    EXPECT_FALSE(fs::exists(path("recipe.json")));
}

TEST_F(CliTest, ValidationAndIoExitCodes) {
    prepare_stats();
    EXPECT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--out", path("r.json")}).code, 2);
    EXPECT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0.5",
                       "--budget-flops", "1e9", "--out", path("r.json")})
                  .code,
              2);
    EXPECT_EQ(run_cli({"search", "--config", config, "--stats", path("missing.json"), "--budget-ratio", "0.5",
                       "--out", path("r.json")})
                  .code,
              3);
    EXPECT_EQ(run_cli({"stats", "--config", path("missing.json"), "--in", path("dumps"), "--out", path("s.json")}).code,
              3);
    EXPECT_EQ(run_cli({"search", "--config", config, "--budget-ratio", "1.5", "--stats", path("stats.json"), "--out",
                       path("r.json")})
                  .code,
              2);
    EXPECT_EQ(run_cli({"nonsense"}).code, 2);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, UnknownConfigKeysAreRejected) {
    write_config(R"({
  "model": {"num_layers": 3, "hidden_size": 16, "mlp_intermediate": 32, "num_visual_tokens": 10, "num_text_tokens": 4},
  "serach": {"epsilon": 0.01}
})");
    const auto r = run_cli({"synth", "--config", config, "--out", path("dumps")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("serach"), std::string::npos);
}

TEST_F(CliTest, ConfigDigestMismatchInSimulate) {
    prepare_stats();
    ASSERT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0.4", "--out",
                       path("recipe.json")})
                  .code,
              0);
    write_config(R"({
  "model": {"num_layers": 3, "hidden_size": 32, "mlp_intermediate": 32, "num_visual_tokens": 10, "num_text_tokens": 4}
})");
    const auto r = run_cli({"simulate", "--config", config, "--recipe", path("recipe.json"), "--dumps", path("dumps"),
                            "--out", path("report.json")});
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, SimulateDumpsAndToy) {
    prepare_stats();
    ASSERT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0.4", "--out",
                       path("recipe.json")})
                  .code,
              0);
    auto r = run_cli({"simulate", "--config", config, "--recipe", path("recipe.json"), "--dumps", path("dumps"),
                      "--out", path("report.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto report = io::read_json(path("report.json"));
    EXPECT_EQ(report["examples"], 6);
    EXPECT_EQ(report["selector"], "fitprune");
    EXPECT_GE(report["d_total"].get<double>(), 0.0);
    EXPECT_EQ(report["self_before"].size(), 3u);

    r = run_cli({"simulate", "--config", config, "--recipe", path("recipe.json"), "--toy", "--examples", "3",
                 "--selector", "random", "--out", path("toy.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    report = io::read_json(path("toy.json"));
    EXPECT_EQ(report["examples"], 3);
    EXPECT_TRUE(report.contains("hidden_state_deviation"));

    EXPECT_EQ(run_cli({"simulate", "--config", config, "--recipe", path("recipe.json"), "--toy", "--selector", "best",
                       "--out", path("x.json")})
                  .code,
              2);
}

TEST_F(CliTest, ReportCurveAndSchedule) {
    prepare_stats();
    auto r = run_cli({"report", "--config", config, "--stats", path("stats.json"), "--curve", "0,0.25,0.5,1"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream curve(r.out);
    std::string line;
    std::getline(curve, line);
    EXPECT_EQ(line, "alpha,pruning_ratio,flops");
    std::getline(curve, line);
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    EXPECT_EQ(std::stod(line.substr(0, first)), 0.0);
    EXPECT_EQ(std::stod(line.substr(first + 1, second - first - 1)), 0.0);

    ASSERT_EQ(run_cli({"search", "--config", config, "--stats", path("stats.json"), "--budget-ratio", "0.5", "--out",
                       path("recipe.json")})
                  .code,
              0);
    const auto recipe = io::recipe_from_json(io::read_json(path("recipe.json")));
    r = run_cli({"report", "--config", config, "--schedule", path("recipe.json"), "--out", path("schedule.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream schedule(slurp(path("schedule.csv")));
    std::getline(schedule, line);
    EXPECT_EQ(line, "layer,pruned,surviving_visual,tokens");
    std::size_t cumulative = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        ASSERT_TRUE(std::getline(schedule, line));
        cumulative += recipe.per_layer_counts[i];
        std::ostringstream expected;
        expected << (i + 1) << ',' << recipe.per_layer_counts[i] << ',' << (10 - cumulative) << ','
                 << (14 - cumulative);
        EXPECT_EQ(line, expected.str());
    }

    EXPECT_EQ(run_cli({"report", "--config", config, "--stats", path("stats.json"), "--curve", "0,abc"}).code, 2);
    EXPECT_EQ(run_cli({"report", "--config", config, "--stats", path("stats.json"), "--curve", "0.1", "--format",
                       "xml"})
                  .code,
              2);
}
