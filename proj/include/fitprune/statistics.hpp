#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fitprune/core.hpp"

namespace fitprune::statistics {

inline constexpr int dump_format_version = 1;
inline constexpr const char* dump_dtype = "f32le";

/// Contents of manifest.json in a dump directory.
struct DumpManifest {
    int version = dump_format_version;
    std::size_t num_layers = 0;
    std::size_t num_visual = 0;
    std::size_t num_text = 0;
    std::string dtype = dump_dtype;
    std::vector<std::string> layer_file_names;
    std::string example_id;

    void validate() const;
};

/// layer_00.f32, layer_01.f32, ...
std::string layer_file_name(std::size_t layer, std::size_t num_layers);

struct Dump {
    DumpManifest manifest;
    AttentionRecord record;
};

/// Reads manifest.json plus every layer file. Matrices are widened to double.
Dump read_dump(const std::filesystem::path& dir);

/// Writes `record` as a dump directory (created if missing), rounding entries to float32.
void write_dump(const std::filesystem::path& dir, const AttentionRecord& record, std::size_t num_visual);

/// True when `dir` holds a manifest.json.
bool is_dump_dir(const std::filesystem::path& dir);

/// Expands each input into dump directories: a dump dir is taken as-is, any other
/// directory contributes its immediate dump subdirectories in lexicographic order.
std::vector<std::filesystem::path> collect_dump_dirs(std::span<const std::filesystem::path> inputs);

/// The config a given example must validate against: same model, example's own text length.
ModelConfig config_for_example(const ModelConfig& config, std::size_t num_text);

/// Per-example received-attention vectors, one entry per layer.
struct ReducedRecord {
    std::vector<LayerStatistics> layers;
    std::size_t num_visual = 0;
};

/**
 * Column sums of each layer's attention over the visual key block.
 *
 * a_s sums visual query rows, a_c sums text query rows. Requires M >= 1 since the
 * cross mean divides by M. The record is validated first.
 */
ReducedRecord reduce_record(const AttentionRecord& record, const ModelConfig& config);

/// Running sums over reduced records; a commutative monoid under merge().
class StatsAccumulator {
public:
    StatsAccumulator() = default;
    StatsAccumulator(std::size_t num_layers, std::size_t num_visual);

    void add(const ReducedRecord& reduced);
    void merge(const StatsAccumulator& other);

    std::size_t count() const {
        return m_count;
    }

    /// Element-wise means stamped with the config digest. Throws on an empty accumulator.
    AttentionStatistics finish(const ModelConfig& config) const;

private:
    void check_shape(std::size_t num_layers, std::size_t num_visual) const;

    std::size_t m_num_layers = 0;
    std::size_t m_num_visual = 0;
    std::size_t m_count = 0;
    std::vector<LayerStatistics> m_sums;
};

/// Arithmetic mean of the reduced records. All must share K and N with the config.
AttentionStatistics aggregate(std::span<const ReducedRecord> records, const ModelConfig& config);

/// Reads, validates and reduces every dump, then aggregates. Per-example work may run
/// on worker threads; the fold itself runs in input order.
AttentionStatistics aggregate_dumps(std::span<const std::filesystem::path> dump_dirs, const ModelConfig& config);

}  // namespace fitprune::statistics
