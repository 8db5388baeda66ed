#include "fitprune/statistics.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>

#include "json.hpp"

#include "fitprune/parallel.hpp"

namespace fitprune::statistics {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(sizeof(float) == 4);

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        return __builtin_bswap32(v);
    return v;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

Matrix read_layer_file(const fs::path& path, std::size_t side) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    const std::size_t expected = side * side * sizeof(float);
    if (size != expected) {
        throw ValidationError("dimension-mismatch: " + path.string() + " holds " + std::to_string(size) +
                              " bytes, expected " + std::to_string(expected));
    }
    in.seekg(0);
    std::vector<std::uint32_t> raw(side * side);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expected)))
        throw IoError("short read on " + path.string());

    Matrix m(side, side);
    double* out = m.data();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::uint32_t bits = to_little_endian(raw[i]);
        float value;
        std::memcpy(&value, &bits, sizeof value);
        out[i] = static_cast<double>(value);
    }
    return m;
}

void write_layer_file(const fs::path& path, const Matrix& m) {
    std::vector<std::uint32_t> raw(static_cast<std::size_t>(m.size()));
    const double* in = m.data();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const float value = static_cast<float>(in[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &value, sizeof bits);
        raw[i] = to_little_endian(bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out)
        throw IoError("write failed on " + path.string());
}

DumpManifest manifest_from_json(const json& j, const fs::path& origin) {
    try {
        DumpManifest m;
        m.version = j.at("version").get<int>();
        m.num_layers = j.at("num_layers").get<std::size_t>();
        m.num_visual = j.at("num_visual").get<std::size_t>();
        m.num_text = j.at("num_text").get<std::size_t>();
        m.dtype = j.at("dtype").get<std::string>();
        m.layer_file_names = j.at("layer_file_names").get<std::vector<std::string>>();
        if (j.contains("example_id"))
            m.example_id = j.at("example_id").get<std::string>();
        return m;
    } catch (const json::exception& e) {
        throw ValidationError("bad manifest " + origin.string() + ": " + e.what());
    }
}

}  // namespace

void DumpManifest::validate() const {
    if (version != dump_format_version)
        throw ValidationError("unsupported dump manifest version " + std::to_string(version));
    if (dtype != dump_dtype)
        throw ValidationError("unsupported dump dtype '" + dtype + "', expected " + dump_dtype);
    if (num_layers == 0 || num_visual == 0)
        throw ValidationError("dump manifest needs num_layers >= 1 and num_visual >= 1");
    if (layer_file_names.size() != num_layers) {
        throw ValidationError("dump manifest lists " + std::to_string(layer_file_names.size()) +
                              " layer files for " + std::to_string(num_layers) + " layers");
    }
}

std::string layer_file_name(std::size_t layer, std::size_t num_layers) {
    const int width = std::max<int>(2, static_cast<int>(std::to_string(num_layers - 1).size()));
    char buf[32];
    std::snprintf(buf, sizeof buf, "layer_%0*zu.f32", width, layer);
    return buf;
}

Dump read_dump(const fs::path& dir) {
    Dump dump;
    dump.manifest = manifest_from_json(read_json_file(dir / "manifest.json"), dir);
    dump.manifest.validate();
    const std::size_t side = dump.manifest.num_visual + dump.manifest.num_text;
    dump.record.example_id = dump.manifest.example_id.empty() ? dir.filename().string() : dump.manifest.example_id;
    dump.record.matrices.reserve(dump.manifest.num_layers);
    for (const auto& name : dump.manifest.layer_file_names)
        dump.record.matrices.push_back(read_layer_file(dir / name, side));
    return dump;
}

void write_dump(const fs::path& dir, const AttentionRecord& record, std::size_t num_visual) {
    if (record.matrices.empty())
        throw ValidationError("cannot dump a record with no layers");
    const auto side = static_cast<std::size_t>(record.matrices.front().rows());
    if (side < num_visual)
        throw ValidationError("record side is smaller than num_visual");

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());

    DumpManifest manifest;
    manifest.num_layers = record.matrices.size();
    manifest.num_visual = num_visual;
    manifest.num_text = side - num_visual;
    manifest.example_id = record.example_id;
    for (std::size_t layer = 0; layer < record.matrices.size(); ++layer) {
        const auto& m = record.matrices[layer];
        if (static_cast<std::size_t>(m.rows()) != side || static_cast<std::size_t>(m.cols()) != side)
            throw ValidationError("all layers of a dumped record must share one side length");
        manifest.layer_file_names.push_back(layer_file_name(layer, record.matrices.size()));
        write_layer_file(dir / manifest.layer_file_names.back(), m);
    }

    json j = {
        {"version", manifest.version},
        {"num_layers", manifest.num_layers},
        {"num_visual", manifest.num_visual},
        {"num_text", manifest.num_text},
        {"dtype", manifest.dtype},
        {"layer_file_names", manifest.layer_file_names},
        {"example_id", manifest.example_id},
    };
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("write failed on " + (dir / "manifest.json").string());
}

bool is_dump_dir(const fs::path& dir) {
    std::error_code ec;
    return fs::is_regular_file(dir / "manifest.json", ec);
}

std::vector<fs::path> collect_dump_dirs(std::span<const fs::path> inputs) {
    std::vector<fs::path> dirs;
    for (const auto& input : inputs) {
        std::error_code ec;
        if (!fs::is_directory(input, ec))
            throw IoError("not a directory: " + input.string());
        if (is_dump_dir(input)) {
            dirs.push_back(input);
            continue;
        }
        std::vector<fs::path> children;
        for (const auto& entry : fs::directory_iterator(input, ec)) {
            if (entry.is_directory() && is_dump_dir(entry.path()))
                children.push_back(entry.path());
        }
        if (ec)
            throw IoError("cannot list " + input.string() + ": " + ec.message());
        std::sort(children.begin(), children.end());
        dirs.insert(dirs.end(), children.begin(), children.end());
    }
    return dirs;
}

ModelConfig config_for_example(const ModelConfig& config, std::size_t num_text) {
    ModelConfig copy = config;
    copy.num_text_tokens = num_text;
    return copy;
}

ReducedRecord reduce_record(const AttentionRecord& record, const ModelConfig& config) {
    require_valid_record(record, config);
    const std::size_t n = config.num_visual_tokens;
    const std::size_t m = config.num_text_tokens;
    if (m == 0)
        throw ValidationError("empty-text: cross-attention statistics need at least one text token");

    ReducedRecord reduced;
    reduced.num_visual = n;
    reduced.layers.reserve(record.matrices.size());
    const auto vn = static_cast<Eigen::Index>(n);
    const auto vm = static_cast<Eigen::Index>(m);
    for (const Matrix& a : record.matrices) {
        LayerStatistics layer;
        layer.self_received.resize(n);
        layer.cross_received.resize(n);
        const Eigen::RowVectorXd self = a.topLeftCorner(vn, vn).colwise().sum();
        const Eigen::RowVectorXd cross = a.bottomLeftCorner(vm, vn).colwise().sum();
        for (std::size_t j = 0; j < n; ++j) {
            layer.self_received[j] = self(static_cast<Eigen::Index>(j));
            layer.cross_received[j] = cross(static_cast<Eigen::Index>(j));
        }
        layer.self_mean = self.sum() / static_cast<double>(n);
        layer.cross_mean = cross.sum() / static_cast<double>(m);
        reduced.layers.push_back(std::move(layer));
    }
    return reduced;
}

StatsAccumulator::StatsAccumulator(std::size_t num_layers, std::size_t num_visual)
    : m_num_layers(num_layers), m_num_visual(num_visual), m_sums(num_layers) {
    for (auto& layer : m_sums) {
        layer.self_received.assign(num_visual, 0.0);
        layer.cross_received.assign(num_visual, 0.0);
    }
}

void StatsAccumulator::check_shape(std::size_t num_layers, std::size_t num_visual) const {
    if (num_layers != m_num_layers || num_visual != m_num_visual) {
        throw ValidationError("record shape K=" + std::to_string(num_layers) + ", N=" + std::to_string(num_visual) +
                              " does not match accumulator K=" + std::to_string(m_num_layers) +
                              ", N=" + std::to_string(m_num_visual));
    }
}

void StatsAccumulator::add(const ReducedRecord& reduced) {
    check_shape(reduced.layers.size(), reduced.num_visual);
    for (std::size_t i = 0; i < m_num_layers; ++i) {
        const auto& src = reduced.layers[i];
        auto& dst = m_sums[i];
        if (src.self_received.size() != m_num_visual || src.cross_received.size() != m_num_visual)
            throw ValidationError("reduced record vector length does not match N");
        for (std::size_t j = 0; j < m_num_visual; ++j) {
            dst.self_received[j] += src.self_received[j];
            dst.cross_received[j] += src.cross_received[j];
        }
        dst.self_mean += src.self_mean;
        dst.cross_mean += src.cross_mean;
    }
    ++m_count;
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    if (other.m_count == 0)
        return;
    if (m_count == 0 && m_sums.empty()) {
        *this = other;
        return;
    }
    check_shape(other.m_num_layers, other.m_num_visual);
    for (std::size_t i = 0; i < m_num_layers; ++i) {
        auto& dst = m_sums[i];
        const auto& src = other.m_sums[i];
        for (std::size_t j = 0; j < m_num_visual; ++j) {
            dst.self_received[j] += src.self_received[j];
            dst.cross_received[j] += src.cross_received[j];
        }
        dst.self_mean += src.self_mean;
        dst.cross_mean += src.cross_mean;
    }
    m_count += other.m_count;
}

AttentionStatistics StatsAccumulator::finish(const ModelConfig& config) const {
    if (m_count == 0)
        throw ValidationError("cannot aggregate zero records");
    check_shape(config.num_layers, config.num_visual_tokens);
    const double n = static_cast<double>(m_count);
    AttentionStatistics stats;
    stats.sample_count = m_count;
    stats.config_digest = config.digest();
    stats.layers = m_sums;
    for (auto& layer : stats.layers) {
        for (auto& v : layer.self_received)
            v /= n;
        for (auto& v : layer.cross_received)
            v /= n;
        layer.self_mean /= n;
        layer.cross_mean /= n;
    }
    return stats;
}

AttentionStatistics aggregate(std::span<const ReducedRecord> records, const ModelConfig& config) {
    if (records.empty())
        throw ValidationError("cannot aggregate zero records");
    StatsAccumulator acc(config.num_layers, config.num_visual_tokens);
    for (const auto& record : records)
        acc.add(record);
    return acc.finish(config);
}

AttentionStatistics aggregate_dumps(std::span<const fs::path> dump_dirs, const ModelConfig& config) {
    if (dump_dirs.empty())
        throw ValidationError("no dump directories given");
    std::vector<std::optional<ReducedRecord>> reduced(dump_dirs.size());
    parallel_for(dump_dirs.size(), [&](std::size_t i) {
        Dump dump = read_dump(dump_dirs[i]);
        if (dump.manifest.num_layers != config.num_layers || dump.manifest.num_visual != config.num_visual_tokens) {
            throw ValidationError("dump " + dump_dirs[i].string() + " has K=" + std::to_string(dump.manifest.num_layers) +
                                  ", N=" + std::to_string(dump.manifest.num_visual) + "; model config expects K=" +
                                  std::to_string(config.num_layers) + ", N=" +
                                  std::to_string(config.num_visual_tokens));
        }
        reduced[i] = reduce_record(dump.record, config_for_example(config, dump.manifest.num_text));
    });
    StatsAccumulator acc(config.num_layers, config.num_visual_tokens);
    for (const auto& r : reduced)
        acc.add(*r);
    return acc.finish(config);
}

}  // namespace fitprune::statistics
