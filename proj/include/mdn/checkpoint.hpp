#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mdn/config_io.hpp"

namespace mdn {

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'N', 'C', 'K', 'P', 'T', '1'};

/// FNV-1a over the compact JSON dump.
inline std::string config_hash(const Json& j) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace detail {

inline Json stats_to_json(const SubjectStats& s) {
    Json subjects = Json::object();
    for (const auto& [id, m] : s.subjects) subjects[id] = {{"mean", m.mean}, {"sd", m.sd}};
    return {{"epsilon", s.epsilon}, {"subjects", subjects}};
}

inline SubjectStats stats_from_json(const Json& j) {
    SubjectStats s;
    s.epsilon = j.at("epsilon").get<double>();
    for (auto it = j.at("subjects").begin(); it != j.at("subjects").end(); ++it) {
        s.subjects[it.key()] = {it.value().at("mean").get<std::vector<double>>(),
                                it.value().at("sd").get<std::vector<double>>()};
    }
    return s;
}

} // namespace detail

/// Layout: 8-byte magic, little-endian uint64 header length, JSON header
/// (config, geometry, tensor names/shapes, subject statistics), then every
/// tensor as little-endian float64 in header order.
inline void save_checkpoint(const ModelBundle& m, const std::filesystem::path& path) {
    const Json cfg = train_config_to_json(m.config);
    Json tensors = Json::array();
    const auto params = m.parameters();
    for (const auto& [name, v] : params) tensors.push_back({{"name", name}, {"shape", v.shape()}});
    const Json header = {{"format", "mdn-checkpoint"},
                         {"version", 1},
                         {"config", cfg},
                         {"config_hash", config_hash(cfg)},
                         {"channels", m.config.encoder.channels},
                         {"timepoints", m.config.encoder.timepoints},
                         {"n_classes", m.n_classes},
                         {"tensors", tensors},
                         {"seen_stats", detail::stats_to_json(m.seen_stats)},
                         {"calibration_stats", detail::stats_to_json(m.calibration_stats)}};
    const std::string text = header.dump();
    std::string out(kCheckpointMagic, 8);
    const auto put_u64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
    };
    put_u64(text.size());
    out += text;
    for (const auto& [name, v] : params) {
        for (double d : v.value().data) put_u64(std::bit_cast<std::uint64_t>(d));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint " + path.string();
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw FormatError(where + ": bad magic (not a checkpoint)");
    }
    auto get_u64 = [&](std::size_t at) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
        return v;
    };
    const std::uint64_t header_len = get_u64(8);
    if (header_len > bytes.size() - 16) throw FormatError(where + ": truncated header");
    Json header;
    try {
        header = Json::parse(bytes.substr(16, header_len));
    } catch (const Json::exception& e) {
        throw FormatError(where + ": header is not valid JSON (" + e.what() + ")");
    }
    ModelBundle m;
    try {
        const Json& cfg_json = header.at("config");
        if (header.at("config_hash").get<std::string>() != config_hash(cfg_json)) {
            throw FormatError(where + ": config hash mismatch");
        }
        TrainConfig cfg = train_config_from_json(cfg_json, "config");
        m = ModelBundle::create(cfg, header.at("channels").get<std::size_t>(), header.at("timepoints").get<std::size_t>(),
                                header.at("n_classes").get<std::size_t>());
        m.seen_stats = detail::stats_from_json(header.at("seen_stats"));
        m.calibration_stats = detail::stats_from_json(header.at("calibration_stats"));
    } catch (const Json::exception& e) {
        throw FormatError(where + ": malformed header (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw FormatError(where + ": " + e.what());
    }
    const auto params = m.parameters();
    const Json& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
        throw FormatError(where + ": holds " + std::to_string(tensors.size()) + " tensors, the configuration needs " +
                          std::to_string(params.size()));
    }
    std::size_t offset = 16 + header_len;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, v] = params[i];
        if (tensors[i].at("name").get<std::string>() != name || tensors[i].at("shape").get<Shape>() != v.shape()) {
            throw FormatError(where + ": tensor " + std::to_string(i) + " does not match '" + name + "' " +
                              shape_string(v.shape()));
        }
        auto& data = const_cast<Var&>(v).mutable_value().data;
        if (offset + 8 * data.size() > bytes.size()) throw FormatError(where + ": payload truncated at '" + name + "'");
        for (auto& d : data) {
            d = std::bit_cast<double>(get_u64(offset));
            offset += 8;
        }
    }
    if (offset != bytes.size()) throw FormatError(where + ": trailing bytes after payload");
    return m;
}

} // namespace mdn
