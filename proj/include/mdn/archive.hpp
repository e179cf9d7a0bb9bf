#pragma once

// Trial archive: a directory holding manifest.json and signals.bin.
//
// manifest.json  {"channels":C,"timepoints":T,"n_classes":K,
//                 "records":[{"label":int,"subject":"str","session":"str"},...]}
// signals.bin    records in manifest order, each C*T float32 little-endian,
//                channel-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdn/data.hpp"

namespace mdn {

namespace detail {

inline void put_f32_le(std::vector<char>& out, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float get_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

} // namespace detail

struct ArchiveInfo {
    std::size_t channels = 0;
    std::size_t timepoints = 0;
    std::size_t n_classes = 0;
};

/// Writes `trials` under directory `path` (created if needed). For an empty
/// list the dimensions come from `info`.
inline void save_archive(const std::vector<LabeledTrial>& trials, const std::filesystem::path& path,
                         ArchiveInfo info = {}) {
    if (!trials.empty()) {
        info.channels = trials[0].channels;
        info.timepoints = trials[0].timepoints;
        std::size_t max_label = 0;
        for (const auto& t : trials) max_label = std::max(max_label, t.label);
        info.n_classes = std::max(info.n_classes, max_label + 1);
    }
    nlohmann::json manifest;
    manifest["channels"] = info.channels;
    manifest["timepoints"] = info.timepoints;
    manifest["n_classes"] = info.n_classes;
    manifest["records"] = nlohmann::json::array();
    std::vector<char> payload;
    payload.reserve(trials.size() * info.channels * info.timepoints * 4);
    for (const auto& t : trials) {
        validate_trial(t, info.channels, info.timepoints, info.n_classes);
        manifest["records"].push_back({{"label", t.label}, {"subject", t.subject_id}, {"session", t.session_id}});
        for (float v : t.signal) detail::put_f32_le(payload, v);
    }
    std::filesystem::create_directories(path);
    std::ofstream m(path / "manifest.json");
    m << manifest.dump(1) << '\n';
    std::ofstream s(path / "signals.bin", std::ios::binary);
    s.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!m || !s) throw std::runtime_error("archive: failed writing to " + path.string());
}

inline std::vector<LabeledTrial> load_archive(const std::filesystem::path& path, ArchiveInfo* info_out = nullptr) {
    const auto manifest_path = path / "manifest.json";
    const auto signals_path = path / "signals.bin";
    if (!std::filesystem::exists(manifest_path)) throw FormatError("archive: missing " + manifest_path.string());
    if (!std::filesystem::exists(signals_path)) throw FormatError("archive: missing " + signals_path.string());

    nlohmann::json manifest;
    try {
        std::ifstream in(manifest_path);
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("archive: manifest.json is not valid JSON: ") + e.what());
    }
    auto field = [&](const char* key) -> std::size_t {
        if (!manifest.contains(key) || !manifest[key].is_number_unsigned()) {
            throw FormatError(std::string("archive: manifest field '") + key + "' missing or not a nonnegative integer");
        }
        return manifest[key].get<std::size_t>();
    };
    ArchiveInfo info{field("channels"), field("timepoints"), field("n_classes")};
    if (!manifest.contains("records") || !manifest["records"].is_array()) {
        throw FormatError("archive: manifest field 'records' missing or not an array");
    }
    const auto& records = manifest["records"];

    std::ifstream s(signals_path, std::ios::binary);
    std::vector<char> payload((std::istreambuf_iterator<char>(s)), std::istreambuf_iterator<char>());
    const std::size_t per_record = info.channels * info.timepoints * 4;
    if (payload.size() != records.size() * per_record) {
        throw FormatError("archive: signals.bin has " + std::to_string(payload.size()) + " bytes, manifest implies " +
                          std::to_string(records.size() * per_record) + " (records x channels x timepoints x 4)");
    }

    std::vector<LabeledTrial> trials;
    trials.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        const std::string where = "archive: records[" + std::to_string(r) + "]";
        if (!rec.is_object() || !rec.contains("label") || !rec["label"].is_number_unsigned()) {
            throw FormatError(where + ".label missing or not a nonnegative integer");
        }
        if (!rec.contains("subject") || !rec["subject"].is_string()) {
            throw FormatError(where + ".subject missing or not a string");
        }
        if (rec.contains("session") && !rec["session"].is_string()) {
            throw FormatError(where + ".session is not a string");
        }
        LabeledTrial t;
        t.channels = info.channels;
        t.timepoints = info.timepoints;
        t.label = rec["label"].get<std::size_t>();
        if (t.label >= info.n_classes) throw FormatError(where + ".label exceeds n_classes");
        t.subject_id = rec["subject"].get<std::string>();
        t.session_id = rec.value("session", std::string());
        t.signal.resize(info.channels * info.timepoints);
        const char* base = payload.data() + r * per_record;
        for (std::size_t i = 0; i < t.signal.size(); ++i) t.signal[i] = detail::get_f32_le(base + 4 * i);
        trials.push_back(std::move(t));
    }
    if (info_out) *info_out = info;
    return trials;
}

} // namespace mdn
