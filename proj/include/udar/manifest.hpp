#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udar/errors.hpp"
#include "udar/rng.hpp"

namespace udar {

inline constexpr const char* kCodeVersion = "0.1.0";

/// FNV-1a over the file bytes, hex encoded.
inline std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for digest");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

inline std::string iso_timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Provenance record for one CLI run. Written atomically at run end; the
/// timestamps and wall clock live here (never in result CSVs) so result
/// files stay byte-reproducible.
struct RunManifest {
    std::string command;
    std::string config_path;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;
    double wall_clock_seconds = 0.0;
    std::string code_version = kCodeVersion;
    nlohmann::json extra;

    void add_input(const std::string& path) { inputs.emplace_back(path, file_digest_hex(path)); }
};

inline void write_run_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    if (!m.config_path.empty()) {
        j["config_path"] = m.config_path;
        j["config_hash"] = m.config_hash;
    }
    j["seed"] = m.seed;
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& [p, d] : m.inputs) inputs.push_back({{"path", p}, {"digest", d}});
    j["inputs"] = std::move(inputs);
    j["outputs"] = m.outputs;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["wall_clock_seconds"] = m.wall_clock_seconds;
    j["code_version"] = m.code_version;
    if (!m.extra.is_null()) j["extra"] = m.extra;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp);
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace udar
