#pragma once

// Run manifests: the one artifact allowed to carry wall-clock timestamps.
// Everything else a command writes must hash identically across reruns.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gvs/data/dataset.hpp"
#include "gvs/version.hpp"

namespace gvs {

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunManifest {
    std::string run_id;
    nlohmann::json config;
    DatasetFingerprint dataset;
    std::string tool_version = std::string(kToolName) + " " + kVersion;
    std::string created_at;
    std::string finished_at;

    nlohmann::json to_json() const {
        return {{"run_id", run_id},
                {"config", config},
                {"dataset", {{"file_count", dataset.file_count}, {"content_hash", dataset.content_hash}}},
                {"tool_version", tool_version},
                {"created_at", created_at},
                {"finished_at", finished_at}};
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / "manifest.json");
        out << to_json().dump(2) << "\n";
    }
};

}  // namespace gvs
