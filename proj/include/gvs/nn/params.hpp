#pragma once

// Flat parameter/gradient storage with a named layer table. One contiguous
// array per network keeps the optimizer trivial and makes checkpoints a
// single blob plus a JSON manifest describing the layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvs/core/hash.hpp"
#include "gvs/core/rng.hpp"

namespace gvs::nn {

enum class NetKind { generator, segmentor };

inline std::string to_string(NetKind k) {
    return k == NetKind::generator ? "generator" : "segmentor";
}

inline NetKind net_kind_from_string(const std::string& s) {
    if (s == "generator") return NetKind::generator;
    if (s == "segmentor") return NetKind::segmentor;
    throw std::invalid_argument("unknown network kind: " + s);
}

struct ParamEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t offset = 0;
    std::int64_t count = 0;
};

template <typename T>
class ParamStore {
  public:
    /// Registers a named tensor and returns its offset. Call order defines
    /// the blob layout, so construction must be deterministic.
    std::int64_t add(std::string name, std::vector<std::int64_t> shape) {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        ParamEntry e{std::move(name), std::move(shape), static_cast<std::int64_t>(value.size()), n};
        value.resize(value.size() + static_cast<std::size_t>(n), T{0});
        grad.resize(value.size(), T{0});
        entries.push_back(std::move(e));
        return entries.back().offset;
    }

    T* val(std::int64_t offset) { return value.data() + offset; }
    const T* val(std::int64_t offset) const { return value.data() + offset; }
    T* grd(std::int64_t offset) { return grad.data() + offset; }

    std::int64_t total_count() const { return static_cast<std::int64_t>(value.size()); }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }

    bool all_finite() const {
        for (const T& v : value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::uint64_t value_hash() const { return hash_span(value.data(), value.size()); }

    const ParamEntry& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw std::out_of_range("no parameter named " + name);
    }

    std::vector<ParamEntry> entries;
    std::vector<T> value;
    std::vector<T> grad;
};

/// Checkpoint manifest fields shared by parameter blobs and train states.
struct BlobManifest {
    std::string format;
    NetKind kind = NetKind::generator;
    int base_width = 0;
    std::uint64_t seed = 0;
    std::string dtype;
    std::int64_t total_count = 0;
    std::vector<ParamEntry> layers;
    std::string content_hash;
    std::string config_hash;  // optional
};

inline nlohmann::json layers_to_json(const std::vector<ParamEntry>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : layers)
        arr.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"count", e.count}});
    return arr;
}

inline std::vector<ParamEntry> layers_from_json(const nlohmann::json& arr) {
    std::vector<ParamEntry> out;
    for (const auto& j : arr) {
        ParamEntry e;
        e.name = j.at("name").get<std::string>();
        e.shape = j.at("shape").get<std::vector<std::int64_t>>();
        e.offset = j.at("offset").get<std::int64_t>();
        e.count = j.at("count").get<std::int64_t>();
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_file_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("short write to " + p.string());
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    const auto n = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(n));
    in.read(buf.data(), n);
    if (!in) throw std::runtime_error("short read from " + p.string());
    return buf;
}

/// Saves parameter values as a little-endian float32 blob `path` plus a JSON
/// manifest `path + ".json"` with the layer table.
template <typename T>
void save_param_blob(const ParamStore<T>& store, NetKind kind, int base_width, std::uint64_t seed,
                     const std::filesystem::path& path, const std::string& config_hash = "") {
    std::vector<float> flat(store.value.size());
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = static_cast<float>(store.value[i]);
    write_file_bytes(path, flat.data(), flat.size() * sizeof(float));

    nlohmann::json j;
    j["format"] = "gvs-params-v1";
    j["kind"] = to_string(kind);
    j["base_width"] = base_width;
    j["seed"] = seed;
    j["dtype"] = "float32";
    j["total_count"] = store.total_count();
    j["layers"] = layers_to_json(store.entries);
    j["content_hash"] = hash_hex(hash_span(flat.data(), flat.size()));
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    std::ofstream out(path.string() + ".json");
    out << j.dump(2) << "\n";
}

struct LoadedParams {
    BlobManifest manifest;
    std::vector<float> values;
};

inline LoadedParams load_param_blob(const std::filesystem::path& path) {
    const auto mpath = std::filesystem::path(path.string() + ".json");
    std::ifstream min(mpath);
    if (!min) throw std::runtime_error("missing checkpoint manifest: " + mpath.string());
    nlohmann::json j = nlohmann::json::parse(min);

    LoadedParams lp;
    lp.manifest.format = j.at("format").get<std::string>();
    if (lp.manifest.format != "gvs-params-v1")
        throw std::runtime_error("unsupported checkpoint format: " + lp.manifest.format);
    lp.manifest.kind = net_kind_from_string(j.at("kind").get<std::string>());
    lp.manifest.base_width = j.at("base_width").get<int>();
    lp.manifest.seed = j.at("seed").get<std::uint64_t>();
    lp.manifest.dtype = j.at("dtype").get<std::string>();
    lp.manifest.total_count = j.at("total_count").get<std::int64_t>();
    lp.manifest.layers = layers_from_json(j.at("layers"));
    lp.manifest.content_hash = j.at("content_hash").get<std::string>();
    if (j.contains("config_hash")) lp.manifest.config_hash = j["config_hash"].get<std::string>();

    const auto bytes = read_file_bytes(path);
    if (bytes.size() != static_cast<std::size_t>(lp.manifest.total_count) * sizeof(float))
        throw std::runtime_error("checkpoint blob size does not match manifest: " + path.string());
    lp.values.resize(static_cast<std::size_t>(lp.manifest.total_count));
    std::memcpy(lp.values.data(), bytes.data(), bytes.size());
    if (hash_hex(hash_span(lp.values.data(), lp.values.size())) != lp.manifest.content_hash)
        throw std::runtime_error("checkpoint blob hash does not match manifest: " + path.string());
    return lp;
}

}  // namespace gvs::nn
