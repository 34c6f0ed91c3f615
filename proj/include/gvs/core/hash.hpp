#pragma once

// FNV-1a content hashing for manifests, determinism checks and parameter
// isolation assertions. Not cryptographic; collisions are irrelevant here.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace gvs {

class Fnv1a {
  public:
    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return h_; }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_bytes(const void* bytes, std::size_t n) {
    Fnv1a h;
    h.update(bytes, n);
    return h.digest();
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::uint64_t hash_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for hashing: " + p.string());
    Fnv1a h;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.digest();
}

template <typename T>
std::uint64_t hash_span(const T* data, std::size_t n) {
    return hash_bytes(data, n * sizeof(T));
}

}  // namespace gvs
