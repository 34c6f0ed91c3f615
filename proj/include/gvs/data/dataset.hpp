#pragma once

// Dataset layout, ingestion and batching. On disk a dataset is
//   <root>/images/<id>.png  +  <root>/masks/<id>.png
// with grayscale 8- or 16-bit files. Image intensities are min-max rescaled
// per slice to [0,1]; masks binarize at half of their full-scale range.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvs/core/hash.hpp"
#include "gvs/core/rng.hpp"
#include "gvs/data/image_io.hpp"
#include "gvs/data/slice.hpp"

namespace gvs {

namespace fs = std::filesystem;

/// Loads name-matched image/mask pairs sorted by id. Orphans on either side
/// and shape mismatches are errors naming the offender.
inline std::vector<SlicePair> load_slice_pairs(const fs::path& root) {
    const fs::path idir = root / "images";
    const fs::path mdir = root / "masks";
    if (!fs::is_directory(idir) || !fs::is_directory(mdir))
        throw std::runtime_error("dataset root must contain images/ and masks/: " + root.string());

    std::map<std::string, fs::path> images, masks;
    for (const auto& e : fs::directory_iterator(idir))
        if (e.is_regular_file()) images[e.path().stem().string()] = e.path();
    for (const auto& e : fs::directory_iterator(mdir))
        if (e.is_regular_file()) masks[e.path().stem().string()] = e.path();

    for (const auto& [id, p] : images)
        if (!masks.count(id))
            throw std::runtime_error("orphan image without mask: " + p.string());
    for (const auto& [id, p] : masks)
        if (!images.count(id))
            throw std::runtime_error("orphan mask without image: " + p.string());

    std::vector<SlicePair> pairs;
    pairs.reserve(images.size());
    for (const auto& [id, ipath] : images) {  // std::map iterates in id order
        RawImage img = read_gray(ipath);
        RawImage msk = read_gray(masks.at(id));
        if (!img.pixels.same_shape(msk.pixels))
            throw std::runtime_error("shape mismatch between " + ipath.string() + " " +
                                     img.pixels.shape_str() + " and " +
                                     masks.at(id).string() + " " + msk.pixels.shape_str());
        SlicePair p;
        p.id = id;

        // Per-slice min-max rescale; a constant slice maps to all zeros.
        float lo = img.pixels.min(), hi = img.pixels.max();
        p.image.pixels = Tensor<float>(img.pixels.shape());
        if (hi > lo)
            for (std::size_t i = 0; i < img.pixels.size(); ++i)
                p.image.pixels[i] = (img.pixels[i] - lo) / (hi - lo);

        p.mask.labels = Tensor<float>(msk.pixels.shape());
        const float half = static_cast<float>(msk.max_value) * 0.5f;
        for (std::size_t i = 0; i < msk.pixels.size(); ++i)
            p.mask.labels[i] = msk.pixels[i] >= half ? 1.0f : 0.0f;

        pairs.push_back(std::move(p));
    }
    return pairs;
}

/// Writes pairs in the dataset layout (16-bit images, 8-bit masks).
inline void save_slice_pairs(const fs::path& root, const std::vector<SlicePair>& pairs) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    for (const auto& p : pairs) {
        write_gray16(root / "images" / (p.id + ".png"), p.image.pixels);
        write_gray8(root / "masks" / (p.id + ".png"), p.mask.labels);
    }
}

/// Content fingerprint over all files of a dataset directory, stable across
/// runs (sorted relative paths, then bytes).
struct DatasetFingerprint {
    std::size_t file_count = 0;
    std::string content_hash;
};

inline DatasetFingerprint fingerprint_dataset(const fs::path& root) {
    std::vector<fs::path> files;
    // Only the data payload counts: manifests beside it carry timestamps.
    for (const char* sub : {"images", "masks"}) {
        if (!fs::is_directory(root / sub)) continue;
        for (const auto& e : fs::recursive_directory_iterator(root / sub))
            if (e.is_regular_file()) files.push_back(e.path());
    }
    if (files.empty())
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Fnv1a h;
    for (const auto& f : files) {
        h.update(fs::relative(f, root).generic_string());
        const std::uint64_t fh = hash_file(f);
        h.update(&fh, sizeof fh);
    }
    return {files.size(), hash_hex(h.digest())};
}

/// Deterministic shuffle + split into (train, test).
inline std::pair<std::vector<SlicePair>, std::vector<SlicePair>> split(
    std::vector<SlicePair> pairs, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train_fraction must lie in (0,1)");
    if (pairs.size() < 2) throw std::invalid_argument("split: need at least 2 pairs");
    Rng rng(mix_seed(seed, 0x73706c69ULL));
    rng.shuffle(pairs);
    std::size_t k = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(pairs.size())));
    k = std::clamp<std::size_t>(k, 1, pairs.size() - 1);
    std::vector<SlicePair> train(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<SlicePair> test(pairs.begin() + static_cast<std::ptrdiff_t>(k), pairs.end());
    return {std::move(train), std::move(test)};
}

/// Seeded subset of round(fraction * n) pairs (fraction in (0,1]), returned
/// in id order. Supports the training-data fraction sweeps.
inline std::vector<SlicePair> take_fraction(std::vector<SlicePair> pairs, double fraction,
                                            std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("take_fraction: fraction must lie in (0,1]");
    if (fraction == 1.0) return pairs;
    Rng rng(mix_seed(seed, 0x66726163ULL));
    rng.shuffle(pairs);
    std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(pairs.size())));
    k = std::clamp<std::size_t>(k, 1, pairs.size());
    pairs.resize(k);
    std::sort(pairs.begin(), pairs.end(),
              [](const SlicePair& a, const SlicePair& b) { return a.id < b.id; });
    return pairs;
}

/// Batch index plan for one epoch: a pure function of (seed, epoch). The
/// final short batch is retained.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::int64_t epoch) {
    if (n == 0) throw std::invalid_argument("batch_indices: empty pair list");
    if (batch_size < 1) throw std::invalid_argument("batch_indices: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x65706f63ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        const std::size_t end = std::min(n, i + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace gvs
