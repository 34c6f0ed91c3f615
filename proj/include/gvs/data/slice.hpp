#pragma once

// Paired slice data: a grayscale image in [0,1] and its binary lesion mask.
// Pixels are stored as float32; the network scalar type is chosen at the
// point where batches are assembled.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvs/core/tensor.hpp"

namespace gvs {

/// Pixels below this intensity count as background, not normal tissue.
inline constexpr double kBodyThreshold = 0.01;

struct ImageSlice {
    Tensor<float> pixels;  // (H, W)
    std::int64_t height() const { return pixels.dim(0); }
    std::int64_t width() const { return pixels.dim(1); }
};

struct LesionMask {
    Tensor<float> labels;  // (H, W), values exactly 0 or 1
};

struct SlicePair {
    ImageSlice image;
    LesionMask mask;
    std::string id;
};

inline void validate_pair(const SlicePair& p) {
    if (!p.image.pixels.same_shape(p.mask.labels))
        throw std::invalid_argument("slice pair '" + p.id + "': image " +
                                    p.image.pixels.shape_str() + " and mask " +
                                    p.mask.labels.shape_str() + " shapes differ");
    for (std::size_t i = 0; i < p.image.pixels.size(); ++i) {
        const float v = p.image.pixels[i];
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("slice pair '" + p.id + "': pixel out of [0,1]");
    }
    for (std::size_t i = 0; i < p.mask.labels.size(); ++i) {
        const float v = p.mask.labels[i];
        if (v != 0.0f && v != 1.0f)
            throw std::invalid_argument("slice pair '" + p.id + "': mask value not in {0,1}");
    }
}

/// Mean intensity of normal tissue: mask-0 pixels above the background
/// threshold. Falls back to all mask-0 pixels when the body is empty;
/// a mask covering everything is an error.
template <typename T>
double normal_tissue_mean(const T* image, const T* mask, std::int64_t count,
                          double threshold = kBodyThreshold) {
    double sum = 0.0, sum_all = 0.0;
    std::int64_t n = 0, n_all = 0;
    for (std::int64_t i = 0; i < count; ++i) {
        if (mask[i] > T{0.5}) continue;
        ++n_all;
        sum_all += static_cast<double>(image[i]);
        if (static_cast<double>(image[i]) > threshold) {
            ++n;
            sum += static_cast<double>(image[i]);
        }
    }
    if (n_all == 0) throw std::invalid_argument("normal_tissue_mean: no normal tissue");
    return n > 0 ? sum / static_cast<double>(n) : sum_all / static_cast<double>(n_all);
}

template <typename T>
double normal_tissue_mean(const Tensor<T>& image, const Tensor<T>& mask,
                          double threshold = kBodyThreshold) {
    require_same_shape(image, mask, "normal_tissue_mean");
    return normal_tissue_mean(image.data(), mask.data(), static_cast<std::int64_t>(image.size()),
                              threshold);
}

/// Stacks pairs[indices] into (B, H, W, 1) image and mask batches.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<SlicePair>& pairs,
                                           const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const auto H = pairs[indices[0]].image.height();
    const auto W = pairs[indices[0]].image.width();
    const std::int64_t B = static_cast<std::int64_t>(indices.size());
    Tensor<T> x({B, H, W, 1}), y({B, H, W, 1});
    for (std::int64_t b = 0; b < B; ++b) {
        const SlicePair& p = pairs[indices[static_cast<std::size_t>(b)]];
        if (p.image.height() != H || p.image.width() != W)
            throw std::invalid_argument("make_batch: mixed slice shapes in one batch");
        for (std::int64_t i = 0; i < H * W; ++i) {
            x[static_cast<std::size_t>(b * H * W + i)] = static_cast<T>(p.image.pixels[i]);
            y[static_cast<std::size_t>(b * H * W + i)] = static_cast<T>(p.mask.labels[i]);
        }
    }
    return {std::move(x), std::move(y)};
}

}  // namespace gvs
