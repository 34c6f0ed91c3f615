#pragma once

// Dice overlap on binary masks, aggregated as one global count ratio so
// empty-mask slices cannot produce 0/0 artifacts.

#include <cstdint>
#include <stdexcept>

#include "gvs/core/tensor.hpp"

namespace gvs {

inline constexpr double kDiceEps = 1e-7;

template <typename T>
double dice_score(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "dice_score");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool pa = pred[i] > T{0.5};
        const bool pb = target[i] > T{0.5};
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    return 2.0 * static_cast<double>(inter) / (static_cast<double>(a + b) + kDiceEps);
}

/// Thresholds the lesion channel of a (N,H,W,2) probability map at 0.5.
template <typename T>
Tensor<T> lesion_mask_from_probs(const Tensor<T>& probs) {
    if (probs.rank() != 4 || probs.dim(3) != 2)
        throw std::invalid_argument("lesion_mask_from_probs: want (N,H,W,2)");
    Tensor<T> out({probs.dim(0), probs.dim(1), probs.dim(2), 1});
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = probs[2 * i + 1] >= T{0.5} ? T{1} : T{0};
    return out;
}

}  // namespace gvs
