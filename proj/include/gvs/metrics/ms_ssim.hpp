#pragma once

// Multi-scale SSIM with the Wang (2003) scale weights, renormalized when
// fewer than five scales are used. Gaussian window 11x11, sigma 1.5, valid
// region only; scales are linked by 2x2 average downsampling. Computation is
// in double regardless of the input scalar type.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvs/core/tensor.hpp"

namespace gvs {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Largest scale count the image supports: side >= 11 * 2^(scales-1).
inline int max_feasible_scales(std::int64_t h, std::int64_t w) {
    const std::int64_t side = std::min(h, w);
    int s = 0;
    while (side >= static_cast<std::int64_t>(kSsimWindow) << s) ++s;
    return std::min(s, 5);
}

namespace detail {

inline const std::array<double, kSsimWindow>& gauss_taps() {
    static const std::array<double, kSsimWindow> taps = [] {
        std::array<double, kSsimWindow> t{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - (kSsimWindow - 1) / 2.0;
            t[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += t[i];
        }
        for (auto& v : t) v /= sum;
        return t;
    }();
    return taps;
}

// Valid separable Gaussian filtering: (H, W) -> (H-10, W-10).
inline std::vector<double> gauss_valid(const std::vector<double>& img, std::int64_t H,
                                       std::int64_t W) {
    const auto& g = gauss_taps();
    const std::int64_t Wo = W - (kSsimWindow - 1);
    const std::int64_t Ho = H - (kSsimWindow - 1);
    std::vector<double> rows(static_cast<std::size_t>(H * Wo));
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < Wo; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * img[y * W + x + k];
            rows[static_cast<std::size_t>(y * Wo + x)] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(Ho * Wo));
    for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t x = 0; x < Wo; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * rows[(y + k) * Wo + x];
            out[static_cast<std::size_t>(y * Wo + x)] = s;
        }
    return out;
}

inline std::vector<double> downsample2_mean(const std::vector<double>& img, std::int64_t H,
                                            std::int64_t W) {
    const std::int64_t Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<std::size_t>(Ho * Wo));
    for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t x = 0; x < Wo; ++x)
            out[static_cast<std::size_t>(y * Wo + x)] =
                0.25 * (img[2 * y * W + 2 * x] + img[2 * y * W + 2 * x + 1] +
                        img[(2 * y + 1) * W + 2 * x] + img[(2 * y + 1) * W + 2 * x + 1]);
    return out;
}

struct ScaleStats {
    double mean_l = 0.0;
    double mean_cs = 0.0;
};

inline ScaleStats ssim_scale_stats(const std::vector<double>& a, const std::vector<double>& b,
                                   std::int64_t H, std::int64_t W) {
    const std::size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = gauss_valid(a, H, W);
    const auto mu_b = gauss_valid(b, H, W);
    const auto m_aa = gauss_valid(aa, H, W);
    const auto m_bb = gauss_valid(bb, H, W);
    const auto m_ab = gauss_valid(ab, H, W);
    double sum_l = 0.0, sum_cs = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        sum_l += (2.0 * mu_a[i] * mu_b[i] + kSsimC1) /
                 (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kSsimC1);
        sum_cs += (2.0 * cov + kSsimC2) / (va + vb + kSsimC2);
    }
    const double cnt = static_cast<double>(mu_a.size());
    return {sum_l / cnt, sum_cs / cnt};
}

}  // namespace detail

/// Plain MS-SSIM over two single-channel images in [0,1].
template <typename T>
double ms_ssim(const Tensor<T>& x, const Tensor<T>& y, int scales) {
    require_same_shape(x, y, "ms_ssim");
    if (x.rank() != 2) throw std::invalid_argument("ms_ssim: want rank-2 images");
    const int feasible = max_feasible_scales(x.dim(0), x.dim(1));
    if (scales < 1 || scales > 5)
        throw std::invalid_argument("ms_ssim: scales must lie in 1..5");
    if (scales > feasible)
        throw std::invalid_argument("ms_ssim: image " + x.shape_str() + " supports at most " +
                                    std::to_string(feasible) + " scales, requested " +
                                    std::to_string(scales));

    std::vector<double> a(x.size()), b(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        a[i] = static_cast<double>(x[i]);
        b[i] = static_cast<double>(y[i]);
    }
    std::int64_t H = x.dim(0), W = x.dim(1);

    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[static_cast<std::size_t>(s)];

    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
        const auto st = detail::ssim_scale_stats(a, b, H, W);
        const double w = kMsSsimWeights[static_cast<std::size_t>(s)] / wsum;
        // Negative contrast-structure means anticorrelated structure; clamp
        // at zero so fractional powers stay defined.
        if (s + 1 < scales) {
            result *= std::pow(std::max(st.mean_cs, 0.0), w);
            a = detail::downsample2_mean(a, H, W);
            b = detail::downsample2_mean(b, H, W);
            H /= 2;
            W /= 2;
        } else {
            result *= std::pow(std::max(st.mean_cs, 0.0), w) *
                      std::pow(std::max(st.mean_l, 0.0), w);
        }
    }
    return result;
}

/// Identity metric: MS-SSIM on the two images with lesion pixels zeroed,
/// exactly the masked-product formulation.
template <typename T>
double masked_ms_ssim(const Tensor<T>& x, const Tensor<T>& gx, const Tensor<T>& mask, int scales) {
    require_same_shape(x, gx, "masked_ms_ssim");
    require_same_shape(x, mask, "masked_ms_ssim");
    bool any_normal = false;
    for (std::size_t i = 0; i < mask.size() && !any_normal; ++i) any_normal = mask[i] <= T{0.5};
    if (!any_normal) throw std::invalid_argument("masked_ms_ssim: empty normal region");
    Tensor<T> a(x.shape()), b(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T keep = mask[i] > T{0.5} ? T{0} : T{1};
        a[i] = x[i] * keep;
        b[i] = gx[i] * keep;
    }
    return ms_ssim(a, b, scales);
}

}  // namespace gvs
