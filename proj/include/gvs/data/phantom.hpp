#pragma once

// Deterministic lesion phantoms: an elliptical body of smooth random texture
// on a zero background, plus one disk-like lesion blob of additive contrast
// with a smooth boundary falloff. The mask is binarized at 50% of the peak
// offset, which by construction equals the set of pixels within the sampled
// lesion radius.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvs/core/rng.hpp"
#include "gvs/data/slice.hpp"

namespace gvs {

struct PhantomSpec {
    std::int64_t size = 128;       // pixels per side
    std::int64_t n_slices = 200;
    double lesion_contrast = 0.35;  // additive offset over local background
    double lesion_radius_min = 0.08;  // fraction of image size
    double lesion_radius_max = 0.16;
    double texture_scale = 0.22;  // bump width as a fraction of image size
    std::uint64_t seed = 0;

    void validate() const {
        if (size < 32) throw std::invalid_argument("phantom: size must be >= 32");
        if (n_slices < 1) throw std::invalid_argument("phantom: n_slices must be >= 1");
        if (!(lesion_contrast >= 0.0))
            throw std::invalid_argument("phantom: lesion_contrast must be >= 0");
        if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max &&
              lesion_radius_max < 0.5))
            throw std::invalid_argument("phantom: need 0 < radius_min <= radius_max < 0.5");
        if (!(texture_scale > 0.0)) throw std::invalid_argument("phantom: texture_scale must be > 0");
        // The lesion disk (plus its soft edge) must fit inside the smallest
        // body ellipse this generator can draw.
        const double r_max_px = lesion_radius_max * static_cast<double>(size);
        const double edge = std::max(1.5, 0.12 * r_max_px);
        const double b_min = 0.30 * static_cast<double>(size);
        if (r_max_px + edge + 2.0 >= b_min)
            throw std::invalid_argument(
                "phantom: lesion cannot fit inside the body ellipse (radius_max too large)");
    }
};

namespace detail {

inline double smoothstep01(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

/// Pure function of the spec: equal specs yield bit-identical slices.
inline std::vector<SlicePair> generate_phantoms(const PhantomSpec& spec) {
    spec.validate();
    const std::int64_t S = spec.size;
    const double fs = static_cast<double>(S);

    std::vector<SlicePair> out;
    out.reserve(static_cast<std::size_t>(spec.n_slices));

    for (std::int64_t k = 0; k < spec.n_slices; ++k) {
        Rng rng(mix_seed(spec.seed, 0x70686100ULL + static_cast<std::uint64_t>(k)));

        // Body ellipse.
        const double cx = fs * (0.5 + rng.uniform(-0.02, 0.02));
        const double cy = fs * (0.5 + rng.uniform(-0.02, 0.02));
        const double ax = fs * rng.uniform(0.36, 0.44);
        const double by = fs * rng.uniform(0.30, 0.38);

        // Smooth texture: a base level plus random Gaussian bumps.
        struct Bump {
            double x, y, sigma, amp;
        };
        std::vector<Bump> bumps(20);
        for (auto& b : bumps) {
            b.x = cx + ax * rng.uniform(-0.9, 0.9);
            b.y = cy + by * rng.uniform(-0.9, 0.9);
            b.sigma = spec.texture_scale * fs * rng.uniform(0.8, 1.6);
            b.amp = rng.uniform(-0.06, 0.06);
        }

        // Lesion geometry: radius away from the range ends so binarized disk
        // areas stay strictly inside the analytic pi*r^2 bounds.
        const double r = fs * (spec.lesion_radius_min +
                               (spec.lesion_radius_max - spec.lesion_radius_min) *
                                   rng.uniform(0.15, 0.85));
        const double edge = std::max(1.5, 0.12 * r);
        double lx = 0.0, ly = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
            const double margin = r + edge + 2.0;
            if (ax <= margin || by <= margin) break;
            const double ux = rng.uniform(-1.0, 1.0), uy = rng.uniform(-1.0, 1.0);
            const double px = cx + (ax - margin) * ux, py = cy + (by - margin) * uy;
            const double nx = (px - cx) / (ax - margin), ny = (py - cy) / (by - margin);
            if (nx * nx + ny * ny <= 1.0) {
                lx = px;
                ly = py;
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error("phantom: lesion cannot fit inside the body ellipse (slice " +
                                     std::to_string(k) + ")");

        SlicePair pair;
        pair.id = "p" + std::string(4 - std::min<std::size_t>(4, std::to_string(k).size()), '0') +
                  std::to_string(k);
        pair.image.pixels = Tensor<float>({S, S});
        pair.mask.labels = Tensor<float>({S, S});

        for (std::int64_t y = 0; y < S; ++y) {
            for (std::int64_t x = 0; x < S; ++x) {
                const double dx = (static_cast<double>(x) - cx) / ax;
                const double dy = (static_cast<double>(y) - cy) / by;
                const double rr = dx * dx + dy * dy;
                double v = 0.0;
                if (rr < 1.0) {
                    double tex = 0.42;
                    for (const auto& b : bumps) {
                        const double bx = static_cast<double>(x) - b.x;
                        const double byy = static_cast<double>(y) - b.y;
                        tex += b.amp * std::exp(-(bx * bx + byy * byy) / (2.0 * b.sigma * b.sigma));
                    }
                    tex = std::clamp(tex, 0.15, 0.62);
                    // Soft body edge over the outer few percent of the ellipse.
                    const double fall = detail::smoothstep01((1.0 - std::sqrt(rr)) / 0.04);
                    v = tex * fall;
                }

                // Lesion offset profile: 1 inside r-edge, 0 outside r+edge,
                // exactly 0.5 at distance r.
                const double dlx = static_cast<double>(x) - lx;
                const double dly = static_cast<double>(y) - ly;
                const double d = std::sqrt(dlx * dlx + dly * dly);
                const double prof = detail::smoothstep01((r + edge - d) / (2.0 * edge));
                if (prof >= 0.5) pair.mask.labels[static_cast<std::size_t>(y * S + x)] = 1.0f;
                v += spec.lesion_contrast * prof;

                pair.image.pixels[static_cast<std::size_t>(y * S + x)] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace gvs
