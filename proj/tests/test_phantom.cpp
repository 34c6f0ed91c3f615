#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "gvs/data/phantom.hpp"
#include "gvs/metrics/metrics.hpp"

using namespace gvs;

TEST_CASE("phantoms are a pure function of the spec") {
    PhantomSpec spec;
    spec.size = 64;
    spec.n_slices = 4;
    spec.seed = 11;
    auto a = generate_phantoms(spec);
    auto b = generate_phantoms(spec);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].id == b[i].id);
        for (std::size_t k = 0; k < a[i].image.pixels.size(); ++k)
            REQUIRE(a[i].image.pixels[k] == b[i].image.pixels[k]);
        for (std::size_t k = 0; k < a[i].mask.labels.size(); ++k)
            REQUIRE(a[i].mask.labels[k] == b[i].mask.labels[k]);
    }
}

TEST_CASE("every slice satisfies the pair invariants") {
    PhantomSpec spec;
    spec.size = 64;
    spec.n_slices = 8;
    spec.seed = 3;
    for (const auto& p : generate_phantoms(spec)) {
        REQUIRE_NOTHROW(validate_pair(p));
        bool any = false;
        for (std::size_t k = 0; k < p.mask.labels.size(); ++k) any = any || p.mask.labels[k] > 0.5f;
        REQUIRE(any);
    }
}

TEST_CASE("zero contrast leaves no intensity step across the mask boundary") {
    PhantomSpec spec;
    spec.size = 64;
    spec.n_slices = 10;
    spec.lesion_contrast = 0.0;
    spec.seed = 21;
    for (const auto& p : generate_phantoms(spec)) {
        // 3-pixel ring just outside the mask.
        Tensor<float> dil = dilate_mask(p.mask.labels, 3);
        double in_sum = 0.0, ring_sum = 0.0;
        std::int64_t in_n = 0, ring_n = 0;
        for (std::size_t k = 0; k < p.mask.labels.size(); ++k) {
            if (p.mask.labels[k] > 0.5f) {
                in_sum += p.image.pixels[k];
                ++in_n;
            } else if (dil[k] > 0.5f) {
                ring_sum += p.image.pixels[k];
                ++ring_n;
            }
        }
        REQUIRE(in_n > 0);
        REQUIRE(ring_n > 0);
        REQUIRE(std::abs(in_sum / in_n - ring_sum / ring_n) < 0.02);
    }
}

TEST_CASE("masks do not depend on contrast and sit inside the changed region") {
    PhantomSpec a;
    a.size = 64;
    a.n_slices = 5;
    a.seed = 9;
    a.lesion_contrast = 0.2;
    PhantomSpec b = a;
    b.lesion_contrast = 0.4;
    auto pa = generate_phantoms(a);
    auto pb = generate_phantoms(b);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t k = 0; k < pa[i].mask.labels.size(); ++k) {
            REQUIRE(pa[i].mask.labels[k] == pb[i].mask.labels[k]);
            if (pa[i].mask.labels[k] > 0.5f) {
                // Mask pixels received at least half the contrast offset.
                REQUIRE(pb[i].image.pixels[k] - pa[i].image.pixels[k] >= 0.2f * 0.5f - 1e-4f);
            }
        }
    }
}

TEST_CASE("lesion areas stay within the analytic disk bounds") {
    PhantomSpec spec;
    spec.size = 128;
    spec.n_slices = 200;
    spec.lesion_contrast = 0.35;
    spec.seed = 7;
    const double lo = std::numbers::pi * std::pow(spec.lesion_radius_min * 128.0, 2.0);
    const double hi = std::numbers::pi * std::pow(spec.lesion_radius_max * 128.0, 2.0);
    for (const auto& p : generate_phantoms(spec)) {
        std::int64_t area = 0;
        for (std::size_t k = 0; k < p.mask.labels.size(); ++k) area += p.mask.labels[k] > 0.5f;
        REQUIRE(static_cast<double>(area) > lo);
        REQUIRE(static_cast<double>(area) < hi);
    }
}

TEST_CASE("oversized lesions are rejected") {
    PhantomSpec spec;
    spec.size = 64;
    spec.lesion_radius_min = 0.2;
    spec.lesion_radius_max = 0.45;
    REQUIRE_THROWS_AS(generate_phantoms(spec), std::invalid_argument);

    PhantomSpec bad;
    bad.size = 16;  // below minimum
    REQUIRE_THROWS_AS(generate_phantoms(bad), std::invalid_argument);
}
