#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "gvs/data/phantom.hpp"
#include "gvs/metrics/dice.hpp"
#include "gvs/metrics/metrics.hpp"
#include "gvs/metrics/ms_ssim.hpp"

using namespace gvs;

namespace {

// Independent dice oracle: explicit pixel-coordinate sets.
double dice_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    std::set<std::size_t> sa, sb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > 0.5) sa.insert(i);
        if (b[i] > 0.5) sb.insert(i);
    }
    std::size_t inter = 0;
    for (auto i : sa) inter += sb.count(i);
    return 2.0 * static_cast<double>(inter) /
           (static_cast<double>(sa.size() + sb.size()) + 1e-7);
}

}  // namespace

TEST_CASE("dice: exact cases") {
    Tensor<double> a({4, 4});
    a[0] = a[1] = a[5] = a[6] = 1.0;
    REQUIRE(dice_score(a, a) == Catch::Approx(1.0).margin(1e-6));

    Tensor<double> b({4, 4});
    b[10] = b[11] = 1.0;
    REQUIRE(dice_score(a, b) == Catch::Approx(0.0).margin(1e-7));

    // |A| = 4, |B| = 4, |A and B| = 2.
    Tensor<double> c({4, 4});
    c[0] = c[1] = c[2] = c[3] = 1.0;
    REQUIRE(dice_score(a, c) == Catch::Approx(0.5).margin(1e-6));

    REQUIRE_THROWS_AS(dice_score(a, Tensor<double>({2, 2})), std::invalid_argument);
}

TEST_CASE("dice matches the set-count oracle on random masks") {
    Rng rng(1);
    for (int t = 0; t < 500; ++t) {
        Tensor<double> a({8, 8}), b({8, 8});
        const double pa = rng.uniform(), pb = rng.uniform();
        for (std::size_t i = 0; i < 64; ++i) {
            a[i] = rng.uniform() < pa ? 1.0 : 0.0;
            b[i] = rng.uniform() < pb ? 1.0 : 0.0;
        }
        REQUIRE(dice_score(a, b) == Catch::Approx(dice_oracle(a, b)).margin(1e-6));
        REQUIRE(dice_score(a, b) == dice_score(b, a));  // symmetry
    }
}

TEST_CASE("dice is invariant to a common pixel permutation") {
    Rng rng(2);
    Tensor<double> a({6, 6}), b({6, 6});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        b[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    std::vector<std::size_t> perm(a.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    Tensor<double> ap(a.shape()), bp(b.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        ap[i] = a[perm[i]];
        bp[i] = b[perm[i]];
    }
    REQUIRE(dice_score(ap, bp) == Catch::Approx(dice_score(a, b)).epsilon(1e-12));
}

TEST_CASE("ms-ssim equals one on identical inputs") {
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        Tensor<float> x({64, 64});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());
        Tensor<float> mask({64, 64});
        for (std::size_t i = 0; i < 40; ++i)
            mask[static_cast<std::size_t>(rng.below(mask.size()))] = 1.0f;
        REQUIRE(masked_ms_ssim(x, x, mask, 2) == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("ms-ssim separates independent noise from identity") {
    Rng rng(4);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        Tensor<float> x({128, 128}), n({128, 128});
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = static_cast<float>(rng.uniform());
            n[i] = static_cast<float>(rng.uniform());
        }
        Tensor<float> empty({128, 128});
        worst = std::max(worst, masked_ms_ssim(x, n, empty, 3));
    }
    REQUIRE(worst < 0.2);
}

TEST_CASE("ms-ssim scale feasibility and mask errors") {
    REQUIRE(max_feasible_scales(128, 128) == 4);
    REQUIRE(max_feasible_scales(32, 32) == 2);
    Tensor<float> x({32, 32});
    Tensor<float> empty({32, 32});
    REQUIRE_THROWS_WITH(ms_ssim(x, x, 4), Catch::Matchers::ContainsSubstring("at most 2"));
    Tensor<float> full = Tensor<float>::full({32, 32}, 1.0f);
    REQUIRE_THROWS_WITH(masked_ms_ssim(x, x, full, 2),
                        Catch::Matchers::ContainsSubstring("empty normal region"));
}

TEST_CASE("identity metric aggregates per-slice values") {
    PhantomSpec spec;
    spec.size = 64;
    spec.n_slices = 2;
    spec.seed = 12;
    auto pairs = generate_phantoms(spec);

    // First slice: identical synthetic. Second: perturbed.
    Tensor<float> noisy = pairs[1].image.pixels;
    Rng rng(5);
    for (std::size_t i = 0; i < noisy.size(); ++i)
        noisy[i] = std::clamp(noisy[i] + static_cast<float>(rng.uniform(-0.2, 0.2)), 0.0f, 1.0f);

    const double v0 =
        masked_ms_ssim(pairs[0].image.pixels, pairs[0].image.pixels, pairs[0].mask.labels, 2);
    const double v1 = masked_ms_ssim(pairs[1].image.pixels, noisy, pairs[1].mask.labels, 2);

    std::vector<SlicePairWithSynth> items;
    items.push_back({&pairs[0], pairs[0].image.pixels});
    items.push_back({&pairs[1], noisy});
    const auto ms = id_metric(items, 2);
    REQUIRE(ms.mean == Catch::Approx(0.5 * (v0 + v1)).epsilon(1e-12));
    REQUIRE(v0 == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(v1 < 1.0);

    // The documented aggregation example.
    const auto agg = mean_std({1.0, 0.8});
    REQUIRE(agg.mean == Catch::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("lesion change ratio: hand case and degenerate conventions") {
    Tensor<float> x({2, 2}), gx({2, 2}), mask({2, 2});
    mask[0] = 1.0f;
    x[0] = 0.5f;
    gx[0] = 0.9f;  // inside |diff| = 0.4
    x[1] = x[2] = x[3] = 0.5f;
    gx[1] = 0.55f;
    gx[2] = 0.45f;
    gx[3] = 0.55f;  // outside mean |diff| = 0.05
    REQUIRE(lesion_change_ratio(x, gx, mask) == Catch::Approx(8.0).epsilon(1e-6));

    REQUIRE(lesion_change_ratio(x, x, mask) == Catch::Approx(1.0).epsilon(1e-9));

    Tensor<float> empty({2, 2});
    REQUIRE_THROWS_WITH(lesion_change_ratio(x, gx, empty),
                        Catch::Matchers::ContainsSubstring("empty mask"));
    Tensor<float> full = Tensor<float>::full({2, 2}, 1.0f);
    REQUIRE_THROWS_WITH(lesion_change_ratio(x, gx, full),
                        Catch::Matchers::ContainsSubstring("whole image"));
}

TEST_CASE("mask dilation uses a euclidean disk") {
    Tensor<float> m({9, 9});
    m[4 * 9 + 4] = 1.0f;
    Tensor<float> d = dilate_mask(m, 3);
    std::int64_t count = 0;
    for (std::size_t i = 0; i < d.size(); ++i) count += d[i] > 0.5f;
    REQUIRE(count == 29);  // offsets with dy^2 + dx^2 <= 9
}

TEST_CASE("change mass fraction concentrates where the change is") {
    Tensor<float> x({8, 8}), gx({8, 8}), mask({8, 8});
    mask[3 * 8 + 3] = 1.0f;
    gx = x;
    gx[3 * 8 + 3] = 0.8f;  // all change on the lesion pixel
    REQUIRE(change_mass_fraction(x, gx, mask, 3) == Catch::Approx(1.0).epsilon(1e-9));
    gx[0] = 0.8f;  // distant change outside the dilated mask
    REQUIRE(change_mass_fraction(x, gx, mask, 3) == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("accumulated dice is the plain series sum and is reproducible") {
    DiceSeries s;
    s.per_epoch = {0.25, 0.25, 0.25};
    REQUIRE(s.sum() == Catch::Approx(0.75).epsilon(1e-12));

    PhantomSpec spec;
    spec.size = 32;
    spec.n_slices = 8;
    spec.seed = 13;
    auto pairs = generate_phantoms(spec);
    SdiceProtocol proto;
    proto.epochs = 3;
    proto.base_width = 8;
    proto.batch_size = 4;
    proto.seed = 7;
    auto [v1, s1] = s_dice<float>(pairs, proto);
    auto [v2, s2] = s_dice<float>(pairs, proto);
    REQUIRE(std::abs(v1 - v2) <= 1e-6);
    REQUIRE(s1.per_epoch.size() == 3);
    REQUIRE(v1 == Catch::Approx(s1.sum()).epsilon(1e-12));
    for (double d : s1.per_epoch) {
        REQUIRE(d >= 0.0);
        REQUIRE(d <= 1.0);
    }

    SdiceProtocol other = proto;
    other.seed = 8;
    auto [v3, s3] = s_dice<float>(pairs, other);
    REQUIRE(v3 != v1);  // protocol seed enters the result
}
