#include <catch2/catch_amalgamated.hpp>

#include "gvs/core/rng.hpp"
#include "gvs/nn/conv3x3.hpp"
#include "gvs/nn/ops.hpp"

using namespace gvs;
using namespace gvs::nn;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

}  // namespace

#ifdef GVS_HAVE_AVX512
TEST_CASE("fast float conv kernels agree with the reference") {
    Rng rng(100);
    struct Case {
        std::int64_t H, W, ci, co;
    };
    // Multiples of 16, odd tails, single channels, narrow rows.
    for (const Case c : {Case{12, 12, 16, 16}, Case{9, 17, 48, 32}, Case{16, 16, 1, 16},
                         Case{8, 8, 128, 128}, Case{10, 30, 24, 8}, Case{7, 7, 3, 2},
                         Case{16, 16, 32, 130}}) {
        std::vector<float> xpad(static_cast<std::size_t>((c.H + 2) * (c.W + 2) * c.ci));
        std::vector<float> x = random_vec<float>(static_cast<std::size_t>(c.H * c.W * c.ci), rng);
        pad_border(x.data(), c.H, c.W, c.ci, xpad.data());
        std::vector<float> wk = random_vec<float>(static_cast<std::size_t>(9 * c.ci * c.co), rng);
        std::vector<float> bias = random_vec<float>(static_cast<std::size_t>(c.co), rng);
        std::vector<float> y_fast(static_cast<std::size_t>(c.H * c.W * c.co));
        std::vector<float> y_ref(y_fast.size());
        conv3x3_f32(xpad.data(), c.H, c.W, c.ci, c.co, wk.data(), bias.data(), y_fast.data());
        conv3x3_ref(xpad.data(), c.H, c.W, c.ci, c.co, wk.data(), bias.data(), y_ref.data());
        for (std::size_t i = 0; i < y_ref.size(); ++i)
            REQUIRE(y_fast[i] == Catch::Approx(y_ref[i]).margin(1e-4).epsilon(2e-4));

        std::vector<float> dy = random_vec<float>(y_ref.size(), rng);
        std::vector<float> dw_fast(wk.size(), 0.f), dw_ref(wk.size(), 0.f);
        std::vector<float> db_fast(bias.size(), 0.f), db_ref(bias.size(), 0.f);
        conv3x3_dw_f32(xpad.data(), dy.data(), c.H, c.W, c.ci, c.co, dw_fast.data(),
                       db_fast.data());
        conv3x3_dw_ref(xpad.data(), dy.data(), c.H, c.W, c.ci, c.co, dw_ref.data(), db_ref.data());
        for (std::size_t i = 0; i < dw_ref.size(); ++i)
            REQUIRE(dw_fast[i] == Catch::Approx(dw_ref[i]).margin(1e-3).epsilon(5e-4));
        for (std::size_t i = 0; i < db_ref.size(); ++i)
            REQUIRE(db_fast[i] == Catch::Approx(db_ref[i]).margin(1e-3).epsilon(5e-4));
    }
}
#endif

TEST_CASE("maxpool forward picks maxima; backward routes to the argmax") {
    Rng rng(4);
    Tensor<double> x({2, 6, 6, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    PoolCache<double> pc;
    Tensor<double> y = maxpool2(x, pc);
    REQUIRE(y.shape() == std::vector<std::int64_t>{2, 3, 3, 3});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t h = 0; h < 3; ++h)
            for (std::int64_t w = 0; w < 3; ++w)
                for (std::int64_t c = 0; c < 3; ++c) {
                    const double m = std::max({x.at(n, 2 * h, 2 * w, c), x.at(n, 2 * h, 2 * w + 1, c),
                                               x.at(n, 2 * h + 1, 2 * w, c),
                                               x.at(n, 2 * h + 1, 2 * w + 1, c)});
                    REQUIRE(y.at(n, h, w, c) == m);
                }
    // Sum of dx equals sum of dy (each grad lands exactly once).
    Tensor<double> dy(y.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = rng.uniform(0.0, 1.0);
    Tensor<double> dx = maxpool2_backward(dy, pc, x.shape());
    REQUIRE(dx.sum() == Catch::Approx(dy.sum()).epsilon(1e-12));
}

TEST_CASE("bilinear upsampling backward is the exact adjoint") {
    Rng rng(5);
    Tensor<double> x({1, 5, 7, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> y = upsample2_bilinear(x);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 10, 14, 4});

    Tensor<double> v(y.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> vt = upsample2_bilinear_backward(v, x.shape());
    double lhs = 0.0, rhs = 0.0;  // <Ax, v> == <x, A^T v>
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * v[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * vt[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));

    // Constant images stay constant under interpolation.
    Tensor<double> c = Tensor<double>::full({1, 4, 4, 1}, 0.37);
    Tensor<double> cu = upsample2_bilinear(c);
    for (std::size_t i = 0; i < cu.size(); ++i) REQUIRE(cu[i] == Catch::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("instance norm standardizes per image and channel") {
    Rng rng(6);
    Tensor<double> x({2, 8, 8, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 2.0);
    std::vector<double> gamma{1.0, 1.0, 1.0}, beta{0.0, 0.0, 0.0};
    InstanceNormCache<double> nc;
    Tensor<double> y = instance_norm(x, gamma.data(), beta.data(), nc);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c) {
            double s = 0.0, ss = 0.0;
            for (std::int64_t p = 0; p < 64; ++p) {
                const double v = y[static_cast<std::size_t>((n * 64 + p) * 3 + c)];
                s += v;
                ss += v * v;
            }
            REQUIRE(s / 64.0 == Catch::Approx(0.0).margin(1e-9));
            REQUIRE(ss / 64.0 == Catch::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("instance norm gradient matches finite differences") {
    Rng rng(7);
    Tensor<double> x({1, 4, 4, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
    std::vector<double> gamma{1.3, 0.8}, beta{0.1, -0.2};
    Tensor<double> R(x.shape());
    for (std::size_t i = 0; i < R.size(); ++i) R[i] = rng.uniform(-1.0, 1.0);

    auto J = [&](const Tensor<double>& in) {
        InstanceNormCache<double> nc;
        Tensor<double> out = instance_norm(in, gamma.data(), beta.data(), nc);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += R[i] * out[i];
        return s;
    };

    InstanceNormCache<double> nc;
    Tensor<double> y = instance_norm(x, gamma.data(), beta.data(), nc);
    std::vector<double> dgamma(2, 0.0), dbeta(2, 0.0);
    Tensor<double> dx = instance_norm_backward(R, x, gamma.data(), nc, dgamma.data(), dbeta.data());

    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); i += 5) {
        Tensor<double> xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (J(xp) - J(xm)) / (2 * h);
        REQUIRE(dx[i] == Catch::Approx(fd).margin(1e-6).epsilon(1e-5));
    }
    for (int c = 0; c < 2; ++c) {
        const double orig = gamma[static_cast<std::size_t>(c)];
        gamma[static_cast<std::size_t>(c)] = orig + h;
        const double jp = J(x);
        gamma[static_cast<std::size_t>(c)] = orig - h;
        const double jm = J(x);
        gamma[static_cast<std::size_t>(c)] = orig;
        REQUIRE(dgamma[static_cast<std::size_t>(c)] ==
                Catch::Approx((jp - jm) / (2 * h)).margin(1e-6).epsilon(1e-5));
    }
}

TEST_CASE("softmax2 and sigmoid backward match finite differences") {
    Rng rng(8);
    Tensor<double> z({1, 2, 2, 2});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-2.0, 2.0);
    Tensor<double> R(z.shape());
    for (std::size_t i = 0; i < R.size(); ++i) R[i] = rng.uniform(-1.0, 1.0);

    auto Jsm = [&](const Tensor<double>& in) {
        Tensor<double> p = softmax2(in);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += R[i] * p[i];
        return s;
    };
    Tensor<double> p = softmax2(z);
    Tensor<double> dz = softmax2_backward(R, p);
    const double h = 1e-6;
    for (std::size_t i = 0; i < z.size(); ++i) {
        Tensor<double> zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        REQUIRE(dz[i] == Catch::Approx((Jsm(zp) - Jsm(zm)) / (2 * h)).margin(1e-7).epsilon(1e-6));
    }

    auto Jsg = [&](const Tensor<double>& in) {
        Tensor<double> y = sigmoid(in);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += R[i] * y[i];
        return s;
    };
    Tensor<double> y = sigmoid(z);
    Tensor<double> dzs = sigmoid_backward(R, y);
    for (std::size_t i = 0; i < z.size(); ++i) {
        Tensor<double> zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        REQUIRE(dzs[i] == Catch::Approx((Jsg(zp) - Jsg(zm)) / (2 * h)).margin(1e-7).epsilon(1e-6));
    }
}

TEST_CASE("channel concat splits back to its parts") {
    Rng rng(9);
    Tensor<double> a({2, 3, 3, 2}), b({2, 3, 3, 5});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform();
    Tensor<double> cat = concat_channels(a, b);
    REQUIRE(cat.dim(3) == 7);
    auto [da, db] = split_channels(cat, 2, 5);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(da[i] == a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) REQUIRE(db[i] == b[i]);
}
