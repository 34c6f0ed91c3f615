#pragma once

// Pointwise / pooling / normalization building blocks for the U-Nets, NHWC.
// Every forward has a matching backward; caches needed across the pair are
// returned to the caller rather than hidden in globals, so the training loop
// stays the single owner of mutable state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "gvs/core/tensor.hpp"

namespace gvs::nn {

// ---- ReLU ------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return y;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < T{0}) x[i] = T{0};
}

/// dx from dy using the forward output (y > 0 <=> x > 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T{0} ? dy[i] : T{0};
    return dx;
}

// ---- Sigmoid ---------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        if (v >= T{0}) {
            const T e = std::exp(-v);
            y[i] = T{1} / (T{1} + e);
        } else {
            const T e = std::exp(v);
            y[i] = e / (T{1} + e);
        }
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
    return dx;
}

// ---- Two-class channel softmax (N, H, W, 2) ---------------------------

template <typename T>
Tensor<T> softmax2(const Tensor<T>& z) {
    Tensor<T> p(z.shape());
    for (std::size_t i = 0; i < z.size(); i += 2) {
        const T m = z[i] > z[i + 1] ? z[i] : z[i + 1];
        const T e0 = std::exp(z[i] - m), e1 = std::exp(z[i + 1] - m);
        const T s = e0 + e1;
        p[i] = e0 / s;
        p[i + 1] = e1 / s;
    }
    return p;
}

template <typename T>
Tensor<T> softmax2_backward(const Tensor<T>& dp, const Tensor<T>& p) {
    Tensor<T> dz(dp.shape());
    for (std::size_t i = 0; i < dp.size(); i += 2) {
        const T dot = dp[i] * p[i] + dp[i + 1] * p[i + 1];
        dz[i] = p[i] * (dp[i] - dot);
        dz[i + 1] = p[i + 1] * (dp[i + 1] - dot);
    }
    return dz;
}

// ---- 2x2 max pooling ---------------------------------------------------

template <typename T>
struct PoolCache {
    std::vector<std::uint8_t> argmax;  // 0..3 = dy*2+dx of the winner
};

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, PoolCache<T>& cache) {
    const auto N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor<T> y({N, H / 2, W / 2, C});
    cache.argmax.assign(y.size(), 0);
    const T* xd = x.data();
    T* yd = y.data();
    std::uint8_t* am = cache.argmax.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t h = 0; h < H / 2; ++h)
            for (std::int64_t w = 0; w < W / 2; ++w) {
                const std::int64_t base = ((n * H + 2 * h) * W + 2 * w) * C;
                const std::int64_t out = ((n * (H / 2) + h) * (W / 2) + w) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    T best = xd[base + c];
                    std::uint8_t bi = 0;
                    const T cands[3] = {xd[base + C + c], xd[base + W * C + c],
                                        xd[base + W * C + C + c]};
                    for (std::uint8_t k = 0; k < 3; ++k)
                        if (cands[k] > best) {
                            best = cands[k];
                            bi = static_cast<std::uint8_t>(k + 1);
                        }
                    yd[out + c] = best;
                    am[out + c] = bi;
                }
            }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const PoolCache<T>& cache,
                            const std::vector<std::int64_t>& input_shape) {
    Tensor<T> dx(input_shape);
    const auto N = dy.dim(0), Ho = dy.dim(1), Wo = dy.dim(2), C = dy.dim(3);
    const std::int64_t W = input_shape[2];
    const T* gd = dy.data();
    T* xd = dx.data();
    const std::uint8_t* am = cache.argmax.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t h = 0; h < Ho; ++h)
            for (std::int64_t w = 0; w < Wo; ++w) {
                const std::int64_t out = ((n * Ho + h) * Wo + w) * C;
                const std::int64_t base = ((n * 2 * Ho + 2 * h) * W + 2 * w) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::uint8_t k = am[out + c];
                    const std::int64_t off = (k >> 1) * W * C + (k & 1) * C;
                    xd[base + off + c] += gd[out + c];
                }
            }
    return dx;
}

// ---- Bilinear 2x upsampling (half-pixel centers, edges clamped) --------

template <typename T>
struct LinearTaps {
    std::vector<std::int64_t> i0, i1;
    std::vector<T> w0, w1;
};

template <typename T>
LinearTaps<T> upsample_taps(std::int64_t n_in) {
    LinearTaps<T> t;
    const std::int64_t n_out = 2 * n_in;
    t.i0.resize(n_out);
    t.i1.resize(n_out);
    t.w0.resize(n_out);
    t.w1.resize(n_out);
    for (std::int64_t o = 0; o < n_out; ++o) {
        const double s = (o + 0.5) / 2.0 - 0.5;
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(s));
        const double f = s - static_cast<double>(i0);
        std::int64_t i1 = i0 + 1;
        i0 = std::clamp<std::int64_t>(i0, 0, n_in - 1);
        i1 = std::clamp<std::int64_t>(i1, 0, n_in - 1);
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w0[o] = static_cast<T>(1.0 - f);
        t.w1[o] = static_cast<T>(f);
    }
    return t;
}

template <typename T>
Tensor<T> upsample2_bilinear(const Tensor<T>& x) {
    const auto N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const auto ty = upsample_taps<T>(H), tx = upsample_taps<T>(W);
    Tensor<T> y({N, 2 * H, 2 * W, C});
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xn = x.data() + n * H * W * C;
        T* yn = y.data() + n * 4 * H * W * C;
        for (std::int64_t h = 0; h < 2 * H; ++h) {
            const T* row0 = xn + ty.i0[h] * W * C;
            const T* row1 = xn + ty.i1[h] * W * C;
            const T wy0 = ty.w0[h], wy1 = ty.w1[h];
            T* out = yn + h * 2 * W * C;
            for (std::int64_t w = 0; w < 2 * W; ++w) {
                const T* r00 = row0 + tx.i0[w] * C;
                const T* r01 = row0 + tx.i1[w] * C;
                const T* r10 = row1 + tx.i0[w] * C;
                const T* r11 = row1 + tx.i1[w] * C;
                const T a = wy0 * tx.w0[w], b = wy0 * tx.w1[w];
                const T c2 = wy1 * tx.w0[w], d = wy1 * tx.w1[w];
                T* o = out + w * C;
                for (std::int64_t c = 0; c < C; ++c)
                    o[c] = a * r00[c] + b * r01[c] + c2 * r10[c] + d * r11[c];
            }
        }
    }
    return y;
}

/// Exact transpose of upsample2_bilinear.
template <typename T>
Tensor<T> upsample2_bilinear_backward(const Tensor<T>& dy,
                                      const std::vector<std::int64_t>& input_shape) {
    Tensor<T> dx(input_shape);
    const auto H = input_shape[1], W = input_shape[2], C = input_shape[3];
    const auto N = dy.dim(0);
    const auto ty = upsample_taps<T>(H), tx = upsample_taps<T>(W);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t h = 0; h < 2 * H; ++h)
            for (std::int64_t w = 0; w < 2 * W; ++w) {
                const T* g = &dy.at(n, h, w, 0);
                const T a = ty.w0[h] * tx.w0[w], b = ty.w0[h] * tx.w1[w];
                const T c2 = ty.w1[h] * tx.w0[w], d = ty.w1[h] * tx.w1[w];
                T* r00 = &dx.at(n, ty.i0[h], tx.i0[w], 0);
                T* r01 = &dx.at(n, ty.i0[h], tx.i1[w], 0);
                T* r10 = &dx.at(n, ty.i1[h], tx.i0[w], 0);
                T* r11 = &dx.at(n, ty.i1[h], tx.i1[w], 0);
                for (std::int64_t c = 0; c < C; ++c) {
                    r00[c] += a * g[c];
                    r01[c] += b * g[c];
                    r10[c] += c2 * g[c];
                    r11[c] += d * g[c];
                }
            }
    return dx;
}

// ---- Instance normalization (per image, per channel over H*W) ----------

template <typename T>
struct InstanceNormCache {
    Tensor<T> mean;    // (N, C)
    Tensor<T> invstd;  // (N, C)
};

/// Standardizes each (n, c) plane, then applies the learned affine map.
/// epsilon is small so that the normalized output is scale/shift invariant
/// to high accuracy for any plane whose variance is not vanishing.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const T* gamma, const T* beta,
                        InstanceNormCache<T>& cache, T eps = T{1e-8}) {
    const auto N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::int64_t HW = H * W;
    cache.mean = Tensor<T>({N, C});
    cache.invstd = Tensor<T>({N, C});
    Tensor<T> y(x.shape());
    // Stats per 16-channel chunk so the accumulators live in registers.
    constexpr std::int64_t CHUNK = 16;
    T sum[CHUNK], sumsq[CHUNK];
    std::vector<T> scale(static_cast<std::size_t>(C)), shift(static_cast<std::size_t>(C));
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xn = x.data() + n * HW * C;
        for (std::int64_t c0 = 0; c0 < C; c0 += CHUNK) {
            const std::int64_t nc = std::min(CHUNK, C - c0);
            for (std::int64_t c = 0; c < nc; ++c) sum[c] = sumsq[c] = T{0};
            for (std::int64_t p = 0; p < HW; ++p) {
                const T* v = xn + p * C + c0;
                for (std::int64_t c = 0; c < nc; ++c) {
                    sum[c] += v[c];
                    sumsq[c] += v[c] * v[c];
                }
            }
            for (std::int64_t c = 0; c < nc; ++c) {
                const T mu = sum[c] / static_cast<T>(HW);
                T var = sumsq[c] / static_cast<T>(HW) - mu * mu;
                if (var < T{0}) var = T{0};  // rounding guard
                const T inv = T{1} / std::sqrt(var + eps);
                cache.mean[static_cast<std::size_t>(n * C + c0 + c)] = mu;
                cache.invstd[static_cast<std::size_t>(n * C + c0 + c)] = inv;
                scale[static_cast<std::size_t>(c0 + c)] = gamma[c0 + c] * inv;
                shift[static_cast<std::size_t>(c0 + c)] = beta[c0 + c] - gamma[c0 + c] * inv * mu;
            }
        }
        T* yn = y.data() + n * HW * C;
        for (std::int64_t p = 0; p < HW; ++p) {
            const T* v = xn + p * C;
            T* o = yn + p * C;
            for (std::int64_t c = 0; c < C; ++c) o[c] = scale[c] * v[c] + shift[c];
        }
    }
    return y;
}

template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& dy, const Tensor<T>& x, const T* gamma,
                                 const InstanceNormCache<T>& cache, T* dgamma, T* dbeta) {
    const auto N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::int64_t HW = H * W;
    Tensor<T> dx(x.shape());
    constexpr std::int64_t CHUNK = 16;
    T sum_dy[CHUNK], sum_dy_xhat[CHUNK];
    std::vector<T> k1(static_cast<std::size_t>(C)), k2(static_cast<std::size_t>(C)),
        k3(static_cast<std::size_t>(C));
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xn = x.data() + n * HW * C;
        const T* gn = dy.data() + n * HW * C;
        const T* mu = cache.mean.data() + n * C;
        const T* inv = cache.invstd.data() + n * C;
        for (std::int64_t c0 = 0; c0 < C; c0 += CHUNK) {
            const std::int64_t nc = std::min(CHUNK, C - c0);
            for (std::int64_t c = 0; c < nc; ++c) sum_dy[c] = sum_dy_xhat[c] = T{0};
            for (std::int64_t p = 0; p < HW; ++p) {
                const T* xv = xn + p * C + c0;
                const T* gv = gn + p * C + c0;
                for (std::int64_t c = 0; c < nc; ++c) {
                    sum_dy[c] += gv[c];
                    sum_dy_xhat[c] += gv[c] * (xv[c] - mu[c0 + c]) * inv[c0 + c];
                }
            }
            for (std::int64_t c = 0; c < nc; ++c) {
                dbeta[c0 + c] += sum_dy[c];
                dgamma[c0 + c] += sum_dy_xhat[c];
                // dx = g*inv*dy - g*inv*(sum_dy/HW) - g*inv^2*(x-mu)*(sum_dy_xhat/HW)
                const T gi = gamma[c0 + c] * inv[c0 + c];
                k1[static_cast<std::size_t>(c0 + c)] = gi;
                k3[static_cast<std::size_t>(c0 + c)] =
                    gi * inv[c0 + c] * sum_dy_xhat[c] / static_cast<T>(HW);
                k2[static_cast<std::size_t>(c0 + c)] =
                    gi * sum_dy[c] / static_cast<T>(HW) -
                    k3[static_cast<std::size_t>(c0 + c)] * mu[c0 + c];
            }
        }
        T* dn = dx.data() + n * HW * C;
        for (std::int64_t p = 0; p < HW; ++p) {
            const T* xv = xn + p * C;
            const T* gv = gn + p * C;
            T* dv = dn + p * C;
            for (std::int64_t c = 0; c < C; ++c)
                dv[c] = k1[c] * gv[c] - k2[c] - k3[c] * xv[c];
        }
    }
    return dx;
}

// ---- Channel concatenation ----------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const auto N = a.dim(0), H = a.dim(1), W = a.dim(2), Ca = a.dim(3), Cb = b.dim(3);
    Tensor<T> y({N, H, W, Ca + Cb});
    const std::int64_t P = N * H * W;
    for (std::int64_t p = 0; p < P; ++p) {
        std::memcpy(y.data() + p * (Ca + Cb), a.data() + p * Ca,
                    sizeof(T) * static_cast<std::size_t>(Ca));
        std::memcpy(y.data() + p * (Ca + Cb) + Ca, b.data() + p * Cb,
                    sizeof(T) * static_cast<std::size_t>(Cb));
    }
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, std::int64_t Ca,
                                               std::int64_t Cb) {
    const auto N = dy.dim(0), H = dy.dim(1), W = dy.dim(2);
    Tensor<T> da({N, H, W, Ca}), db({N, H, W, Cb});
    const std::int64_t P = N * H * W;
    for (std::int64_t p = 0; p < P; ++p) {
        std::memcpy(da.data() + p * Ca, dy.data() + p * (Ca + Cb),
                    sizeof(T) * static_cast<std::size_t>(Ca));
        std::memcpy(db.data() + p * Cb, dy.data() + p * (Ca + Cb) + Ca,
                    sizeof(T) * static_cast<std::size_t>(Cb));
    }
    return {std::move(da), std::move(db)};
}

// ---- 1x1 convolution (network heads; tiny, plain loops) -----------------

template <typename T>
void conv1x1(const T* x, std::int64_t P, std::int64_t ci, std::int64_t co, const T* w,
             const T* bias, T* y) {
    for (std::int64_t p = 0; p < P; ++p) {
        const T* xp = x + p * ci;
        T* yp = y + p * co;
        for (std::int64_t c = 0; c < co; ++c) yp[c] = bias ? bias[c] : T{0};
        for (std::int64_t i = 0; i < ci; ++i) {
            const T xv = xp[i];
            const T* wr = w + i * co;
            for (std::int64_t c = 0; c < co; ++c) yp[c] += xv * wr[c];
        }
    }
}

template <typename T>
void conv1x1_backward(const T* x, const T* dy, std::int64_t P, std::int64_t ci, std::int64_t co,
                      const T* w, T* dx, T* dw, T* db) {
    for (std::int64_t p = 0; p < P; ++p) {
        const T* xp = x + p * ci;
        const T* gp = dy + p * co;
        T* dxp = dx + p * ci;
        for (std::int64_t i = 0; i < ci; ++i) {
            const T* wr = w + i * co;
            T acc{0};
            for (std::int64_t c = 0; c < co; ++c) acc += gp[c] * wr[c];
            dxp[i] = acc;
            if (dw) {
                T* dwr = dw + i * co;
                const T xv = xp[i];
                for (std::int64_t c = 0; c < co; ++c) dwr[c] += xv * gp[c];
            }
        }
        if (db)
            for (std::int64_t c = 0; c < co; ++c) db[c] += gp[c];
    }
}

}  // namespace gvs::nn
