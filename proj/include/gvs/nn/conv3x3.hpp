#pragma once

// 3x3 same-padding convolution in NHWC layout, the hot path of both U-Nets.
//
// Weight layout is [tap][ci][co] with tap = (dy*3+dx) over offsets -1..1, so
// the innermost co run is contiguous and SIMD-friendly. A generic reference
// implementation covers every scalar type; when compiled for AVX-512 a
// specialized float kernel takes over for channel counts that are multiples
// of 16, with a masked variant for the rest. The reference implementation is
// the correctness oracle for the fast kernels (see tests), not dead code.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <vector>

#include "gvs/core/tensor.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#define GVS_HAVE_AVX512 1
#endif

namespace gvs::nn {

/// Copy an H x W x C image into an (H+2) x (W+2) x C buffer with a zero border.
template <typename T>
void pad_border(const T* x, std::int64_t H, std::int64_t W, std::int64_t C, T* xpad) {
    const std::int64_t Wp = W + 2;
    std::memset(xpad, 0, sizeof(T) * static_cast<std::size_t>(Wp * C));
    std::memset(xpad + (H + 1) * Wp * C, 0, sizeof(T) * static_cast<std::size_t>(Wp * C));
    for (std::int64_t h = 0; h < H; ++h) {
        T* row = xpad + (h + 1) * Wp * C;
        std::memset(row, 0, sizeof(T) * static_cast<std::size_t>(C));
        std::memcpy(row + C, x + h * W * C, sizeof(T) * static_cast<std::size_t>(W * C));
        std::memset(row + (W + 1) * C, 0, sizeof(T) * static_cast<std::size_t>(C));
    }
}

/// y[p, :] = bias + sum_{tap, i} xpad[p + off(tap), i] * wk[tap][i][:]
/// for one image; y is H x W x co, xpad is the padded input.
template <typename T>
void conv3x3_ref(const T* xpad, std::int64_t H, std::int64_t W, std::int64_t ci, std::int64_t co,
                 const T* wk, const T* bias, T* y) {
    const std::int64_t Wp = W + 2;
    for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
            T* out = y + (h * W + w) * co;
            if (bias)
                std::memcpy(out, bias, sizeof(T) * static_cast<std::size_t>(co));
            else
                std::memset(out, 0, sizeof(T) * static_cast<std::size_t>(co));
            for (int tap = 0; tap < 9; ++tap) {
                const std::int64_t dy = tap / 3, dx = tap % 3;
                const T* xr = xpad + ((h + dy) * Wp + (w + dx)) * ci;
                const T* wr = wk + tap * ci * co;
                for (std::int64_t i = 0; i < ci; ++i) {
                    const T xv = xr[i];
                    const T* wrow = wr + i * co;
                    for (std::int64_t c = 0; c < co; ++c) out[c] += xv * wrow[c];
                }
            }
        }
    }
}

/// dwk[tap][i][:] += sum_p xpad[p + off(tap), i] * dy[p, :];  db[:] += sum_p dy[p, :]
template <typename T>
void conv3x3_dw_ref(const T* xpad, const T* dy, std::int64_t H, std::int64_t W, std::int64_t ci,
                    std::int64_t co, T* dwk, T* db) {
    const std::int64_t Wp = W + 2;
    for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
            const T* g = dy + (h * W + w) * co;
            for (int tap = 0; tap < 9; ++tap) {
                const std::int64_t dyy = tap / 3, dxx = tap % 3;
                const T* xr = xpad + ((h + dyy) * Wp + (w + dxx)) * ci;
                T* wr = dwk + tap * ci * co;
                for (std::int64_t i = 0; i < ci; ++i) {
                    const T xv = xr[i];
                    T* wrow = wr + i * co;
                    for (std::int64_t c = 0; c < co; ++c) wrow[c] += xv * g[c];
                }
            }
            if (db)
                for (std::int64_t c = 0; c < co; ++c) db[c] += g[c];
        }
    }
}

#ifdef GVS_HAVE_AVX512

namespace detail {

// One 16-channel co slab for PB consecutive pixels of one output row.
// Weights for a (tap, i) pair are loaded once and reused across the PB
// pixels; PB independent accumulator chains keep both FMA ports busy.
template <int PB>
inline void fwd_block16(const float* xpad, std::int64_t Wp, std::int64_t ci,
                        std::int64_t co_stride, const float* wk, const float* bias, float* yrow,
                        std::int64_t h, std::int64_t w0) {
    __m512 acc[PB];
    const __m512 init = bias ? _mm512_loadu_ps(bias) : _mm512_setzero_ps();
    for (int p = 0; p < PB; ++p) acc[p] = init;
    for (int tap = 0; tap < 9; ++tap) {
        const float* xr = xpad + ((h + tap / 3) * Wp + (w0 + tap % 3)) * ci;
        const float* wr = wk + tap * ci * co_stride;
        std::int64_t i = 0;
        for (; i + 2 <= ci; i += 2) {
            const __m512 w0v = _mm512_loadu_ps(wr + i * co_stride);
            const __m512 w1v = _mm512_loadu_ps(wr + (i + 1) * co_stride);
            for (int p = 0; p < PB; ++p)
                acc[p] = _mm512_fmadd_ps(_mm512_set1_ps(xr[p * ci + i]), w0v, acc[p]);
            for (int p = 0; p < PB; ++p)
                acc[p] = _mm512_fmadd_ps(_mm512_set1_ps(xr[p * ci + i + 1]), w1v, acc[p]);
        }
        if (i < ci) {
            const __m512 wv = _mm512_loadu_ps(wr + i * co_stride);
            for (int p = 0; p < PB; ++p)
                acc[p] = _mm512_fmadd_ps(_mm512_set1_ps(xr[p * ci + i]), wv, acc[p]);
        }
    }
    for (int p = 0; p < PB; ++p) _mm512_storeu_ps(yrow + p * co_stride, acc[p]);
}

// Masked fallback for co slabs narrower than 16.
template <int PB>
inline void fwd_block_masked(const float* xpad, std::int64_t Wp, std::int64_t ci,
                             std::int64_t co_stride, const float* wk, const float* bias,
                             float* yrow, std::int64_t h, std::int64_t w0, __mmask16 m) {
    __m512 acc[PB];
    const __m512 init = bias ? _mm512_maskz_loadu_ps(m, bias) : _mm512_setzero_ps();
    for (int p = 0; p < PB; ++p) acc[p] = init;
    for (int tap = 0; tap < 9; ++tap) {
        const float* xr = xpad + ((h + tap / 3) * Wp + (w0 + tap % 3)) * ci;
        const float* wr = wk + tap * ci * co_stride;
        for (std::int64_t i = 0; i < ci; ++i) {
            const __m512 wv = _mm512_maskz_loadu_ps(m, wr + i * co_stride);
            for (int p = 0; p < PB; ++p)
                acc[p] = _mm512_fmadd_ps(_mm512_set1_ps(xr[p * ci + i]), wv, acc[p]);
        }
    }
    for (int p = 0; p < PB; ++p) _mm512_mask_storeu_ps(yrow + p * co_stride, m, acc[p]);
}

}  // namespace detail

inline void conv3x3_f32(const float* xpad, std::int64_t H, std::int64_t W, std::int64_t ci,
                        std::int64_t co, const float* wk, const float* bias, float* y) {
    const std::int64_t Wp = W + 2;
    const std::int64_t full = (co / 16) * 16;
    for (std::int64_t h = 0; h < H; ++h) {
        float* yrow_base = y + h * W * co;
        for (std::int64_t off = 0; off < full; off += 16) {
            const float* b = bias ? bias + off : nullptr;
            std::int64_t w = 0;
            for (; w + 10 <= W; w += 10)
                detail::fwd_block16<10>(xpad, Wp, ci, co, wk + off, b, yrow_base + w * co + off, h, w);
            for (; w + 8 <= W; w += 8)
                detail::fwd_block16<8>(xpad, Wp, ci, co, wk + off, b, yrow_base + w * co + off, h, w);
            for (; w + 4 <= W; w += 4)
                detail::fwd_block16<4>(xpad, Wp, ci, co, wk + off, b, yrow_base + w * co + off, h, w);
            for (; w + 2 <= W; w += 2)
                detail::fwd_block16<2>(xpad, Wp, ci, co, wk + off, b, yrow_base + w * co + off, h, w);
            for (; w < W; ++w)
                detail::fwd_block16<1>(xpad, Wp, ci, co, wk + off, b, yrow_base + w * co + off, h, w);
        }
        if (full < co) {
            const __mmask16 m = static_cast<__mmask16>((1u << (co - full)) - 1u);
            const float* b = bias ? bias + full : nullptr;
            std::int64_t w = 0;
            for (; w + 4 <= W; w += 4)
                detail::fwd_block_masked<4>(xpad, Wp, ci, co, wk + full, b,
                                            yrow_base + w * co + full, h, w, m);
            for (; w < W; ++w)
                detail::fwd_block_masked<1>(xpad, Wp, ci, co, wk + full, b,
                                            yrow_base + w * co + full, h, w, m);
        }
    }
}

namespace detail {

// Weight-gradient kernel; one output row at a time so the dy row stays hot.
// IB input channels accumulate against one 16-wide co slab.
template <int IB>
inline void dw_row16(const float* xrow, const float* dyrow, std::int64_t W, std::int64_t ci,
                     std::int64_t co_stride, float* dst_tap, std::int64_t i0) {
    __m512 acc[IB];
    for (int k = 0; k < IB; ++k) acc[k] = _mm512_setzero_ps();
    for (std::int64_t w = 0; w < W; ++w) {
        const __m512 g = _mm512_loadu_ps(dyrow + w * co_stride);
        const float* xv = xrow + w * ci + i0;
        for (int k = 0; k < IB; ++k)
            acc[k] = _mm512_fmadd_ps(_mm512_set1_ps(xv[k]), g, acc[k]);
    }
    for (int k = 0; k < IB; ++k) {
        float* d = dst_tap + (i0 + k) * co_stride;
        _mm512_storeu_ps(d, _mm512_add_ps(_mm512_loadu_ps(d), acc[k]));
    }
}

template <int IB>
inline void dw_row_masked(const float* xrow, const float* dyrow, std::int64_t W, std::int64_t ci,
                          std::int64_t co_stride, float* dst_tap, std::int64_t i0, __mmask16 m) {
    __m512 acc[IB];
    for (int k = 0; k < IB; ++k) acc[k] = _mm512_setzero_ps();
    for (std::int64_t w = 0; w < W; ++w) {
        const __m512 g = _mm512_maskz_loadu_ps(m, dyrow + w * co_stride);
        const float* xv = xrow + w * ci + i0;
        for (int k = 0; k < IB; ++k)
            acc[k] = _mm512_fmadd_ps(_mm512_set1_ps(xv[k]), g, acc[k]);
    }
    for (int k = 0; k < IB; ++k) {
        float* d = dst_tap + (i0 + k) * co_stride;
        _mm512_mask_storeu_ps(d, m, _mm512_add_ps(_mm512_maskz_loadu_ps(m, d), acc[k]));
    }
}

}  // namespace detail

inline void conv3x3_dw_f32(const float* xpad, const float* dy, std::int64_t H, std::int64_t W,
                           std::int64_t ci, std::int64_t co, float* dwk, float* db) {
    const std::int64_t Wp = W + 2;
    const std::int64_t full = (co / 16) * 16;
    for (std::int64_t h = 0; h < H; ++h) {
        const float* dyrow = dy + h * W * co;
        for (int tap = 0; tap < 9; ++tap) {
            const float* xrow = xpad + ((h + tap / 3) * Wp + tap % 3) * ci;
            float* dwk_tap = dwk + tap * ci * co;
            for (std::int64_t off = 0; off < full; off += 16) {
                std::int64_t i = 0;
                for (; i + 12 <= ci; i += 12)
                    detail::dw_row16<12>(xrow, dyrow + off, W, ci, co, dwk_tap + off, i);
                for (; i + 8 <= ci; i += 8)
                    detail::dw_row16<8>(xrow, dyrow + off, W, ci, co, dwk_tap + off, i);
                for (; i + 4 <= ci; i += 4)
                    detail::dw_row16<4>(xrow, dyrow + off, W, ci, co, dwk_tap + off, i);
                for (; i < ci; ++i)
                    detail::dw_row16<1>(xrow, dyrow + off, W, ci, co, dwk_tap + off, i);
            }
            if (full < co) {
                const __mmask16 m = static_cast<__mmask16>((1u << (co - full)) - 1u);
                std::int64_t i = 0;
                for (; i + 12 <= ci; i += 12)
                    detail::dw_row_masked<12>(xrow, dyrow + full, W, ci, co, dwk_tap + full, i, m);
                for (; i + 4 <= ci; i += 4)
                    detail::dw_row_masked<4>(xrow, dyrow + full, W, ci, co, dwk_tap + full, i, m);
                for (; i < ci; ++i)
                    detail::dw_row_masked<1>(xrow, dyrow + full, W, ci, co, dwk_tap + full, i, m);
            }
        }
    }
    if (db) {
        for (std::int64_t p = 0; p < H * W; ++p) {
            const float* g = dy + p * co;
            for (std::int64_t c = 0; c < co; ++c) db[c] += g[c];
        }
    }
}

#endif  // GVS_HAVE_AVX512

/// Dispatching front end: fast kernel for float when available, reference otherwise.
template <typename T>
void conv3x3(const T* xpad, std::int64_t H, std::int64_t W, std::int64_t ci, std::int64_t co,
             const T* wk, const T* bias, T* y) {
#ifdef GVS_HAVE_AVX512
    if constexpr (std::is_same_v<T, float>) {
        conv3x3_f32(xpad, H, W, ci, co, wk, bias, y);
        return;
    }
#endif
    conv3x3_ref(xpad, H, W, ci, co, wk, bias, y);
}

template <typename T>
void conv3x3_dw(const T* xpad, const T* dy, std::int64_t H, std::int64_t W, std::int64_t ci,
                std::int64_t co, T* dwk, T* db) {
#ifdef GVS_HAVE_AVX512
    if constexpr (std::is_same_v<T, float>) {
        conv3x3_dw_f32(xpad, dy, H, W, ci, co, dwk, db);
        return;
    }
#endif
    conv3x3_dw_ref(xpad, dy, H, W, ci, co, dwk, db);
}

}  // namespace gvs::nn
