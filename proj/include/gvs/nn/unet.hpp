#pragma once

// Encoder-decoder networks with symmetric skip connections: four 2x2
// max-pool downsamplings, bilinear upsampling, two 3x3 convolutions per
// level, channel widths doubling from base_width. The generator squashes a
// single output channel through a sigmoid; the segmentor normalizes every
// convolution with instance norm and ends in a two-channel softmax.
//
// One forward()/backward() pair per instance at a time (the caches live in
// the object); infer() is const and safe to call concurrently.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gvs/core/rng.hpp"
#include "gvs/core/tensor.hpp"
#include "gvs/nn/conv3x3.hpp"
#include "gvs/nn/ops.hpp"
#include "gvs/nn/params.hpp"

namespace gvs::nn {

template <typename T>
std::vector<T>& conv_pad_scratch() {
    thread_local std::vector<T> scratch;
    return scratch;
}

template <typename T>
struct Conv3x3Spec {
    std::int64_t ci = 0, co = 0;
    std::int64_t w_off = -1, b_off = -1;  // b_off < 0 => no bias

    Tensor<T> forward(const ParamStore<T>& P, const Tensor<T>& x) const {
        const auto N = x.dim(0), H = x.dim(1), W = x.dim(2);
        Tensor<T> y({N, H, W, co});
        auto& pad = conv_pad_scratch<T>();
        pad.resize(static_cast<std::size_t>((H + 2) * (W + 2) * ci));
        const T* bias = b_off >= 0 ? P.val(b_off) : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
            pad_border(x.data() + n * H * W * ci, H, W, ci, pad.data());
            conv3x3(pad.data(), H, W, ci, co, P.val(w_off), bias, y.data() + n * H * W * co);
        }
        return y;
    }

    Tensor<T> backward(ParamStore<T>& P, const Tensor<T>& x, const Tensor<T>& dy,
                       bool acc_param_grads) const {
        const auto N = x.dim(0), H = x.dim(1), W = x.dim(2);
        auto& pad = conv_pad_scratch<T>();

        if (acc_param_grads) {
            pad.resize(static_cast<std::size_t>((H + 2) * (W + 2) * ci));
            T* db = b_off >= 0 ? P.grd(b_off) : nullptr;
            for (std::int64_t n = 0; n < N; ++n) {
                pad_border(x.data() + n * H * W * ci, H, W, ci, pad.data());
                conv3x3_dw(pad.data(), dy.data() + n * H * W * co, H, W, ci, co, P.grd(w_off), db);
            }
        }

        // dx is a 3x3 convolution of dy with the tap-flipped, ci/co-swapped kernel.
        std::vector<T> wt(static_cast<std::size_t>(9 * ci * co));
        const T* w = P.val(w_off);
        for (int tap = 0; tap < 9; ++tap)
            for (std::int64_t i = 0; i < ci; ++i)
                for (std::int64_t c = 0; c < co; ++c)
                    wt[static_cast<std::size_t>(((8 - tap) * co + c) * ci + i)] =
                        w[(tap * ci + i) * co + c];

        Tensor<T> dx({N, H, W, ci});
        pad.resize(static_cast<std::size_t>((H + 2) * (W + 2) * co));
        for (std::int64_t n = 0; n < N; ++n) {
            pad_border(dy.data() + n * H * W * co, H, W, co, pad.data());
            conv3x3(pad.data(), H, W, co, ci, wt.data(), static_cast<const T*>(nullptr),
                    dx.data() + n * H * W * ci);
        }
        return dx;
    }
};

template <typename T>
struct InstanceNormSpec {
    std::int64_t c = 0;
    std::int64_t g_off = -1, b_off = -1;
};

template <typename T>
struct DoubleConvSpec {
    Conv3x3Spec<T> conv1, conv2;
    bool use_in = false;
    InstanceNormSpec<T> in1, in2;
};

template <typename T>
struct DoubleConvCache {
    Tensor<T> x_in, t1, a1, t2, out;
    InstanceNormCache<T> nc1, nc2;
};

template <typename T>
Tensor<T> double_conv_forward(const DoubleConvSpec<T>& spec, const ParamStore<T>& P, Tensor<T> x,
                              DoubleConvCache<T>* cache) {
    InstanceNormCache<T> nc1, nc2;
    Tensor<T> t1 = spec.conv1.forward(P, x);
    Tensor<T> a1;
    if (spec.use_in) {
        a1 = instance_norm(t1, P.val(spec.in1.g_off), P.val(spec.in1.b_off), nc1);
    } else {
        a1 = std::move(t1);  // pre-activation not needed without a norm layer
    }
    relu_inplace(a1);

    Tensor<T> t2 = spec.conv2.forward(P, a1);
    Tensor<T> out;
    if (spec.use_in) {
        out = instance_norm(t2, P.val(spec.in2.g_off), P.val(spec.in2.b_off), nc2);
    } else {
        out = std::move(t2);
    }
    relu_inplace(out);

    if (cache) {
        cache->x_in = std::move(x);
        cache->t1 = std::move(t1);
        cache->a1 = std::move(a1);
        cache->t2 = std::move(t2);
        cache->out = out;
        cache->nc1 = std::move(nc1);
        cache->nc2 = std::move(nc2);
    }
    return out;
}

template <typename T>
Tensor<T> double_conv_backward(const DoubleConvSpec<T>& spec, ParamStore<T>& P,
                               const DoubleConvCache<T>& cache, const Tensor<T>& dout,
                               bool acc_param_grads) {
    Tensor<T> d = relu_backward(dout, cache.out);
    if (spec.use_in)
        d = instance_norm_backward(d, cache.t2, P.val(spec.in2.g_off), cache.nc2,
                                   P.grd(spec.in2.g_off), P.grd(spec.in2.b_off));
    d = spec.conv2.backward(P, cache.a1, d, acc_param_grads);

    d = relu_backward(d, cache.a1);
    if (spec.use_in)
        d = instance_norm_backward(d, cache.t1, P.val(spec.in1.g_off), cache.nc1,
                                   P.grd(spec.in1.g_off), P.grd(spec.in1.b_off));
    return spec.conv1.backward(P, cache.x_in, d, acc_param_grads);
}

template <typename T>
class UNet {
  public:
    static constexpr int kLevels = 4;

    UNet(NetKind kind, int base_width, std::uint64_t seed)
        : kind_(kind), width_(base_width), seed_(seed) {
        if (base_width < 4) throw std::invalid_argument("base_width must be >= 4");
        build();
        init_weights();
    }

    NetKind kind() const { return kind_; }
    int base_width() const { return width_; }
    std::uint64_t seed() const { return seed_; }
    std::int64_t out_channels() const { return kind_ == NetKind::generator ? 1 : 2; }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    /// Training forward; fills the internal caches consumed by backward().
    Tensor<T> forward(const Tensor<T>& x) { return run_forward(x, &cache_); }

    /// Cache-free forward. Const and safe for concurrent callers.
    Tensor<T> infer(const Tensor<T>& x) const { return run_forward(x, nullptr); }

    /// Backpropagates dL/d(output); returns dL/d(input). Parameter gradients
    /// are accumulated into params().grad unless acc_param_grads is false
    /// (used when this network is a frozen adversary and only the input
    /// gradient is needed).
    Tensor<T> backward(const Tensor<T>& dy, bool acc_param_grads = true) {
        Cache& c = cache_;
        Tensor<T> d;  // grad w.r.t. head input
        if (kind_ == NetKind::generator) {
            Tensor<T> dz = sigmoid_backward(dy, c.head_out);
            d = head_input_grad(dz, c, acc_param_grads);
        } else {
            Tensor<T> dz = softmax2_backward(dy, c.head_out);
            d = head_input_grad(dz, c, acc_param_grads);
        }

        // Decoder, top level (full resolution) down to the bottleneck.
        std::vector<Tensor<T>> dskip(kLevels);
        for (int l = 0; l < kLevels; ++l) {
            Tensor<T> dcat = double_conv_backward(dec_[l], params_, c.dec[l], d, acc_param_grads);
            auto [ds, dup] = split_channels(dcat, skip_channels(l), up_channels(l));
            dskip[l] = std::move(ds);
            d = upsample2_bilinear_backward(dup, c.up_src_shape[l]);
        }

        d = double_conv_backward(bott_, params_, c.bott, d, acc_param_grads);

        // Encoder in reverse; each level sums the pooled-path and skip grads.
        for (int l = kLevels - 1; l >= 0; --l) {
            Tensor<T> denc = maxpool2_backward(d, c.pool[l], c.enc[l].out.shape());
            for (std::size_t i = 0; i < denc.size(); ++i) denc[i] += dskip[l][i];
            d = double_conv_backward(enc_[l], params_, c.enc[l], denc, acc_param_grads);
        }
        return d;
    }

    void load_values(const std::vector<float>& flat) {
        if (static_cast<std::int64_t>(flat.size()) != params_.total_count())
            throw std::runtime_error("parameter count mismatch while loading checkpoint");
        for (std::size_t i = 0; i < flat.size(); ++i) params_.value[i] = static_cast<T>(flat[i]);
    }

  private:
    struct Cache {
        DoubleConvCache<T> enc[kLevels];
        PoolCache<T> pool[kLevels];
        DoubleConvCache<T> bott;
        DoubleConvCache<T> dec[kLevels];  // dec[0] = full resolution
        std::vector<std::int64_t> up_src_shape[kLevels];
        Tensor<T> head_in, head_out;
    };

    std::int64_t skip_channels(int level) const { return width_ << level; }
    // The decoder halves channels as it rises, so the tensor arriving from
    // below always matches the skip width at that level.
    std::int64_t up_channels(int level) const { return width_ << level; }

    void build() {
        const bool seg = kind_ == NetKind::segmentor;
        auto add_dc = [&](const std::string& name, std::int64_t ci, std::int64_t mid,
                          std::int64_t co) {
            DoubleConvSpec<T> s;
            s.use_in = seg;
            s.conv1 = add_conv(name + ".conv1", ci, mid, !seg);
            if (seg) s.in1 = add_in(name + ".in1", mid);
            s.conv2 = add_conv(name + ".conv2", mid, co, !seg);
            if (seg) s.in2 = add_in(name + ".in2", co);
            return s;
        };
        const std::int64_t w = width_;
        enc_[0] = add_dc("enc0", 1, w, w);
        enc_[1] = add_dc("enc1", w, 2 * w, 2 * w);
        enc_[2] = add_dc("enc2", 2 * w, 4 * w, 4 * w);
        enc_[3] = add_dc("enc3", 4 * w, 8 * w, 8 * w);
        bott_ = add_dc("bottleneck", 8 * w, 8 * w, 8 * w);
        dec_[3] = add_dc("dec3", 16 * w, 8 * w, 4 * w);
        dec_[2] = add_dc("dec2", 8 * w, 4 * w, 2 * w);
        dec_[1] = add_dc("dec1", 4 * w, 2 * w, w);
        dec_[0] = add_dc("dec0", 2 * w, w, w);
        head_ci_ = w;
        head_co_ = out_channels();
        head_w_off_ = params_.add("head.w", {head_ci_, head_co_});
        head_b_off_ = params_.add("head.b", {head_co_});
    }

    Conv3x3Spec<T> add_conv(const std::string& name, std::int64_t ci, std::int64_t co, bool bias) {
        Conv3x3Spec<T> s;
        s.ci = ci;
        s.co = co;
        s.w_off = params_.add(name + ".w", {3, 3, ci, co});
        if (bias) s.b_off = params_.add(name + ".b", {co});
        return s;
    }

    InstanceNormSpec<T> add_in(const std::string& name, std::int64_t c) {
        InstanceNormSpec<T> s;
        s.c = c;
        s.g_off = params_.add(name + ".gamma", {c});
        s.b_off = params_.add(name + ".beta", {c});
        return s;
    }

    void init_weights() {
        Rng rng(mix_seed(seed_, kind_ == NetKind::generator ? 0x67656eULL : 0x736567ULL));
        for (const auto& e : params_.entries) {
            T* v = params_.val(e.offset);
            if (e.name.ends_with(".w") && e.shape.size() == 4) {
                const double fan_in = 9.0 * static_cast<double>(e.shape[2]);
                const double std_dev = std::sqrt(2.0 / fan_in);
                for (std::int64_t i = 0; i < e.count; ++i)
                    v[i] = static_cast<T>(std_dev * rng.normal());
            } else if (e.name.ends_with(".w")) {  // 1x1 head
                const double std_dev = std::sqrt(2.0 / static_cast<double>(e.shape[0]));
                for (std::int64_t i = 0; i < e.count; ++i)
                    v[i] = static_cast<T>(std_dev * rng.normal());
            } else if (e.name.ends_with(".gamma")) {
                for (std::int64_t i = 0; i < e.count; ++i) v[i] = T{1};
            }  // biases and betas stay zero
        }
    }

    Tensor<T> run_forward(const Tensor<T>& x, Cache* c) const {
        if (x.rank() != 4 || x.dim(3) != 1)
            throw std::invalid_argument("network input must be (N, H, W, 1), got " + x.shape_str());
        if (x.dim(1) % 16 != 0 || x.dim(2) % 16 != 0)
            throw std::invalid_argument("spatial dims must be divisible by 16, got " +
                                        x.shape_str());

        auto dc = [&](const DoubleConvSpec<T>& spec, Tensor<T> in, DoubleConvCache<T>* slot) {
            return double_conv_forward(spec, params_, std::move(in), slot);
        };

        Tensor<T> skips[kLevels];
        Tensor<T> cur = x;
        for (int l = 0; l < kLevels; ++l) {
            skips[l] = dc(enc_[l], std::move(cur), c ? &c->enc[l] : nullptr);
            PoolCache<T> local_pc;
            cur = maxpool2(skips[l], c ? c->pool[l] : local_pc);
        }
        cur = dc(bott_, std::move(cur), c ? &c->bott : nullptr);

        for (int l = kLevels - 1; l >= 0; --l) {
            if (c) c->up_src_shape[l] = cur.shape();
            Tensor<T> up = upsample2_bilinear(cur);
            Tensor<T> cat = concat_channels(skips[l], up);
            skips[l] = Tensor<T>();  // release
            cur = dc(dec_[l], std::move(cat), c ? &c->dec[l] : nullptr);
        }

        // Head: 1x1 conv then the output nonlinearity.
        const auto N = cur.dim(0), H = cur.dim(1), W = cur.dim(2);
        Tensor<T> z({N, H, W, head_co_});
        conv1x1(cur.data(), N * H * W, head_ci_, head_co_, params_.val(head_w_off_),
                params_.val(head_b_off_), z.data());
        Tensor<T> out = kind_ == NetKind::generator ? sigmoid(z) : softmax2(z);
        if (c) {
            c->head_in = std::move(cur);
            c->head_out = out;
        }
        return out;
    }

    Tensor<T> head_input_grad(const Tensor<T>& dz, Cache& c, bool acc_param_grads) {
        const auto N = dz.dim(0), H = dz.dim(1), W = dz.dim(2);
        Tensor<T> dx({N, H, W, head_ci_});
        conv1x1_backward(c.head_in.data(), dz.data(), N * H * W, head_ci_, head_co_,
                         params_.val(head_w_off_), dx.data(),
                         acc_param_grads ? params_.grd(head_w_off_) : nullptr,
                         acc_param_grads ? params_.grd(head_b_off_) : nullptr);
        return dx;
    }

    NetKind kind_;
    int width_;
    std::uint64_t seed_;
    ParamStore<T> params_;
    DoubleConvSpec<T> enc_[kLevels];
    DoubleConvSpec<T> bott_;
    DoubleConvSpec<T> dec_[kLevels];
    std::int64_t head_ci_ = 0, head_co_ = 0, head_w_off_ = -1, head_b_off_ = -1;
    Cache cache_;
};

}  // namespace gvs::nn
