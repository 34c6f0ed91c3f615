#pragma once

// Loss functions of the adversarial regime. Probability inputs are the
// segmentor's two-channel softmax output (channel 0 = healthy, channel 1 =
// lesion); masks and images are (N, H, W, 1). Each loss optionally returns
// the gradient w.r.t. its differentiable argument so training does not rely
// on any hidden autodiff state. Loss values accumulate in double regardless
// of the tensor scalar type.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvs/core/tensor.hpp"
#include "gvs/data/slice.hpp"

namespace gvs {

inline constexpr double kProbEps = 1e-7;  // clamp before logarithms

struct LossValue {
    double value = 0.0;
    std::map<std::string, double> components;
};

namespace detail {

template <typename T>
void check_pred_target(const Tensor<T>& pred, const Tensor<T>& target, const char* who) {
    if (pred.rank() != 4 || pred.dim(3) != 2)
        throw std::invalid_argument(std::string(who) + ": prediction must be (N,H,W,2), got " +
                                    pred.shape_str());
    if (target.rank() != 4 || target.dim(3) != 1 || target.dim(0) != pred.dim(0) ||
        target.dim(1) != pred.dim(1) || target.dim(2) != pred.dim(2))
        throw std::invalid_argument(std::string(who) + ": target shape " + target.shape_str() +
                                    " does not match prediction " + pred.shape_str());
}

}  // namespace detail

/// Cross-entropy of the predicted class probabilities against a binary mask,
/// averaged over all pixels.
template <typename T>
LossValue ce_seg_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* dpred = nullptr) {
    detail::check_pred_target(pred, target, "ce_seg_loss");
    const std::size_t P = target.size();
    if (dpred) *dpred = Tensor<T>(pred.shape());
    double sum = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const int cls = target[i] > T{0.5} ? 1 : 0;
        const double p = static_cast<double>(pred[2 * i + cls]);
        const double pc = p < kProbEps ? kProbEps : (p > 1.0 ? 1.0 : p);
        sum += -std::log(pc);
        if (dpred && p >= kProbEps && p <= 1.0)
            (*dpred)[2 * i + cls] = static_cast<T>(-1.0 / (pc * static_cast<double>(P)));
    }
    LossValue lv;
    lv.value = sum / static_cast<double>(P);
    lv.components["ce"] = lv.value;
    return lv;
}

/// Adversarial segmentation loss: cross-entropy against the all-zero mask,
/// i.e. the loss the generator minimizes to make every pixel look healthy.
template <typename T>
LossValue adv_seg_loss(const Tensor<T>& pred, Tensor<T>* dpred = nullptr) {
    Tensor<T> zeros({pred.dim(0), pred.dim(1), pred.dim(2), 1});
    LossValue lv = ce_seg_loss(pred, zeros, dpred);
    lv.components.clear();
    lv.components["adv"] = lv.value;
    return lv;
}

/// Pixel-wise mean squared difference.
template <typename T>
LossValue residual_loss(const Tensor<T>& x, const Tensor<T>& gx, Tensor<T>* dgx = nullptr) {
    require_same_shape(x, gx, "residual_loss");
    const std::size_t P = x.size();
    if (dgx) *dgx = Tensor<T>(gx.shape());
    double sum = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(gx[i]);
        sum += d * d;
        if (dgx) (*dgx)[i] = static_cast<T>(-2.0 * d / static_cast<double>(P));
    }
    LossValue lv;
    lv.value = sum / static_cast<double>(P);
    lv.components["mse"] = lv.value;
    return lv;
}

/// Residual loss split by region: plain MSE on normal pixels, and on lesion
/// pixels an MSE pull toward the image's normal-tissue mean. Both terms are
/// averaged over all pixels, so an empty mask reduces this exactly to
/// residual_loss.
template <typename T>
LossValue improved_residual_loss(const Tensor<T>& x, const Tensor<T>& gx, const Tensor<T>& mask,
                                 double lambda1, Tensor<T>* dgx = nullptr,
                                 double body_threshold = kBodyThreshold) {
    require_same_shape(x, gx, "improved_residual_loss");
    require_same_shape(x, mask, "improved_residual_loss");
    if (!(lambda1 > 0.0 && lambda1 < 1.0))
        throw std::invalid_argument("improved_residual_loss: lambda1 must lie in (0,1)");

    const auto N = x.dim(0);
    const std::int64_t S = x.dim(1) * x.dim(2) * x.dim(3);
    const std::size_t P = x.size();
    if (dgx) *dgx = Tensor<T>(gx.shape());

    double sum_normal = 0.0, sum_fill = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xi = x.data() + n * S;
        const T* gi = gx.data() + n * S;
        const T* mi = mask.data() + n * S;
        const double fill = normal_tissue_mean(xi, mi, S, body_threshold);
        for (std::int64_t i = 0; i < S; ++i) {
            if (mi[i] > T{0.5}) {
                const double d = fill - static_cast<double>(gi[i]);
                sum_fill += d * d;
                if (dgx) (*dgx)[static_cast<std::size_t>(n * S + i)] =
                        static_cast<T>(-2.0 * lambda1 * d / static_cast<double>(P));
            } else {
                const double d = static_cast<double>(xi[i]) - static_cast<double>(gi[i]);
                sum_normal += d * d;
                if (dgx) (*dgx)[static_cast<std::size_t>(n * S + i)] =
                        static_cast<T>(-2.0 * d / static_cast<double>(P));
            }
        }
    }
    LossValue lv;
    const double t_normal = sum_normal / static_cast<double>(P);
    const double t_fill = sum_fill / static_cast<double>(P);
    lv.value = t_normal + lambda1 * t_fill;
    lv.components["mse_normal"] = t_normal;
    lv.components["mse_lesion_fill"] = t_fill;
    return lv;
}

/// Per-image normalized absolute difference map m in [0,1].
template <typename T>
Tensor<T> difference_map(const Tensor<T>& x, const Tensor<T>& gx) {
    require_same_shape(x, gx, "difference_map");
    const auto N = x.dim(0);
    const std::int64_t S = static_cast<std::int64_t>(x.size()) / N;
    Tensor<T> m(x.shape());
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xi = x.data() + n * S;
        const T* gi = gx.data() + n * S;
        T* mi = m.data() + n * S;
        double maxd = 0.0;
        for (std::int64_t i = 0; i < S; ++i) {
            const double d = std::abs(static_cast<double>(xi[i]) - static_cast<double>(gi[i]));
            if (d > maxd) maxd = d;
        }
        const double denom = maxd + 1e-8;
        for (std::int64_t i = 0; i < S; ++i)
            mi[i] = static_cast<T>(
                std::abs(static_cast<double>(xi[i]) - static_cast<double>(gi[i])) / denom);
    }
    return m;
}

/// w = max(1 - m, 0.1): keeps a subtle penalty on fully transformed pixels.
template <typename T>
Tensor<T> weight_map(const Tensor<T>& m) {
    Tensor<T> w(m.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const T v = T{1} - m[i];
        w[i] = v < T{0.1} ? T{0.1} : v;
    }
    return w;
}

/// Pixel-weighted cross-entropy: lesion pixels are scaled by w, healthy
/// pixels keep weight 1 so the segmentor never loses negative supervision.
/// literal_foreground_only drops the healthy term entirely (comparison mode).
template <typename T>
LossValue weighted_ce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& w,
                      Tensor<T>* dpred = nullptr, bool literal_foreground_only = false) {
    detail::check_pred_target(pred, target, "weighted_ce");
    require_same_shape(target, w, "weighted_ce");
    const std::size_t P = target.size();
    if (dpred) *dpred = Tensor<T>(pred.shape());
    double sum = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const bool lesion = target[i] > T{0.5};
        if (literal_foreground_only && !lesion) continue;
        const double c = lesion ? static_cast<double>(w[i]) : 1.0;
        const int cls = lesion ? 1 : 0;
        const double p = static_cast<double>(pred[2 * i + cls]);
        const double pc = p < kProbEps ? kProbEps : (p > 1.0 ? 1.0 : p);
        sum += -c * std::log(pc);
        if (dpred && p >= kProbEps && p <= 1.0)
            (*dpred)[2 * i + cls] = static_cast<T>(-c / (pc * static_cast<double>(P)));
    }
    LossValue lv;
    lv.value = sum / static_cast<double>(P);
    lv.components["wce"] = lv.value;
    return lv;
}

/// Total generator objective: adversarial term plus lambda times the
/// residual term, with the breakdown recorded.
inline LossValue generator_total(const LossValue& adv, const LossValue& res, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("generator_total: lambda must be > 0");
    LossValue lv;
    lv.value = adv.value + lambda * res.value;
    lv.components["s2"] = adv.value;
    lv.components["res"] = res.value;
    lv.components["lambda"] = lambda;
    lv.components["total"] = lv.value;
    return lv;
}

}  // namespace gvs
