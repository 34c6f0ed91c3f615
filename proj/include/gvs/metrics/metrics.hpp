#pragma once

// Evaluation protocol: healthiness via the accumulated-dice score of a
// freshly trained segmentor (lower = healthier), identity via masked
// MS-SSIM on normal pixels, plus difference-map statistics that quantify
// how well change mass concentrates on the lesion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvs/core/tensor.hpp"
#include "gvs/data/dataset.hpp"
#include "gvs/data/slice.hpp"
#include "gvs/losses/losses.hpp"
#include "gvs/metrics/dice.hpp"
#include "gvs/metrics/ms_ssim.hpp"
#include "gvs/nn/adam.hpp"
#include "gvs/nn/unet.hpp"

namespace gvs {

// ---- S_dice ----------------------------------------------------------------

struct SdiceProtocol {
    int epochs = 20;
    int base_width = 16;
    int batch_size = 8;
    double lr_initial = 0.001;
    double lr_decay_factor = 0.1;
    double lr_decay_at = 0.8;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},           {"base_width", base_width},
                {"batch_size", batch_size},   {"lr_initial", lr_initial},
                {"lr_decay_factor", lr_decay_factor}, {"lr_decay_at", lr_decay_at},
                {"seed", seed}};
    }
    static SdiceProtocol from_json(const nlohmann::json& j) {
        SdiceProtocol p;
        if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
        if (j.contains("base_width")) p.base_width = j.at("base_width").get<int>();
        if (j.contains("batch_size")) p.batch_size = j.at("batch_size").get<int>();
        if (j.contains("lr_initial")) p.lr_initial = j.at("lr_initial").get<double>();
        if (j.contains("lr_decay_factor")) p.lr_decay_factor = j.at("lr_decay_factor").get<double>();
        if (j.contains("lr_decay_at")) p.lr_decay_at = j.at("lr_decay_at").get<double>();
        if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
        return p;
    }
};

struct DiceSeries {
    std::vector<double> per_epoch;
    SdiceProtocol protocol;

    double sum() const { return std::accumulate(per_epoch.begin(), per_epoch.end(), 0.0); }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        out << "epoch,dice\n";
        for (std::size_t e = 0; e < per_epoch.size(); ++e)
            out << (e + 1) << "," << per_epoch[e] << "\n";
    }
};

/// Trains a fresh segmentor on (synthetic image, original annotation) pairs
/// with plain cross-entropy and returns the accumulated per-epoch dice on
/// that same training data. Slower convergence (smaller sum) means the
/// lesions have become harder to find, i.e. the images look healthier.
template <typename T>
std::pair<double, DiceSeries> s_dice(const std::vector<SlicePair>& pairs,
                                     const SdiceProtocol& protocol) {
    if (pairs.empty()) throw std::invalid_argument("s_dice: empty pair set");
    nn::UNet<T> seg(nn::NetKind::segmentor, protocol.base_width, protocol.seed);
    nn::Adam<T> opt(seg.params().total_count());
    const int decay_epoch = static_cast<int>(
        std::ceil(protocol.lr_decay_at * static_cast<double>(protocol.epochs) - 1e-12));

    DiceSeries series;
    series.protocol = protocol;
    for (int epoch = 0; epoch < protocol.epochs; ++epoch) {
        const double lr = epoch >= decay_epoch ? protocol.lr_initial * protocol.lr_decay_factor
                                               : protocol.lr_initial;
        for (const auto& idx :
             batch_indices(pairs.size(), static_cast<std::size_t>(protocol.batch_size),
                           protocol.seed, epoch)) {
            auto [x, y] = make_batch<T>(pairs, idx);
            Tensor<T> pred = seg.forward(x);
            Tensor<T> dpred;
            LossValue lv = ce_seg_loss(pred, y, &dpred);
            if (!std::isfinite(lv.value))
                throw std::runtime_error("s_dice: non-finite training loss at epoch " +
                                         std::to_string(epoch));
            seg.params().zero_grad();
            seg.backward(dpred, true);
            opt.step(seg.params(), lr);
        }
        // Dice on the training data with the current parameters.
        std::int64_t inter = 0, a = 0, b = 0;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pairs.size();
             i += static_cast<std::size_t>(protocol.batch_size)) {
            idx.clear();
            for (std::size_t j = i;
                 j < std::min(pairs.size(), i + static_cast<std::size_t>(protocol.batch_size)); ++j)
                idx.push_back(j);
            auto [x, y] = make_batch<T>(pairs, idx);
            Tensor<T> probs = seg.infer(x);
            for (std::size_t k = 0; k < y.size(); ++k) {
                const bool pa = probs[2 * k + 1] >= T{0.5};
                const bool pb = y[k] > T{0.5};
                a += pa;
                b += pb;
                inter += pa && pb;
            }
        }
        series.per_epoch.push_back(2.0 * static_cast<double>(inter) /
                                   (static_cast<double>(a + b) + kDiceEps));
    }
    return {series.sum(), series};
}

// ---- Identity ---------------------------------------------------------------

struct SlicePairWithSynth {
    const SlicePair* original = nullptr;
    Tensor<float> synthetic;  // (H, W) in [0,1]
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd ms;
    ms.n = v.size();
    if (v.empty()) return ms;
    ms.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - ms.mean) * (x - ms.mean);
        ms.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return ms;
}

/// Per-slice masked MS-SSIM, then mean/std across slices.
inline MeanStd id_metric(const std::vector<SlicePairWithSynth>& items, int scales) {
    if (items.empty()) throw std::invalid_argument("id_metric: empty input");
    std::vector<double> vals;
    vals.reserve(items.size());
    for (const auto& it : items)
        vals.push_back(
            masked_ms_ssim(it.original->image.pixels, it.synthetic, it.original->mask.labels,
                           scales));
    return mean_std(vals);
}

// ---- Difference-map statistics ----------------------------------------------

/// Mean |x - gx| inside the mask over mean outside, epsilon-stabilized so
/// identical images give exactly 1.
template <typename T>
double lesion_change_ratio(const Tensor<T>& x, const Tensor<T>& gx, const Tensor<T>& mask) {
    require_same_shape(x, gx, "lesion_change_ratio");
    require_same_shape(x, mask, "lesion_change_ratio");
    double sum_in = 0.0, sum_out = 0.0;
    std::int64_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(static_cast<double>(x[i]) - static_cast<double>(gx[i]));
        if (mask[i] > T{0.5}) {
            sum_in += d;
            ++n_in;
        } else {
            sum_out += d;
            ++n_out;
        }
    }
    if (n_in == 0) throw std::invalid_argument("lesion_change_ratio: empty mask");
    if (n_out == 0) throw std::invalid_argument("lesion_change_ratio: mask covers whole image");
    constexpr double eps = 1e-12;
    return (sum_in / static_cast<double>(n_in) + eps) /
           (sum_out / static_cast<double>(n_out) + eps);
}

/// Binary dilation with a Euclidean disk of the given pixel radius.
template <typename T>
Tensor<T> dilate_mask(const Tensor<T>& mask, int radius) {
    const auto H = mask.dim(0), W = mask.dim(1);
    Tensor<T> out(mask.shape());
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            if (!(mask[static_cast<std::size_t>(y * W + x)] > T{0.5})) continue;
            for (const auto& [dy, dx] : offsets) {
                const std::int64_t yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < H && xx >= 0 && xx < W)
                    out[static_cast<std::size_t>(yy * W + xx)] = T{1};
            }
        }
    return out;
}

/// Fraction of total absolute change that falls inside the dilated mask.
template <typename T>
double change_mass_fraction(const Tensor<T>& x, const Tensor<T>& gx, const Tensor<T>& mask,
                            int dilate_radius) {
    require_same_shape(x, gx, "change_mass_fraction");
    Tensor<T> dil = dilate_mask(mask, dilate_radius);
    double total = 0.0, inside = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(static_cast<double>(x[i]) - static_cast<double>(gx[i]));
        total += d;
        if (dil[i] > T{0.5}) inside += d;
    }
    return inside / (total + 1e-12);
}

// ---- Aggregate report ---------------------------------------------------------

struct SdiceRun {
    std::uint64_t seed = 0;
    double value = 0.0;
    DiceSeries series;
};

struct MetricsReport {
    std::string dataset_tag;
    std::string synth_tag;
    std::string variant_tag;

    std::optional<MeanStd> id;          // masked MS-SSIM across slices
    int id_scales = 0;

    std::vector<SdiceRun> sdice_runs;   // one per protocol seed
    SdiceProtocol protocol;

    std::vector<double> change_ratios;  // per slice
    std::vector<double> mass_fractions; // per slice
    int mass_dilate_px = 3;

    double sdice_mean() const {
        std::vector<double> v;
        for (const auto& r : sdice_runs) v.push_back(r.value);
        return mean_std(v).mean;
    }
    double sdice_std() const {
        std::vector<double> v;
        for (const auto& r : sdice_runs) v.push_back(r.value);
        return mean_std(v).std;
    }
    double median_change_ratio() const {
        if (change_ratios.empty()) return 0.0;
        std::vector<double> v = change_ratios;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    double mean_mass_fraction() const { return mean_std(mass_fractions).mean; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["dataset"] = dataset_tag;
        j["synthetic"] = synth_tag;
        if (!variant_tag.empty()) j["variant"] = variant_tag;
        if (id) {
            j["id"] = {{"mean", id->mean}, {"std", id->std}, {"n", id->n}, {"scales", id_scales}};
        }
        if (!sdice_runs.empty()) {
            j["sdice"]["protocol"] = protocol.to_json();
            j["sdice"]["mean"] = sdice_mean();
            j["sdice"]["std"] = sdice_std();
            for (const auto& r : sdice_runs) {
                nlohmann::json run{{"seed", r.seed}, {"value", r.value}};
                run["series"] = r.series.per_epoch;
                j["sdice"]["runs"].push_back(run);
            }
        }
        if (!change_ratios.empty()) {
            j["difference"] = {{"median_change_ratio", median_change_ratio()},
                               {"mean_mass_fraction", mean_mass_fraction()},
                               {"dilate_px", mass_dilate_px}};
        }
        return j;
    }
};

}  // namespace gvs
