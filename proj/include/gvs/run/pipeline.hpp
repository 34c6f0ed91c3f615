#pragma once

// Shared command flows: synthesize a dataset through a trained generator,
// write the per-slice artifacts, and evaluate metrics against originals.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gvs/data/dataset.hpp"
#include "gvs/data/image_io.hpp"
#include "gvs/data/slice.hpp"
#include "gvs/losses/losses.hpp"
#include "gvs/metrics/metrics.hpp"
#include "gvs/nn/unet.hpp"

namespace gvs {

/// Runs every slice through the generator, batched. Returns (H, W) images.
inline std::vector<Tensor<float>> synthesize_all(const nn::UNet<float>& gen,
                                                 const std::vector<SlicePair>& pairs,
                                                 int batch_size = 8) {
    std::vector<Tensor<float>> out;
    out.reserve(pairs.size());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pairs.size(); i += static_cast<std::size_t>(batch_size)) {
        idx.clear();
        for (std::size_t j = i; j < std::min(pairs.size(), i + static_cast<std::size_t>(batch_size));
             ++j)
            idx.push_back(j);
        auto [x, y] = make_batch<float>(pairs, idx);
        Tensor<float> gx = gen.infer(x);
        const auto H = gx.dim(1), W = gx.dim(2);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            Tensor<float> img({H, W});
            std::memcpy(img.data(), gx.data() + static_cast<std::int64_t>(b) * H * W,
                        sizeof(float) * static_cast<std::size_t>(H * W));
            out.push_back(std::move(img));
        }
    }
    return out;
}

/// Writes synthetic/, difference/ and panels/ under out, one file per slice.
/// Difference maps are per-image max-normalized unless absolute_scale.
inline void write_synth_outputs(const std::vector<SlicePair>& pairs,
                                const std::vector<Tensor<float>>& synths,
                                const std::filesystem::path& out, bool absolute_scale = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out / "synthetic");
    fs::create_directories(out / "difference");
    fs::create_directories(out / "panels");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const auto& syn = synths[i];
        write_gray16(out / "synthetic" / (p.id + ".png"), syn);

        Tensor<float> diff(syn.shape());
        float maxd = 0.f;
        for (std::size_t k = 0; k < syn.size(); ++k) {
            diff[k] = std::abs(p.image.pixels[k] - syn[k]);
            maxd = std::max(maxd, diff[k]);
        }
        if (!absolute_scale)
            for (std::size_t k = 0; k < diff.size(); ++k)
                diff[k] = diff[k] / (maxd + 1e-8f);
        write_gray8(out / "difference" / (p.id + ".png"), diff);

        write_panel8(out / "panels" / (p.id + ".png"),
                     {p.image.pixels, syn, diff, p.mask.labels});
    }
}

/// Loads synthetic images matched to `pairs` by id. Accepts either a synth
/// output directory (synthetic/<id>.png) or a dataset root (images/<id>.png,
/// the baseline case). Unmatched ids are an error listing every offender.
inline std::vector<Tensor<float>> load_synthetics(const std::filesystem::path& dir,
                                                  const std::vector<SlicePair>& pairs) {
    namespace fs = std::filesystem;
    fs::path sub;
    if (fs::is_directory(dir / "synthetic"))
        sub = dir / "synthetic";
    else if (fs::is_directory(dir / "images"))
        sub = dir / "images";
    else
        throw std::runtime_error("no synthetic/ or images/ directory under " + dir.string());

    std::vector<std::string> missing;
    std::vector<Tensor<float>> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        const fs::path f = sub / (p.id + ".png");
        if (!fs::exists(f)) {
            missing.push_back(p.id);
            continue;
        }
        RawImage raw = read_gray(f);
        if (!raw.pixels.same_shape(p.image.pixels))
            throw std::runtime_error("synthetic " + f.string() + " shape " +
                                     raw.pixels.shape_str() + " does not match original " +
                                     p.image.pixels.shape_str());
        Tensor<float> img(raw.pixels.shape());
        for (std::size_t k = 0; k < img.size(); ++k)
            img[k] = raw.pixels[k] / static_cast<float>(raw.max_value);
        out.push_back(std::move(img));
    }
    if (!missing.empty()) {
        std::string msg = "unmatched ids (no synthetic file):";
        for (const auto& id : missing) msg += " " + id;
        throw std::runtime_error(msg);
    }
    return out;
}

struct EvalOptions {
    bool want_id = true;
    bool want_sdice = true;
    SdiceProtocol protocol;
    std::vector<std::uint64_t> protocol_seeds{101};
    int dilate_px = 3;
    std::string dataset_tag, synth_tag, variant_tag;
};

/// Full metric evaluation of synthetics against originals.
inline MetricsReport evaluate(const std::vector<SlicePair>& pairs,
                              const std::vector<Tensor<float>>& synths, const EvalOptions& opt) {
    if (pairs.size() != synths.size())
        throw std::invalid_argument("evaluate: pair/synthetic count mismatch");
    MetricsReport rep;
    rep.dataset_tag = opt.dataset_tag;
    rep.synth_tag = opt.synth_tag;
    rep.variant_tag = opt.variant_tag;
    rep.protocol = opt.protocol;
    rep.mass_dilate_px = opt.dilate_px;

    if (opt.want_id) {
        int scales = 5;
        for (const auto& p : pairs)
            scales = std::min(scales,
                              max_feasible_scales(p.image.height(), p.image.width()));
        if (scales < 1) throw std::runtime_error("evaluate: images too small for MS-SSIM");
        std::vector<SlicePairWithSynth> items;
        items.reserve(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i)
            items.push_back({&pairs[i], synths[i]});
        rep.id = id_metric(items, scales);
        rep.id_scales = scales;
    }

    for (std::size_t i = 0; i < pairs.size(); ++i) {
        bool any = false, all = true;
        for (std::size_t k = 0; k < pairs[i].mask.labels.size(); ++k) {
            const bool m = pairs[i].mask.labels[k] > 0.5f;
            any = any || m;
            all = all && m;
        }
        if (any && !all) {
            rep.change_ratios.push_back(
                lesion_change_ratio(pairs[i].image.pixels, synths[i], pairs[i].mask.labels));
            rep.mass_fractions.push_back(change_mass_fraction(
                pairs[i].image.pixels, synths[i], pairs[i].mask.labels, opt.dilate_px));
        }
    }

    if (opt.want_sdice) {
        std::vector<SlicePair> synth_pairs;
        synth_pairs.reserve(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            SlicePair sp;
            sp.id = pairs[i].id;
            sp.image.pixels = synths[i];
            sp.mask.labels = pairs[i].mask.labels;
            synth_pairs.push_back(std::move(sp));
        }
        for (std::uint64_t seed : opt.protocol_seeds) {
            SdiceProtocol proto = opt.protocol;
            proto.seed = seed;
            auto [value, series] = s_dice<float>(synth_pairs, proto);
            rep.sdice_runs.push_back({seed, value, std::move(series)});
        }
    }
    return rep;
}

}  // namespace gvs
