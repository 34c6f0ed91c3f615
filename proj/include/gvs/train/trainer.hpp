#pragma once

// The alternating optimization: Step A fixes the generator and trains the
// segmentor to find lesions in synthetic images; Step B fixes the segmentor
// and trains the generator to erase them while staying close to the input.
// Strict parameter isolation between the two steps is part of the contract
// and is cheap to assert via content hashes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
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
#include "gvs/nn/adam.hpp"
#include "gvs/nn/unet.hpp"
#include "gvs/train/config.hpp"

namespace gvs {

struct StepRecord {
    int epoch = 0;
    std::int64_t step = 0;
    char phase = 'A';
    double lr = 0.0;
    LossValue loss;

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch},
                         {"step", step},
                         {"phase", std::string(1, phase)},
                         {"lr", lr},
                         {"loss", loss.value}};
        for (const auto& [k, v] : loss.components) j["components"][k] = v;
        return j;
    }
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss_a = 0.0;
    double mean_loss_b = 0.0;
    double train_dice = -1.0;  // -1 when evaluation is disabled
};

class TrainingError : public std::runtime_error {
  public:
    TrainingError(const std::string& msg, nlohmann::json record)
        : std::runtime_error(msg), diagnostic(std::move(record)) {}
    nlohmann::json diagnostic;
};

template <typename T>
struct TrainState {
    nn::UNet<T> gen;
    nn::UNet<T> seg;
    nn::Adam<T> opt_g;
    nn::Adam<T> opt_s;
    int epochs_done = 0;
    std::int64_t step = 0;

    explicit TrainState(const TrainingConfig& cfg)
        : gen(nn::NetKind::generator, cfg.base_width, cfg.seed),
          seg(nn::NetKind::segmentor, cfg.base_width, cfg.seed),
          opt_g(gen.params().total_count()),
          opt_s(seg.params().total_count()) {}
};

namespace detail {

inline void check_finite_loss(const LossValue& lv, int epoch, std::int64_t step, char phase) {
    bool bad = !std::isfinite(lv.value);
    for (const auto& [k, v] : lv.components) bad = bad || !std::isfinite(v);
    if (!bad) return;
    nlohmann::json rec{{"error", "non-finite loss"},
                       {"epoch", epoch},
                       {"step", step},
                       {"phase", std::string(1, phase)},
                       {"loss", lv.value}};
    for (const auto& [k, v] : lv.components) rec["components"][k] = v;
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step) + " phase " + std::string(1, phase),
                        rec);
}

}  // namespace detail

/// Step A: one Adam update of the segmentor on CE(S(G(x)), y) (or its
/// pixel-weighted form). The generator output is treated as constant input.
/// `gx` may carry a precomputed G(x) to avoid a duplicate forward pass.
template <typename T>
StepRecord step_a(TrainState<T>& state, const Tensor<T>& x, const Tensor<T>& y, double lr,
                  const TrainingConfig& cfg, const Tensor<T>* gx = nullptr) {
    Tensor<T> local_gx;
    if (!gx) {
        local_gx = state.gen.infer(x);
        gx = &local_gx;
    }
    Tensor<T> pred = state.seg.forward(*gx);
    Tensor<T> dpred;
    LossValue lv;
    if (variant_uses_wce(cfg.variant)) {
        Tensor<T> w = weight_map(difference_map(x, *gx));
        lv = weighted_ce(pred, y, w, &dpred, cfg.wce_literal_eq6);
        lv.components = {{"wce", lv.value}};
    } else {
        lv = ce_seg_loss(pred, y, &dpred);
        lv.components = {{"s1", lv.value}};
    }
    detail::check_finite_loss(lv, state.epochs_done, state.step, 'A');
    state.seg.params().zero_grad();
    state.seg.backward(dpred, true);
    state.opt_s.step(state.seg.params(), lr);

    StepRecord rec{state.epochs_done, state.step, 'A', lr, std::move(lv)};
    ++state.step;
    return rec;
}

/// Step B: one Adam update of the generator on L_s2 + lambda * L_residual.
/// Gradients flow through the frozen segmentor's forward into G(x); the
/// segmentor's parameters and gradients are untouched.
/// If `gen_cache_valid` the generator's forward caches already describe
/// G(x) for this batch (they are intact across step A by parameter isolation).
template <typename T>
StepRecord step_b(TrainState<T>& state, const Tensor<T>& x, const Tensor<T>& y, double lr,
                  const TrainingConfig& cfg, const Tensor<T>* gx_precomputed = nullptr,
                  bool gen_cache_valid = false) {
    Tensor<T> local_gx;
    const Tensor<T>* gx = gx_precomputed;
    if (!gx || !gen_cache_valid) {
        local_gx = state.gen.forward(x);
        gx = &local_gx;
    }
    Tensor<T> pred = state.seg.forward(*gx);
    Tensor<T> dpred;
    LossValue adv = adv_seg_loss(pred, &dpred);
    Tensor<T> dgx_res;
    LossValue res = variant_uses_rplus(cfg.variant)
                        ? improved_residual_loss(x, *gx, y, cfg.lambda1, &dgx_res)
                        : residual_loss(x, *gx, &dgx_res);
    LossValue total = generator_total(adv, res, cfg.lambda);
    total.components = {{"s2", adv.value},
                        {variant_uses_rplus(cfg.variant) ? "R+" : "R", res.value},
                        {"total", total.value}};
    detail::check_finite_loss(total, state.epochs_done, state.step, 'B');

    Tensor<T> dgx = state.seg.backward(dpred, /*acc_param_grads=*/false);
    const T lam = static_cast<T>(cfg.lambda);
    for (std::size_t i = 0; i < dgx.size(); ++i) dgx[i] += lam * dgx_res[i];

    state.gen.params().zero_grad();
    state.gen.backward(dgx, true);
    state.opt_g.step(state.gen.params(), lr);

    StepRecord rec{state.epochs_done, state.step, 'B', lr, std::move(total)};
    ++state.step;
    return rec;
}

/// Segmentor dice on (G(x), y) over a pair set, batched inference.
template <typename T>
double train_data_dice(const TrainState<T>& state, const std::vector<SlicePair>& pairs,
                       int batch_size) {
    std::int64_t inter = 0, a = 0, b = 0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pairs.size(); i += static_cast<std::size_t>(batch_size)) {
        idx.clear();
        for (std::size_t j = i; j < std::min(pairs.size(), i + batch_size); ++j) idx.push_back(j);
        auto [x, y] = make_batch<T>(pairs, idx);
        Tensor<T> probs = state.seg.infer(state.gen.infer(x));
        for (std::size_t k = 0; k < y.size(); ++k) {
            const bool pa = probs[2 * k + 1] >= T{0.5};
            const bool pb = y[k] > T{0.5};
            a += pa;
            b += pb;
            inter += pa && pb;
        }
    }
    return 2.0 * static_cast<double>(inter) / (static_cast<double>(a + b) + kDiceEps);
}

// ---- Train-state checkpoints ---------------------------------------------

template <typename T>
void save_train_checkpoint(const TrainState<T>& state, const TrainingConfig& cfg,
                           const std::filesystem::path& path) {
    std::vector<T> blob;
    auto append = [&](const std::vector<T>& v) { blob.insert(blob.end(), v.begin(), v.end()); };
    append(state.gen.params().value);
    append(state.opt_g.moment1());
    append(state.opt_g.moment2());
    append(state.seg.params().value);
    append(state.opt_s.moment1());
    append(state.opt_s.moment2());
    nn::write_file_bytes(path, blob.data(), blob.size() * sizeof(T));

    nlohmann::json j;
    j["format"] = "gvs-train-ckpt-v1";
    j["dtype"] = std::is_same_v<T, float> ? "float32" : "float64";
    j["epochs_done"] = state.epochs_done;
    j["step"] = state.step;
    j["adam_t_gen"] = state.opt_g.steps_taken();
    j["adam_t_seg"] = state.opt_s.steps_taken();
    j["gen_count"] = state.gen.params().total_count();
    j["seg_count"] = state.seg.params().total_count();
    j["config"] = cfg.to_json();
    j["config_hash"] = cfg.hash();
    j["content_hash"] = hash_hex(hash_span(blob.data(), blob.size()));
    std::ofstream out(path.string() + ".json");
    out << j.dump(2) << "\n";
}

template <typename T>
TrainState<T> load_train_checkpoint(const std::filesystem::path& path, const TrainingConfig& cfg) {
    std::ifstream min(path.string() + ".json");
    if (!min) throw std::runtime_error("missing checkpoint manifest: " + path.string() + ".json");
    nlohmann::json j = nlohmann::json::parse(min);
    if (j.at("format") != "gvs-train-ckpt-v1")
        throw std::runtime_error("unsupported train checkpoint format");
    const std::string want_dtype = std::is_same_v<T, float> ? "float32" : "float64";
    if (j.at("dtype") != want_dtype)
        throw std::runtime_error("checkpoint dtype " + j.at("dtype").get<std::string>() +
                                 " does not match requested " + want_dtype);
    if (j.at("config_hash").get<std::string>() != cfg.hash())
        throw std::runtime_error("checkpoint was written under a different config; refusing to load");

    const auto bytes = nn::read_file_bytes(path);
    std::vector<T> blob(bytes.size() / sizeof(T));
    std::memcpy(blob.data(), bytes.data(), bytes.size());
    if (hash_hex(hash_span(blob.data(), blob.size())) != j.at("content_hash").get<std::string>())
        throw std::runtime_error("checkpoint blob hash does not match manifest: " + path.string());

    TrainState<T> state(cfg);
    const std::size_t gc = static_cast<std::size_t>(j.at("gen_count").get<std::int64_t>());
    const std::size_t sc = static_cast<std::size_t>(j.at("seg_count").get<std::int64_t>());
    if (blob.size() != 3 * gc + 3 * sc)
        throw std::runtime_error("checkpoint blob size does not match manifest: " + path.string());
    auto take = [&](std::size_t off, std::size_t n) {
        return std::vector<T>(blob.begin() + static_cast<std::ptrdiff_t>(off),
                              blob.begin() + static_cast<std::ptrdiff_t>(off + n));
    };
    state.gen.params().value = take(0, gc);
    state.opt_g.restore(take(gc, gc), take(2 * gc, gc), j.at("adam_t_gen").get<std::int64_t>());
    state.seg.params().value = take(3 * gc, sc);
    state.opt_s.restore(take(3 * gc + sc, sc), take(3 * gc + 2 * sc, sc),
                        j.at("adam_t_seg").get<std::int64_t>());
    state.epochs_done = j.at("epochs_done").get<int>();
    state.step = j.at("step").get<std::int64_t>();
    return state;
}

// ---- Full training loop ---------------------------------------------------

struct TrainResult {
    std::vector<EpochStats> epochs;
};

/// Runs the A/B alternation for cfg.total_epochs over `pairs`. When run_dir
/// is nonempty, appends one JSONL record per step to run_dir/log.jsonl and
/// writes ckpt-<epoch>(.bin/.json) plus final per-network parameter blobs.
/// `resume` continues a loaded state (its epochs_done marks where to pick up).
template <typename T>
TrainResult train(const TrainingConfig& cfg, std::vector<SlicePair> pairs, TrainState<T>& state,
                  const std::filesystem::path& run_dir = {}) {
    cfg.validate_or_throw();
    if (cfg.exclude_empty_masks) {
        std::erase_if(pairs, [](const SlicePair& p) {
            for (std::size_t i = 0; i < p.mask.labels.size(); ++i)
                if (p.mask.labels[i] > 0.5f) return false;
            return true;
        });
    }
    if (pairs.empty()) throw std::invalid_argument("train: no training pairs");

    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log.open(run_dir / "log.jsonl", state.epochs_done == 0 ? std::ios::trunc : std::ios::app);
    }
    auto emit = [&](const nlohmann::json& j) {
        if (log.is_open()) log << j.dump() << "\n";
    };

    TrainResult result;
    for (int epoch = state.epochs_done; epoch < cfg.total_epochs; ++epoch) {
        const double lr = cfg.lr_at_epoch(epoch);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        int nb = 0;
        for (const auto& idx : batch_indices(pairs.size(),
                                             static_cast<std::size_t>(cfg.batch_size), cfg.seed,
                                             epoch)) {
            auto [x, y] = make_batch<T>(pairs, idx);
            Tensor<T> gx = state.gen.forward(x);  // shared by both steps
            StepRecord ra = step_a(state, x, y, lr, cfg, &gx);
            StepRecord rb = step_b(state, x, y, lr, cfg, &gx, /*gen_cache_valid=*/true);
            emit(ra.to_json());
            emit(rb.to_json());
            stats.mean_loss_a += ra.loss.value;
            stats.mean_loss_b += rb.loss.value;
            ++nb;
        }
        stats.mean_loss_a /= nb;
        stats.mean_loss_b /= nb;
        if (cfg.eval_train_dice)
            stats.train_dice = train_data_dice(state, pairs, cfg.batch_size);
        state.epochs_done = epoch + 1;

        nlohmann::json je{{"epoch", epoch},
                          {"lr", lr},
                          {"mean_loss_a", stats.mean_loss_a},
                          {"mean_loss_b", stats.mean_loss_b}};
        if (cfg.eval_train_dice) je["train_dice"] = stats.train_dice;
        emit(je);
        result.epochs.push_back(stats);

        if (!run_dir.empty())
            save_train_checkpoint(state, cfg, run_dir / ("ckpt-" + std::to_string(epoch) + ".bin"));
    }

    if (!run_dir.empty()) {
        nn::save_param_blob(state.gen.params(), nn::NetKind::generator, cfg.base_width, cfg.seed,
                            run_dir / "generator-final.bin", cfg.hash());
        nn::save_param_blob(state.seg.params(), nn::NetKind::segmentor, cfg.base_width, cfg.seed,
                            run_dir / "segmentor-final.bin", cfg.hash());
    }
    return result;
}

/// Loads a parameter blob into a fresh network, checking the stored kind.
template <typename T>
nn::UNet<T> load_unet(const std::filesystem::path& blob_path, nn::NetKind expected) {
    nn::LoadedParams lp = nn::load_param_blob(blob_path);
    if (lp.manifest.kind != expected)
        throw std::runtime_error("checkpoint kind mismatch: expected " + nn::to_string(expected) +
                                 ", blob holds " + nn::to_string(lp.manifest.kind) + ": " +
                                 blob_path.string());
    nn::UNet<T> net(lp.manifest.kind, lp.manifest.base_width, lp.manifest.seed);
    net.load_values(lp.values);
    return net;
}

}  // namespace gvs
