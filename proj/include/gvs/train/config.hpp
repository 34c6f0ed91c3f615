#pragma once

// Training configuration with JSON round-trip, exhaustive validation and a
// content hash that ties checkpoints to the exact settings that wrote them.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvs/core/hash.hpp"

namespace gvs {

enum class Variant { full, basic, no_wce, no_rplus };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::basic: return "basic";
        case Variant::no_wce: return "no_wce";
        case Variant::no_rplus: return "no_rplus";
    }
    return "full";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "basic") return Variant::basic;
    if (s == "no_wce") return Variant::no_wce;
    if (s == "no_rplus") return Variant::no_rplus;
    throw std::invalid_argument("unknown variant: " + s +
                                " (expected full|basic|no_wce|no_rplus)");
}

/// Which loss each step uses under a variant: the complete regime swaps the
/// plain segmentation CE for the weighted CE and the plain residual for the
/// region-split one; the ablations undo exactly one of those swaps.
inline bool variant_uses_wce(Variant v) { return v == Variant::full || v == Variant::no_rplus; }
inline bool variant_uses_rplus(Variant v) { return v == Variant::full || v == Variant::no_wce; }

struct TrainingConfig {
    double lambda = 1.0;           // adversarial/residual trade-off
    double lambda1 = 0.1;          // lesion-fill consistency strength
    int total_epochs = 20;
    int batch_size = 8;
    double lr_initial = 0.001;
    double lr_decay_factor = 0.1;
    double lr_decay_at = 0.8;      // fraction of total epochs before decay
    std::uint64_t seed = 0;
    Variant variant = Variant::full;
    int base_width = 16;
    bool exclude_empty_masks = false;  // drop slices whose mask is all zero
    bool wce_literal_eq6 = false;      // foreground-only weighted CE mode
    bool eval_train_dice = true;       // per-epoch segmentor dice on train data

    /// First epoch index running at the decayed rate.
    int decay_epoch() const {
        return static_cast<int>(
            std::ceil(lr_decay_at * static_cast<double>(total_epochs) - 1e-12));
    }
    double lr_at_epoch(int epoch) const {
        return epoch >= decay_epoch() ? lr_initial * lr_decay_factor : lr_initial;
    }

    std::vector<std::string> validate() const {
        std::vector<std::string> errs;
        if (!(lambda > 0.0)) errs.push_back("lambda must be > 0");
        if (!(lambda1 > 0.0 && lambda1 < 1.0)) errs.push_back("lambda1 must lie in (0,1)");
        if (total_epochs < 1) errs.push_back("total_epochs must be >= 1");
        if (batch_size < 1) errs.push_back("batch_size must be >= 1");
        if (!(lr_initial > 0.0)) errs.push_back("lr_initial must be > 0");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
            errs.push_back("lr_decay_factor must lie in (0,1]");
        if (!(lr_decay_at > 0.0 && lr_decay_at <= 1.0))
            errs.push_back("lr_decay_at must lie in (0,1]");
        if (base_width < 4) errs.push_back("base_width must be >= 4");
        return errs;
    }

    void validate_or_throw() const {
        const auto errs = validate();
        if (errs.empty()) return;
        std::string msg = "invalid training config:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw std::invalid_argument(msg);
    }

    nlohmann::json to_json() const {
        return {
            {"lambda", lambda},
            {"lambda1", lambda1},
            {"total_epochs", total_epochs},
            {"batch_size", batch_size},
            {"lr_initial", lr_initial},
            {"lr_decay_factor", lr_decay_factor},
            {"lr_decay_at", lr_decay_at},
            {"seed", seed},
            {"variant", to_string(variant)},
            {"base_width", base_width},
            {"exclude_empty_masks", exclude_empty_masks},
            {"wce_literal_eq6", wce_literal_eq6},
            {"eval_train_dice", eval_train_dice},
        };
    }

    static TrainingConfig from_json(const nlohmann::json& j) {
        TrainingConfig c;
        auto get = [&](const char* key, auto& dst) {
            if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
        };
        get("lambda", c.lambda);
        get("lambda1", c.lambda1);
        get("total_epochs", c.total_epochs);
        get("batch_size", c.batch_size);
        get("lr_initial", c.lr_initial);
        get("lr_decay_factor", c.lr_decay_factor);
        get("lr_decay_at", c.lr_decay_at);
        get("seed", c.seed);
        if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
        get("base_width", c.base_width);
        get("exclude_empty_masks", c.exclude_empty_masks);
        get("wce_literal_eq6", c.wce_literal_eq6);
        get("eval_train_dice", c.eval_train_dice);
        for (const auto& [key, _] : j.items()) {
            static const char* known[] = {"lambda", "lambda1", "total_epochs", "batch_size",
                                          "lr_initial", "lr_decay_factor", "lr_decay_at", "seed",
                                          "variant", "base_width", "exclude_empty_masks",
                                          "wce_literal_eq6", "eval_train_dice"};
            bool ok = false;
            for (const char* k : known) ok = ok || key == k;
            if (!ok) throw std::invalid_argument("unknown config key: " + key);
        }
        return c;
    }

    /// Hash of the canonical JSON dump (keys in fixed order).
    std::string hash() const {
        const std::string s = to_json().dump();
        return hash_hex(hash_bytes(s.data(), s.size()));
    }
};

}  // namespace gvs
