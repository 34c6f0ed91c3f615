// gvs: phantom data generation, adversarial training, pseudo-healthy
// synthesis, metric evaluation and the ablation table, as subcommands.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <malloc.h>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gvs/data/phantom.hpp"
#include "gvs/run/manifest.hpp"
#include "gvs/run/pipeline.hpp"
#include "gvs/train/trainer.hpp"
#include "gvs/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path runs_root() {
    if (const char* env = std::getenv("GVS_RUNS_DIR")) return fs::path(env);
    return fs::path("runs");
}

gvs::TrainingConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    return gvs::TrainingConfig::from_json(json::parse(in));
}

gvs::SdiceProtocol load_protocol_file(const std::string& path,
                                      std::vector<std::uint64_t>& seeds) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read protocol file: " + path);
    json j = json::parse(in);
    if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return gvs::SdiceProtocol::from_json(j);
}

void print_table1_row(const gvs::MetricsReport& rep) {
    if (rep.id)
        std::printf("iD %.4f +/- %.4f (n=%zu, %d scales)\n", rep.id->mean, rep.id->std, rep.id->n,
                    rep.id_scales);
    if (!rep.sdice_runs.empty())
        std::printf("S_dice %.3f +/- %.3f (protocol: %d epochs, width %d, %zu seed%s)\n",
                    rep.sdice_mean(), rep.sdice_std(), rep.protocol.epochs,
                    rep.protocol.base_width, rep.sdice_runs.size(),
                    rep.sdice_runs.size() == 1 ? "" : "s");
    if (!rep.change_ratios.empty())
        std::printf("difference: median change ratio %.2f, mass in dilated mask %.1f%%\n",
                    rep.median_change_ratio(), 100.0 * rep.mean_mass_fraction());
}

// ---- phantom ---------------------------------------------------------------

int cmd_phantom(const fs::path& out, gvs::PhantomSpec spec) {
    if (spec.size % 16 != 0)
        throw std::invalid_argument("side must be divisible by 16 (network contract), got " +
                                    std::to_string(spec.size));
    auto pairs = gvs::generate_phantoms(spec);
    gvs::save_slice_pairs(out, pairs);
    const auto fp = gvs::fingerprint_dataset(out);

    gvs::RunManifest man;
    man.run_id = "phantom-" + gvs::hash_hex(gvs::hash_bytes(fp.content_hash.data(),
                                                            fp.content_hash.size())).substr(0, 8);
    man.config = {{"size", spec.size},
                  {"n_slices", spec.n_slices},
                  {"lesion_contrast", spec.lesion_contrast},
                  {"lesion_radius_min", spec.lesion_radius_min},
                  {"lesion_radius_max", spec.lesion_radius_max},
                  {"texture_scale", spec.texture_scale},
                  {"seed", spec.seed}};
    man.dataset = fp;
    man.created_at = man.finished_at = gvs::iso8601_now();
    man.write(out);

    std::printf("phantom dataset: %lld slices %lldx%lld -> %s (hash %s)\n",
                static_cast<long long>(spec.n_slices), static_cast<long long>(spec.size),
                static_cast<long long>(spec.size), out.string().c_str(), fp.content_hash.c_str());
    return 0;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const fs::path& data, fs::path out, const gvs::TrainingConfig& cfg,
              double fraction) {
    cfg.validate_or_throw();
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("--fraction must lie in (0,1]");

    auto pairs = gvs::load_slice_pairs(data);
    pairs = gvs::take_fraction(std::move(pairs), fraction, cfg.seed);

    if (out.empty()) out = runs_root() / ("train-" + cfg.hash().substr(0, 12));
    fs::create_directories(out);

    gvs::RunManifest man;
    man.run_id = out.filename().string();
    man.config = cfg.to_json();
    man.config["fraction"] = fraction;
    man.config["training_slices"] = pairs.size();
    man.dataset = gvs::fingerprint_dataset(data);
    man.created_at = gvs::iso8601_now();

    {
        std::ofstream cj(out / "config.json");
        cj << cfg.to_json().dump(2) << "\n";  // defaults made explicit
    }

    gvs::TrainState<float> state(cfg);
    auto result = gvs::train(cfg, pairs, state, out);

    man.finished_at = gvs::iso8601_now();
    man.write(out);

    const auto& last = result.epochs.back();
    std::printf("trained %s variant on %zu slices for %d epochs -> %s\n",
                gvs::to_string(cfg.variant).c_str(), pairs.size(), cfg.total_epochs,
                out.string().c_str());
    std::printf("final: loss_A %.4f  loss_B %.4f  train_dice %.4f\n", last.mean_loss_a,
                last.mean_loss_b, last.train_dice);
    return 0;
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const fs::path& ckpt, const fs::path& data, const fs::path& out,
              bool absolute_diff) {
    auto gen = gvs::load_unet<float>(ckpt, gvs::nn::NetKind::generator);
    auto pairs = gvs::load_slice_pairs(data);
    auto synths = gvs::synthesize_all(gen, pairs);
    gvs::write_synth_outputs(pairs, synths, out, absolute_diff);

    gvs::RunManifest man;
    man.run_id = "synth-" + out.filename().string();
    man.config = {{"checkpoint", ckpt.string()}, {"absolute_diff", absolute_diff}};
    man.dataset = gvs::fingerprint_dataset(data);
    man.created_at = man.finished_at = gvs::iso8601_now();
    man.write(out);

    std::printf("synthesized %zu slices -> %s\n", synths.size(), out.string().c_str());
    return 0;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const fs::path& data, const fs::path& synth, const std::string& metric,
             const std::string& protocol_file, const fs::path& out_file,
             const std::string& variant_tag) {
    gvs::EvalOptions opt;
    opt.want_id = metric == "id" || metric == "both";
    opt.want_sdice = metric == "sdice" || metric == "both";
    if (!protocol_file.empty()) opt.protocol = load_protocol_file(protocol_file, opt.protocol_seeds);
    opt.dataset_tag = data.string();
    opt.synth_tag = synth.string();
    opt.variant_tag = variant_tag;

    auto pairs = gvs::load_slice_pairs(data);
    auto synths = gvs::load_synthetics(synth, pairs);
    auto rep = gvs::evaluate(pairs, synths, opt);

    if (!out_file.empty()) {
        if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
        std::ofstream out(out_file);
        out << rep.to_json().dump(2) << "\n";
        for (const auto& run : rep.sdice_runs) {
            fs::path csv = out_file;
            csv.replace_extension("");
            run.series.write_csv(csv.string() + "-sdice-seed" + std::to_string(run.seed) + ".csv");
        }
    }
    print_table1_row(rep);
    return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblationCell {
    std::string variant;
    std::optional<gvs::MeanStd> id;
    std::optional<gvs::MeanStd> sdice;
    std::vector<std::vector<double>> train_dice_series;  // per seed
    std::vector<std::string> errors;
};

int cmd_ablate(const fs::path& data, const fs::path& out, int n_seeds,
               const gvs::TrainingConfig& base_cfg, const gvs::SdiceProtocol& base_proto) {
    fs::create_directories(out);
    auto pairs = gvs::load_slice_pairs(data);

    const std::vector<gvs::Variant> variants{gvs::Variant::full, gvs::Variant::no_rplus,
                                             gvs::Variant::no_wce};
    std::vector<AblationCell> cells;
    bool any_failed = false;

    for (const auto variant : variants) {
        AblationCell cell;
        cell.variant = gvs::to_string(variant);
        std::vector<double> ids, sdices;
        for (int k = 0; k < n_seeds; ++k) {
            gvs::TrainingConfig cfg = base_cfg;
            cfg.variant = variant;
            cfg.seed = base_cfg.seed + static_cast<std::uint64_t>(k);
            const fs::path run_dir = out / (cell.variant + "-seed" + std::to_string(k));
            try {
                gvs::TrainState<float> state(cfg);
                auto result = gvs::train(cfg, pairs, state, run_dir);
                std::vector<double> series;
                for (const auto& e : result.epochs) series.push_back(e.train_dice);
                cell.train_dice_series.push_back(series);

                auto synths = gvs::synthesize_all(state.gen, pairs, cfg.batch_size);
                gvs::write_synth_outputs(pairs, synths, run_dir / "synth");

                gvs::EvalOptions opt;
                opt.protocol = base_proto;
                opt.protocol_seeds = {base_proto.seed + static_cast<std::uint64_t>(k)};
                opt.dataset_tag = data.string();
                opt.variant_tag = cell.variant;
                auto rep = gvs::evaluate(pairs, synths, opt);
                ids.push_back(rep.id->mean);
                sdices.push_back(rep.sdice_runs[0].value);
                std::ofstream rj(run_dir / "metrics.json");
                rj << rep.to_json().dump(2) << "\n";
            } catch (const std::exception& e) {
                cell.errors.push_back("seed " + std::to_string(k) + ": " + e.what());
                any_failed = true;
            }
        }
        if (!ids.empty()) cell.id = gvs::mean_std(ids);
        if (!sdices.empty()) cell.sdice = gvs::mean_std(sdices);
        cells.push_back(std::move(cell));
    }

    // Baseline column: the originals themselves.
    AblationCell base;
    base.variant = "baseline";
    {
        std::vector<double> ids, sdices;
        for (int k = 0; k < n_seeds; ++k) {
            try {
                std::vector<gvs::Tensor<float>> self;
                for (const auto& p : pairs) self.push_back(p.image.pixels);
                gvs::EvalOptions opt;
                opt.protocol = base_proto;
                opt.protocol_seeds = {base_proto.seed + static_cast<std::uint64_t>(k)};
                opt.dataset_tag = data.string();
                opt.variant_tag = "baseline";
                auto rep = gvs::evaluate(pairs, self, opt);
                ids.push_back(rep.id->mean);
                sdices.push_back(rep.sdice_runs[0].value);
            } catch (const std::exception& e) {
                base.errors.push_back("seed " + std::to_string(k) + ": " + e.what());
                any_failed = true;
            }
        }
        if (!ids.empty()) base.id = gvs::mean_std(ids);
        if (!sdices.empty()) base.sdice = gvs::mean_std(sdices);
    }
    cells.push_back(std::move(base));

    // JSON + aligned text table.
    json jt;
    jt["seeds"] = n_seeds;
    jt["protocol"] = base_proto.to_json();
    for (const auto& c : cells) {
        json jc{{"variant", c.variant}};
        if (c.id) jc["id"] = {{"mean", c.id->mean}, {"std", c.id->std}};
        if (c.sdice) jc["sdice"] = {{"mean", c.sdice->mean}, {"std", c.sdice->std}};
        if (!c.train_dice_series.empty()) jc["train_dice_series"] = c.train_dice_series;
        if (!c.errors.empty()) jc["errors"] = c.errors;
        jt["cells"].push_back(jc);
    }

    std::string table;
    auto cellval = [](const std::optional<gvs::MeanStd>& ms) {
        if (!ms) return std::string("      --      ");
        char buf[40];
        std::snprintf(buf, sizeof buf, "%6.3f +/-%5.3f", ms->mean, ms->std);
        return std::string(buf);
    };
    table += "metric    ";
    for (const auto& c : cells) {
        char buf[40];
        std::snprintf(buf, sizeof buf, " | %-14s", c.variant.c_str());
        table += buf;
    }
    table += "\n";
    table += "iD        ";
    for (const auto& c : cells) table += " | " + cellval(c.id);
    table += "\n";
    table += "S_dice    ";
    for (const auto& c : cells) table += " | " + cellval(c.sdice);
    table += "\n";

    {
        std::ofstream tj(out / "ablation.json");
        tj << jt.dump(2) << "\n";
        std::ofstream tt(out / "ablation.txt");
        tt << table;
    }
    std::fputs(table.c_str(), stdout);
    if (any_failed) std::fprintf(stderr, "error: some ablation cells failed; see ablation.json\n");
    return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);  // large tensors churn; keep them on the heap

    CLI::App app{"Generator-versus-segmentor pseudo-healthy synthesis toolkit"};
    app.set_version_flag("--version", std::string(gvs::kToolName) + " " + gvs::kVersion);
    app.require_subcommand(1);

    // phantom
    auto* sp = app.add_subcommand("phantom", "Generate a deterministic lesion-phantom dataset");
    std::string p_out;
    gvs::PhantomSpec spec;
    sp->add_option("--out", p_out, "output dataset directory")->required();
    sp->add_option("--n", spec.n_slices, "number of slices (default 200)");
    sp->add_option("--size", spec.size, "image side in pixels, divisible by 16 (default 128)");
    sp->add_option("--contrast", spec.lesion_contrast,
                   "additive lesion intensity offset (default 0.35)");
    sp->add_option("--seed", spec.seed, "generation seed (default 0)");
    sp->add_option("--radius-min", spec.lesion_radius_min,
                   "min lesion radius as fraction of size (default 0.08)");
    sp->add_option("--radius-max", spec.lesion_radius_max,
                   "max lesion radius as fraction of size (default 0.16)");
    sp->add_option("--texture-scale", spec.texture_scale,
                   "texture bump width as fraction of size (default 0.22)");

    // train
    auto* st = app.add_subcommand("train", "Train the adversarial generator/segmentor pair");
    std::string t_data, t_out, t_config, t_variant;
    double t_fraction = 1.0;
    std::optional<std::uint64_t> t_seed;
    std::optional<int> t_epochs, t_width, t_batch;
    st->add_option("--data", t_data, "dataset root (images/ + masks/)")->required();
    st->add_option("--out", t_out, "run directory (default <GVS_RUNS_DIR|runs>/train-<hash>)");
    st->add_option("--config", t_config, "JSON config file (defaults: lambda 1.0, lambda1 0.1, "
                                         "20 epochs, batch 8, lr 0.001 decayed 10x after 0.8 of "
                                         "the epochs, width 16)");
    st->add_option("--variant", t_variant, "full|basic|no_wce|no_rplus (default full)");
    st->add_option("--fraction", t_fraction, "train on this seeded fraction of slices (0,1]");
    st->add_option("--seed", t_seed, "training seed");
    st->add_option("--epochs", t_epochs, "override total_epochs");
    st->add_option("--width", t_width, "override base_width");
    st->add_option("--batch-size", t_batch, "override batch_size");

    // synth
    auto* ss = app.add_subcommand("synth", "Run a generator checkpoint over a dataset");
    std::string s_ckpt, s_data, s_out;
    bool s_abs = false;
    ss->add_option("--ckpt", s_ckpt, "generator parameter blob (.bin)")->required();
    ss->add_option("--data", s_data, "dataset root")->required();
    ss->add_option("--out", s_out, "output directory")->required();
    ss->add_flag("--absolute-diff", s_abs,
                 "render difference maps on the absolute intensity scale instead of per-image "
                 "max-normalized");

    // eval
    auto* se = app.add_subcommand("eval", "Evaluate healthiness (S_dice) and identity (iD)");
    std::string e_data, e_synth, e_metric = "both", e_protocol, e_out, e_variant;
    se->add_option("--data", e_data, "original dataset root")->required();
    se->add_option("--synth", e_synth, "synth output directory or dataset root")->required();
    se->add_option("--metric", e_metric, "sdice|id|both (default both)");
    se->add_option("--protocol", e_protocol,
                   "JSON protocol file {epochs, base_width, batch_size, lr_initial, seeds:[...]}");
    se->add_option("--out", e_out, "metrics report JSON path");
    se->add_option("--variant", e_variant, "variant tag recorded in the report");

    // ablate
    auto* sa = app.add_subcommand("ablate", "Run the variant ablation table");
    std::string a_data, a_out, a_config, a_protocol;
    int a_seeds = 3;
    sa->add_option("--data", a_data, "dataset root")->required();
    sa->add_option("--out", a_out, "output directory")->required();
    sa->add_option("--seeds", a_seeds, "training runs per variant (default 3)");
    sa->add_option("--config", a_config, "base training config JSON");
    sa->add_option("--protocol", a_protocol, "S_dice protocol JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sp->parsed()) return cmd_phantom(p_out, spec);
        if (st->parsed()) {
            gvs::TrainingConfig cfg = t_config.empty() ? gvs::TrainingConfig{}
                                                       : load_config_file(t_config);
            if (!t_variant.empty()) cfg.variant = gvs::variant_from_string(t_variant);
            if (t_seed) cfg.seed = *t_seed;
            if (t_epochs) cfg.total_epochs = *t_epochs;
            if (t_width) cfg.base_width = *t_width;
            if (t_batch) cfg.batch_size = *t_batch;
            return cmd_train(t_data, t_out, cfg, t_fraction);
        }
        if (ss->parsed()) return cmd_synth(s_ckpt, s_data, s_out, s_abs);
        if (se->parsed()) {
            if (e_metric != "sdice" && e_metric != "id" && e_metric != "both")
                throw std::invalid_argument("--metric must be sdice|id|both");
            return cmd_eval(e_data, e_synth, e_metric, e_protocol, e_out, e_variant);
        }
        if (sa->parsed()) {
            gvs::TrainingConfig cfg = a_config.empty() ? gvs::TrainingConfig{}
                                                       : load_config_file(a_config);
            std::vector<std::uint64_t> seeds{101};
            gvs::SdiceProtocol proto;
            if (!a_protocol.empty()) proto = load_protocol_file(a_protocol, seeds);
            if (proto.seed == 0 && !seeds.empty()) proto.seed = seeds[0];
            return cmd_ablate(a_data, a_out, a_seeds, cfg, proto);
        }
    } catch (const gvs::TrainingError& e) {
        std::fprintf(stderr, "error: %s\n%s\n", e.what(), e.diagnostic.dump(2).c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
