#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gvs/data/phantom.hpp"
#include "gvs/train/trainer.hpp"

using namespace gvs;
namespace fs = std::filesystem;

namespace {

std::vector<SlicePair> tiny_phantoms(std::int64_t n, std::int64_t size, std::uint64_t seed) {
    PhantomSpec spec;
    spec.size = size;
    spec.n_slices = n;
    spec.seed = seed;
    return generate_phantoms(spec);
}

TrainingConfig tiny_config(Variant v = Variant::full) {
    TrainingConfig cfg;
    cfg.base_width = 8;
    cfg.batch_size = 4;
    cfg.total_epochs = 2;
    cfg.seed = 5;
    cfg.variant = v;
    cfg.eval_train_dice = false;
    return cfg;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("gvs-train-" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("learning-rate schedule follows the decay rule") {
    TrainingConfig cfg;
    cfg.total_epochs = 20;
    REQUIRE(cfg.decay_epoch() == 16);
    for (int e = 0; e < 16; ++e) REQUIRE(cfg.lr_at_epoch(e) == Catch::Approx(0.001));
    for (int e = 16; e < 20; ++e) REQUIRE(cfg.lr_at_epoch(e) == Catch::Approx(0.0001));

    cfg.total_epochs = 5;
    REQUIRE(cfg.decay_epoch() == 4);
    REQUIRE(cfg.lr_at_epoch(3) == Catch::Approx(0.001));
    REQUIRE(cfg.lr_at_epoch(4) == Catch::Approx(0.0001));
}

TEST_CASE("config validation lists every failure and round-trips JSON") {
    TrainingConfig bad;
    bad.lambda = -1.0;
    bad.lambda1 = 2.0;
    bad.total_epochs = 0;
    bad.base_width = 2;
    const auto errs = bad.validate();
    REQUIRE(errs.size() == 4);
    REQUIRE_THROWS_WITH(bad.validate_or_throw(), Catch::Matchers::ContainsSubstring("lambda1"));

    TrainingConfig c;
    c.variant = Variant::no_wce;
    c.seed = 99;
    const auto j = c.to_json();
    const auto back = TrainingConfig::from_json(j);
    REQUIRE(back.hash() == c.hash());
    REQUIRE(back.variant == Variant::no_wce);

    nlohmann::json unknown = c.to_json();
    unknown["learning_rate"] = 0.1;
    REQUIRE_THROWS_WITH(TrainingConfig::from_json(unknown),
                        Catch::Matchers::ContainsSubstring("learning_rate"));
}

TEST_CASE("step A leaves the generator untouched; step B leaves the segmentor untouched") {
    auto pairs = tiny_phantoms(8, 32, 1);
    auto cfg = tiny_config();
    TrainState<float> state(cfg);
    for (int it = 0; it < 3; ++it) {
        auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});
        const auto gen_hash = state.gen.params().value_hash();
        step_a(state, x, y, 0.001, cfg);
        REQUIRE(state.gen.params().value_hash() == gen_hash);

        const auto seg_hash = state.seg.params().value_hash();
        step_b(state, x, y, 0.001, cfg);
        REQUIRE(state.seg.params().value_hash() == seg_hash);
    }
}

TEST_CASE("basic-variant step A loss equals an offline recomputation") {
    auto pairs = tiny_phantoms(4, 32, 2);
    auto cfg = tiny_config(Variant::basic);
    TrainState<float> state(cfg);
    auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});

    // Recompute CE(S(G(x)), y) with the parameters the step saw.
    Tensor<float> gx = state.gen.infer(x);
    Tensor<float> pred = state.seg.infer(gx);
    const double offline = ce_seg_loss(pred, y).value;

    auto rec = step_a(state, x, y, 0.001, cfg);
    REQUIRE(rec.loss.value == Catch::Approx(offline).epsilon(1e-9));
    REQUIRE(rec.loss.components.count("s1") == 1);
}

TEST_CASE("step B breakdown satisfies the total identity") {
    auto pairs = tiny_phantoms(4, 32, 3);
    for (auto variant : {Variant::basic, Variant::full}) {
        auto cfg = tiny_config(variant);
        TrainState<float> state(cfg);
        auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});
        auto rec = step_b(state, x, y, 0.001, cfg);
        const char* res_key = variant_uses_rplus(variant) ? "R+" : "R";
        REQUIRE(rec.loss.components.count("s2") == 1);
        REQUIRE(rec.loss.components.count(res_key) == 1);
        REQUIRE(std::abs(rec.loss.value - (rec.loss.components.at("s2") +
                                           cfg.lambda * rec.loss.components.at(res_key))) < 1e-9);
    }
}

TEST_CASE("repeated step A overfits one batch (segmentor trainability)") {
    auto pairs = tiny_phantoms(4, 32, 4);
    auto cfg = tiny_config(Variant::basic);
    TrainState<float> state(cfg);
    auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});
    double last = 1e9;
    for (int it = 0; it < 200; ++it) last = step_a(state, x, y, 0.001, cfg).loss.value;
    REQUIRE(last < 0.05);
}

TEST_CASE("repeated step B with huge lambda drives the residual toward identity") {
    auto pairs = tiny_phantoms(4, 32, 5);
    auto cfg = tiny_config(Variant::basic);
    cfg.lambda = 1e4;
    TrainState<float> state(cfg);
    auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});
    double res = 1e9;
    for (int it = 0; it < 200; ++it) {
        auto rec = step_b(state, x, y, 0.001, cfg);
        res = rec.loss.components.at("R");
    }
    REQUIRE(res < 1e-3);
}

TEST_CASE("training is deterministic under an identical config and seed") {
    auto pairs = tiny_phantoms(8, 32, 6);
    auto cfg = tiny_config();
    TrainState<float> s1(cfg), s2(cfg);
    auto r1 = train(cfg, pairs, s1);
    auto r2 = train(cfg, pairs, s2);
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
        REQUIRE(std::abs(r1.epochs[e].mean_loss_a - r2.epochs[e].mean_loss_a) <= 1e-6);
        REQUIRE(std::abs(r1.epochs[e].mean_loss_b - r2.epochs[e].mean_loss_b) <= 1e-6);
    }
    REQUIRE(s1.gen.params().value_hash() == s2.gen.params().value_hash());
}

TEST_CASE("variants change only the documented loss substitution") {
    auto pairs = tiny_phantoms(8, 32, 7);
    for (auto v : {Variant::full, Variant::basic, Variant::no_wce, Variant::no_rplus}) {
        auto cfg = tiny_config(v);
        const auto dir = fresh_dir("variant-" + to_string(v));
        TrainState<float> state(cfg);
        train(cfg, pairs, state, dir);

        std::ifstream log(dir / "log.jsonl");
        std::string line;
        int steps = 0;
        char expect = 'A';
        while (std::getline(log, line)) {
            const auto j = nlohmann::json::parse(line);
            if (!j.contains("phase")) continue;  // per-epoch summary record
            const std::string phase = j.at("phase");
            REQUIRE(phase[0] == expect);  // strict A/B alternation
            expect = expect == 'A' ? 'B' : 'A';
            if (phase == "A")
                REQUIRE(j.at("components").contains(variant_uses_wce(v) ? "wce" : "s1"));
            else
                REQUIRE(j.at("components").contains(variant_uses_rplus(v) ? "R+" : "R"));
            ++steps;
        }
        REQUIRE(steps == 2 * 2 * 2);  // epochs * batches * phases
    }
}

TEST_CASE("checkpoints round-trip bytes and restore training exactly") {
    auto pairs = tiny_phantoms(8, 32, 8);
    auto cfg = tiny_config();
    cfg.total_epochs = 4;

    // Uninterrupted run.
    TrainState<float> full(cfg);
    auto rfull = train(cfg, pairs, full);

    // Interrupted at epoch 2, then resumed.
    const auto dir = fresh_dir("resume");
    TrainingConfig cfg2 = cfg;
    cfg2.total_epochs = 2;
    TrainState<float> part(cfg2);
    train(cfg2, pairs, part, dir);

    auto resumed = load_train_checkpoint<float>(dir / "ckpt-1.bin", cfg2);
    REQUIRE(resumed.epochs_done == 2);
    auto rrest = train(cfg, pairs, resumed);

    REQUIRE(resumed.gen.params().value_hash() == full.gen.params().value_hash());
    REQUIRE(resumed.seg.params().value_hash() == full.seg.params().value_hash());
    for (std::size_t e = 0; e < rrest.epochs.size(); ++e) {
        const auto& a = rfull.epochs[2 + e];
        const auto& b = rrest.epochs[e];
        REQUIRE(std::abs(a.mean_loss_a - b.mean_loss_a) <= 1e-6);
        REQUIRE(std::abs(a.mean_loss_b - b.mean_loss_b) <= 1e-6);
    }

    // save -> load -> save is byte-identical.
    save_train_checkpoint(resumed, cfg2, dir / "again.bin");
    auto reload = load_train_checkpoint<float>(dir / "again.bin", cfg2);
    save_train_checkpoint(reload, cfg2, dir / "again2.bin");
    REQUIRE(hash_file(dir / "again.bin") == hash_file(dir / "again2.bin"));

    // A different config refuses to adopt the checkpoint.
    TrainingConfig other = cfg2;
    other.lambda = 2.0;
    REQUIRE_THROWS_WITH(load_train_checkpoint<float>(dir / "ckpt-1.bin", other),
                        Catch::Matchers::ContainsSubstring("different config"));
}

TEST_CASE("non-finite losses abort with a diagnostic record") {
    auto pairs = tiny_phantoms(4, 32, 9);
    auto cfg = tiny_config(Variant::basic);
    TrainState<float> state(cfg);
    state.gen.params().value[100] = std::numeric_limits<float>::quiet_NaN();
    auto [x, y] = make_batch<float>(pairs, {0, 1, 2, 3});
    try {
        step_b(state, x, y, 0.001, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        REQUIRE(e.diagnostic.contains("phase"));
        REQUIRE(e.diagnostic.at("phase") == "B");
    }
}

TEST_CASE("empty-mask slices can be excluded by config") {
    auto pairs = tiny_phantoms(6, 32, 10);
    for (std::size_t k = 0; k < pairs[0].mask.labels.size(); ++k) pairs[0].mask.labels[k] = 0.0f;
    auto cfg = tiny_config();
    cfg.total_epochs = 1;
    cfg.exclude_empty_masks = true;
    const auto dir = fresh_dir("exclude");
    TrainState<float> state(cfg);
    train(cfg, pairs, state, dir);
    std::ifstream log(dir / "log.jsonl");
    std::string line;
    int a_steps = 0;
    while (std::getline(log, line))
        if (line.find("\"phase\":\"A\"") != std::string::npos) ++a_steps;
    REQUIRE(a_steps == 2);  // 5 slices / batch 4 -> 2 batches
}
