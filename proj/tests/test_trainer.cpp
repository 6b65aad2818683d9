#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dama/checkpoint.hpp"
#include "dama/schedule.hpp"
#include "dama/trainer.hpp"
#include "support/tiny.hpp"

using dama::BranchConfig;
using dama::Coupling;
using dama::init_train_state;
using dama::MaskStrategy;
using dama::TrainState;
using testsupport::as_batch;
using testsupport::tiny_config;
using testsupport::tiny_dataset;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

std::vector<float> flatten_params(dama::BranchParams<float>& p) {
    std::vector<float> flat;
    p.for_each_param([&](const std::string&, dama::BasicTensor<float>& t) {
        flat.insert(flat.end(), t.value().begin(), t.value().end());
    });
    return flat;
}

}  // namespace

TEST_CASE("lr schedule endpoints") {
    dama::LrSchedule s{1.5e-4, 40, 500};
    REQUIRE(dama::lr_at(0, s) == 0.0);
    REQUIRE_THAT(dama::lr_at(40, s), Catch::Matchers::WithinRel(1.5e-4, 1e-12));
    REQUIRE_THAT(dama::lr_at(500, s), Catch::Matchers::WithinAbs(0.0, 1e-18));
    // monotone rise through warmup
    REQUIRE(dama::lr_at(20, s) < dama::lr_at(40, s));
    REQUIRE(dama::lr_at(20, s) > 0.0);
}

TEST_CASE("lambda schedule endpoints and midpoint") {
    REQUIRE_THAT(dama::lambda_at(0, 1000), Catch::Matchers::WithinRel(0.996, 1e-12));
    REQUIRE_THAT(dama::lambda_at(1000, 1000), Catch::Matchers::WithinRel(1.0, 1e-12));
    REQUIRE_THAT(dama::lambda_at(500, 1000), Catch::Matchers::WithinAbs(0.998, 1e-12));
}

TEST_CASE("two identical seeded runs produce identical metrics") {
    auto cfg = tiny_config();
    auto dataset = tiny_dataset(8, 3);
    auto run = [&] {
        auto state = init_train_state(cfg, 7);
        dama::pretrain(state, dataset);
        return state.metrics;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].total == b[i].total);
        REQUIRE(a[i].lp1 == b[i].lp1);
        REQUIRE(a[i].lp2 == b[i].lp2);
        REQUIRE(a[i].lf == b[i].lf);
        REQUIRE(a[i].lr == b[i].lr);
    }
}

TEST_CASE("shared_weights couples both branches through one parameter set") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::shared_weights;
    auto state = init_train_state(cfg, 7);
    REQUIRE(state.branch1.embed_w.same_storage(state.branch2.embed_w));
    REQUIRE(state.trainable_params().size() == 61);  // one b1 set only

    auto dataset = tiny_dataset(4, 5);
    dama::set_schedule_from_dataset(state, dataset.size());
    auto report = dama::train_step(state, as_batch(dataset, 0, 4));
    REQUIRE(std::isfinite(report.total));
    // still aliased after the update
    REQUIRE(state.branch1.embed_w.same_storage(state.branch2.embed_w));
}

TEST_CASE("student_ema teacher receives no gradients and moves only via ema") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::student_ema;
    cfg.warmup_epochs = 0;  // a warmed-up step 0 has lr == 0 and moves nothing
    auto state = init_train_state(cfg, 7);
    auto dataset = tiny_dataset(4, 6);
    dama::set_schedule_from_dataset(state, dataset.size());

    auto teacher_before = flatten_params(state.branch2);
    auto student_before = flatten_params(state.branch1);
    dama::train_step(state, as_batch(dataset, 0, 4));

    bool teacher_has_grad = false;
    state.branch2.for_each_param(
        [&](const std::string&, dama::BasicTensor<float>& t) { teacher_has_grad |= t.has_grad(); });
    REQUIRE_FALSE(teacher_has_grad);

    // teacher after one step == lambda * teacher + (1 - lambda) * student_after
    const double lambda = dama::lambda_at(0, state.schedule.total_steps);
    auto student_after = flatten_params(state.branch1);
    auto teacher_after = flatten_params(state.branch2);
    for (std::size_t i = 0; i < teacher_after.size(); ++i) {
        const float expect = static_cast<float>(lambda) * teacher_before[i] +
                             (1.0f - static_cast<float>(lambda)) * student_after[i];
        REQUIRE_THAT(teacher_after[i], Catch::Matchers::WithinAbs(expect, 1e-6f));
    }
    REQUIRE(student_after != student_before);  // the student did train
}

TEST_CASE("ema freeze: as lambda approaches 1 the teacher stops moving") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::student_ema;
    auto state = init_train_state(cfg, 7);
    auto dataset = tiny_dataset(4, 7);
    dama::set_schedule_from_dataset(state, dataset.size());

    auto delta_norm = [&](double lambda) {
        auto before = flatten_params(state.branch2);
        dama::ema_update(state.branch2, state.branch1, lambda);
        auto after = flatten_params(state.branch2);
        double norm = 0;
        for (std::size_t i = 0; i < before.size(); ++i)
            norm += (after[i] - before[i]) * static_cast<double>(after[i] - before[i]);
        return std::sqrt(norm);
    };
    dama::train_step(state, as_batch(dataset, 0, 4));  // make teacher and student differ
    const double d99 = delta_norm(0.99);
    const double d999 = delta_norm(0.999);
    const double d1 = delta_norm(1.0);
    REQUIRE(d99 > d999);
    REQUIRE(d1 == 0.0);
}

TEST_CASE("two_students keeps branch parameter sets independent") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::two_students;
    auto state = init_train_state(cfg, 7);
    REQUIRE_FALSE(state.branch1.embed_w.same_storage(state.branch2.embed_w));
    REQUIRE(state.trainable_params().size() == 122);  // b1 + b2

    // with alpha = 0 the two branches optimize their own reconstructions
    cfg.alpha = 0.0;
    auto decoupled = init_train_state(cfg, 7);
    auto dataset = tiny_dataset(4, 8);
    dama::set_schedule_from_dataset(decoupled, dataset.size());
    auto report = dama::train_step(decoupled, as_batch(dataset, 0, 4));
    REQUIRE(report.total == report.lp1 + report.lp2);
}

TEST_CASE("training reduces the loss on a small run") {
    auto cfg = tiny_config();
    cfg.epochs = 8;
    cfg.warmup_epochs = 1;
    auto dataset = tiny_dataset(40, 9);
    auto state = init_train_state(cfg, 7);
    dama::pretrain(state, dataset);
    const auto& m = state.metrics;
    const std::size_t tenth = std::max<std::size_t>(1, m.size() / 10);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < tenth; ++i) first += m[i].total;
    for (std::size_t i = m.size() - tenth; i < m.size(); ++i) last += m[i].total;
    INFO("first " << first / tenth << " last " << last / tenth);
    REQUIRE(last / tenth < first / tenth);
}

TEST_CASE("a poisoned parameter aborts with the step index") {
    auto cfg = tiny_config();
    auto state = init_train_state(cfg, 7);
    auto dataset = tiny_dataset(4, 10);
    dama::set_schedule_from_dataset(state, dataset.size());
    state.branch1.embed_w.value()[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_MATCHES(dama::train_step(state, as_batch(dataset, 0, 4)), dama::NumericError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("step 0")));
}

TEST_CASE("metrics csv carries the exact header and one row per step") {
    auto cfg = tiny_config();
    auto dataset = tiny_dataset(8, 12);
    auto state = init_train_state(cfg, 7);
    TempFile tmp("dama_test_metrics.csv");
    dama::PretrainOptions opts;
    opts.metrics_path = tmp.path;
    dama::pretrain(state, dataset, opts);

    std::ifstream in(tmp.path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "step,epoch,lr,lambda,L_p1,L_p2,L_f,L_total");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    REQUIRE(rows == state.metrics.size());
    REQUIRE(rows == 4);  // 8 images / batch 4 * 2 epochs
}

TEST_CASE("checkpoint round-trip restores parameters, moments and rng bit-exactly") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::two_students;
    auto dataset = tiny_dataset(8, 13);
    auto state = init_train_state(cfg, 7);
    dama::pretrain(state, dataset);

    TempFile tmp("dama_test_ckpt.bin");
    dama::save_checkpoint(state, tmp.path);
    auto loaded = dama::load_checkpoint(tmp.path);

    REQUIRE(flatten_params(loaded.branch1) == flatten_params(state.branch1));
    REQUIRE(flatten_params(loaded.branch2) == flatten_params(state.branch2));
    REQUIRE(loaded.step == state.step);
    REQUIRE(loaded.epoch == state.epoch);
    REQUIRE(loaded.opt.t == state.opt.t);
    REQUIRE(loaded.rng == state.rng);
    for (const auto& [name, slot] : state.opt.slots) {
        REQUIRE(loaded.opt.slots.count(name) == 1);
        REQUIRE(loaded.opt.slots.at(name).m == slot.m);
        REQUIRE(loaded.opt.slots.at(name).v == slot.v);
    }
}

TEST_CASE("resume reproduces the uninterrupted run step for step") {
    auto cfg = tiny_config();
    cfg.epochs = 3;
    auto dataset = tiny_dataset(12, 14);  // 3 steps per epoch

    auto full = init_train_state(cfg, 7);
    dama::pretrain(full, dataset);
    REQUIRE(full.metrics.size() == 9);

    TempFile tmp("dama_test_resume.bin");
    auto partial = init_train_state(cfg, 7);
    dama::PretrainOptions stop;
    stop.stop_after_epoch = 1;
    stop.checkpoint_path = tmp.path;
    dama::pretrain(partial, dataset, stop);
    REQUIRE(partial.metrics.size() == 3);

    auto resumed = dama::load_checkpoint(tmp.path);
    dama::pretrain(resumed, dataset);
    REQUIRE(resumed.metrics.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto& a = full.metrics[3 + i];
        const auto& b = resumed.metrics[i];
        REQUIRE(a.step == b.step);
        REQUIRE(a.total == b.total);
        REQUIRE(a.lp1 == b.lp1);
        REQUIRE(a.lp2 == b.lp2);
        REQUIRE(a.lf == b.lf);
    }
}

TEST_CASE("corrupt checkpoints and version mismatches are rejected") {
    auto cfg = tiny_config();
    auto state = init_train_state(cfg, 7);
    TempFile tmp("dama_test_ckpt_bad.bin");
    dama::save_checkpoint(state, tmp.path);

    SECTION("bad magic") {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
        f.close();
        REQUIRE_THROWS_AS(dama::load_checkpoint(tmp.path), dama::FormatError);
    }
    SECTION("future version") {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(static_cast<char>(9));
        f.close();
        try {
            dama::load_checkpoint(tmp.path);
            FAIL("expected FormatError");
        } catch (const dama::FormatError& e) {
            REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("version"));
        }
    }
    SECTION("truncation") {
        auto size = std::filesystem::file_size(tmp.path);
        std::filesystem::resize_file(tmp.path, size / 2);
        REQUIRE_THROWS_AS(dama::load_checkpoint(tmp.path), dama::FormatError);
    }
}

TEST_CASE("config json round-trip and validation") {
    auto cfg = tiny_config();
    cfg.coupling = Coupling::student_ema;
    cfg.mask_strategy = MaskStrategy::adaptive_no_overlap;
    auto j = cfg.to_json();
    auto back = BranchConfig::from_json(j);
    REQUIRE(back.coupling == cfg.coupling);
    REQUIRE(back.mask_strategy == cfg.mask_strategy);
    REQUIRE(back.mask_ratio == cfg.mask_ratio);
    REQUIRE(back.model.dim == cfg.model.dim);

    auto bad = j;
    bad["mask_ratio"] = 0.4;
    REQUIRE_THROWS_AS(BranchConfig::from_json(bad), dama::ConfigError);
    bad = j;
    bad["coupling"] = "three_students";
    REQUIRE_THROWS_AS(BranchConfig::from_json(bad), dama::ConfigError);
}

TEST_CASE("default config mirrors the published defaults") {
    BranchConfig cfg;
    REQUIRE(cfg.mask_ratio == 0.8);
    REQUIRE(cfg.overlap_ratio == 0.5);
    REQUIRE(cfg.alpha == 1.0);
    REQUIRE(cfg.beta == 2.0);
    REQUIRE(cfg.k_blocks == 6);
    REQUIRE(cfg.lr == 1.5e-4);
    REQUIRE(cfg.weight_decay == 0.05);
    REQUIRE(cfg.warmup_epochs == 40);
}
