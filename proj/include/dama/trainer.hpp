#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dama/errors.hpp"
#include "dama/losses.hpp"
#include "dama/masking.hpp"
#include "dama/patching.hpp"
#include "dama/rng.hpp"
#include "dama/schedule.hpp"
#include "dama/synth.hpp"
#include "dama/tensor.hpp"
#include "dama/vit.hpp"

namespace dama {

enum class Coupling { student_ema, shared_weights, two_students };
enum class MaskStrategy { random_overlap, adaptive_no_overlap, adaptive_overlap };

inline std::string to_string(Coupling c) {
    switch (c) {
        case Coupling::student_ema: return "student_ema";
        case Coupling::shared_weights: return "shared_weights";
        case Coupling::two_students: return "two_students";
    }
    throw ContractError("unknown coupling");
}

inline std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random_overlap: return "random_overlap";
        case MaskStrategy::adaptive_no_overlap: return "adaptive_no_overlap";
        case MaskStrategy::adaptive_overlap: return "adaptive_overlap";
    }
    throw ContractError("unknown mask strategy");
}

inline Coupling coupling_from_string(const std::string& s) {
    if (s == "student_ema") return Coupling::student_ema;
    if (s == "shared_weights") return Coupling::shared_weights;
    if (s == "two_students") return Coupling::two_students;
    throw ConfigError("unknown coupling '" + s + "'");
}

inline MaskStrategy strategy_from_string(const std::string& s) {
    if (s == "random_overlap") return MaskStrategy::random_overlap;
    if (s == "adaptive_no_overlap") return MaskStrategy::adaptive_no_overlap;
    if (s == "adaptive_overlap") return MaskStrategy::adaptive_overlap;
    throw ConfigError("unknown mask strategy '" + s + "'");
}

// Full pretraining configuration; serialized as the config JSON document.
struct BranchConfig {
    Coupling coupling = Coupling::two_students;
    MaskStrategy mask_strategy = MaskStrategy::adaptive_overlap;
    double mask_ratio = 0.8;
    double overlap_ratio = 0.5;
    double alpha = 1.0;
    double beta = 2.0;
    int k_blocks = 6;
    double lr = 1.5e-4;
    double weight_decay = 0.05;
    int warmup_epochs = 40;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;
    int image_size = 64;
    int patch_size = 8;

    struct Model {
        int dim = 64;
        int depth = 6;
        int heads = 4;
        int decoder_dim = 48;
        int decoder_depth = 2;
    } model;

    void validate() const {
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("config: mask_ratio must lie in (0, 1)");
        if (!(overlap_ratio >= 0.0 && overlap_ratio <= 1.0))
            throw ConfigError("config: overlap_ratio must lie in [0, 1]");
        // all second-branch strategies rely on the same mask exchange
        // arithmetic, which needs ratio >= 0.5
        if (mask_ratio < 0.5)
            throw ConfigError("config: mask strategies require mask_ratio >= 0.5");
        if (alpha < 0.0) throw ConfigError("config: alpha must be non-negative");
        if (beta <= 0.0) throw ConfigError("config: beta must be positive");
        if (k_blocks < 1 || k_blocks > model.depth) throw ConfigError("config: k_blocks must lie in [1, depth]");
        if (epochs < 1 || batch_size < 1) throw ConfigError("config: epochs and batch_size must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs > epochs)
            throw ConfigError("config: warmup_epochs must lie in [0, epochs]");
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("config: image_size must be divisible by patch_size");
    }

    ViTConfig vit_config(int channels) const {
        ViTConfig v;
        v.grid_h = image_size / patch_size;
        v.grid_w = image_size / patch_size;
        v.token_dim = patch_size * patch_size * channels;
        v.dim = model.dim;
        v.depth = model.depth;
        v.heads = model.heads;
        v.mlp_ratio = 4;
        v.decoder_dim = model.decoder_dim;
        v.decoder_depth = model.decoder_depth;
        v.target_blocks = k_blocks;
        return v;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"coupling", to_string(coupling)},
                              {"mask_strategy", to_string(mask_strategy)},
                              {"mask_ratio", mask_ratio},
                              {"overlap_ratio", overlap_ratio},
                              {"alpha", alpha},
                              {"beta", beta},
                              {"k_blocks", k_blocks},
                              {"lr", lr},
                              {"weight_decay", weight_decay},
                              {"warmup_epochs", warmup_epochs},
                              {"epochs", epochs},
                              {"batch_size", batch_size},
                              {"seed", seed},
                              {"image_size", image_size},
                              {"patch_size", patch_size},
                              {"model",
                               {{"dim", model.dim},
                                {"depth", model.depth},
                                {"heads", model.heads},
                                {"decoder_dim", model.decoder_dim},
                                {"decoder_depth", model.decoder_depth}}}};
    }

    static BranchConfig from_json(const nlohmann::json& j) {
        BranchConfig cfg;
        try {
            if (j.contains("coupling")) cfg.coupling = coupling_from_string(j.at("coupling").get<std::string>());
            if (j.contains("mask_strategy"))
                cfg.mask_strategy = strategy_from_string(j.at("mask_strategy").get<std::string>());
            if (j.contains("mask_ratio")) cfg.mask_ratio = j.at("mask_ratio").get<double>();
            if (j.contains("overlap_ratio")) cfg.overlap_ratio = j.at("overlap_ratio").get<double>();
            if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
            if (j.contains("beta")) cfg.beta = j.at("beta").get<double>();
            if (j.contains("k_blocks")) cfg.k_blocks = j.at("k_blocks").get<int>();
            if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
            if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
            if (j.contains("warmup_epochs")) cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
            if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
            if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
            if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
            if (j.contains("image_size")) cfg.image_size = j.at("image_size").get<int>();
            if (j.contains("patch_size")) cfg.patch_size = j.at("patch_size").get<int>();
            if (j.contains("model")) {
                const auto& m = j.at("model");
                if (m.contains("dim")) cfg.model.dim = m.at("dim").get<int>();
                if (m.contains("depth")) cfg.model.depth = m.at("depth").get<int>();
                if (m.contains("heads")) cfg.model.heads = m.at("heads").get<int>();
                if (m.contains("decoder_dim")) cfg.model.decoder_dim = m.at("decoder_dim").get<int>();
                if (m.contains("decoder_depth")) cfg.model.decoder_depth = m.at("decoder_depth").get<int>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        cfg.validate();
        return cfg;
    }
};

// Adam with decoupled weight decay; moments are keyed by parameter name so
// they survive checkpoints.
struct AdamState {
    struct Moments {
        std::vector<float> m, v;
    };
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::unordered_map<std::string, Moments> slots;

    void step(const std::vector<std::pair<std::string, BasicTensor<float>*>>& params, double lr,
              double weight_decay) {
        ++t;
        const float c1 = static_cast<float>(1.0 - std::pow(beta1, static_cast<double>(t)));
        const float c2 = static_cast<float>(1.0 - std::pow(beta2, static_cast<double>(t)));
        for (const auto& [name, tensor] : params) {
            auto& slot = slots[name];
            auto& value = tensor->value();
            if (slot.m.empty()) {
                slot.m.assign(value.size(), 0.0f);
                slot.v.assign(value.size(), 0.0f);
            }
            const bool has_grad = tensor->has_grad();
            const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
            const float lrf = static_cast<float>(lr), wdf = static_cast<float>(weight_decay);
            const float epsf = static_cast<float>(eps);
            for (std::size_t i = 0; i < value.size(); ++i) {
                const float g = has_grad ? tensor->grad()[i] : 0.0f;
                slot.m[i] = b1 * slot.m[i] + (1.0f - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0f - b2) * g * g;
                const float mhat = slot.m[i] / c1;
                const float vhat = slot.v[i] / c2;
                value[i] -= lrf * (mhat / (std::sqrt(vhat) + epsf) + wdf * value[i]);
            }
        }
    }
};

struct MetricsRow {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double lambda = 0.0;
    double lp1 = 0.0;
    double lp2 = 0.0;
    double lf = 0.0;
    double total = 0.0;
};

struct TrainState {
    BranchConfig cfg;
    int channels = 7;
    BranchParams<float> branch1;
    BranchParams<float> branch2;  // aliases branch1 under shared_weights
    AdamState opt;
    LrSchedule schedule;
    std::int64_t step = 0;
    int epoch = 0;
    Rng rng;
    std::vector<MetricsRow> metrics;

    bool shares_weights() const { return cfg.coupling == Coupling::shared_weights; }

    std::vector<std::pair<std::string, BasicTensor<float>*>> trainable_params() {
        std::vector<std::pair<std::string, BasicTensor<float>*>> out;
        branch1.for_each_param([&](const std::string& n, BasicTensor<float>& t) { out.emplace_back("b1." + n, &t); });
        if (cfg.coupling == Coupling::two_students)
            branch2.for_each_param([&](const std::string& n, BasicTensor<float>& t) { out.emplace_back("b2." + n, &t); });
        return out;
    }
};

inline TrainState init_train_state(const BranchConfig& cfg, int channels) {
    cfg.validate();
    TrainState state;
    state.cfg = cfg;
    state.channels = channels;
    state.rng = Rng(cfg.seed);
    const auto vit = cfg.vit_config(channels);
    state.branch1 = BranchParams<float>::init(vit, state.rng);
    switch (cfg.coupling) {
        case Coupling::shared_weights:
            state.branch2 = state.branch1;  // same tensors, applied twice
            break;
        case Coupling::student_ema:
            state.branch2 = state.branch1.clone();
            state.branch2.set_requires_grad(false);
            break;
        case Coupling::two_students:
            state.branch2 = BranchParams<float>::init(vit, state.rng);
            break;
    }
    state.schedule = LrSchedule{cfg.lr, 0, 1};
    return state;
}

inline void set_schedule_from_dataset(TrainState& state, std::size_t dataset_size) {
    if (dataset_size == 0) throw ConfigError("pretrain: dataset is empty");
    const auto steps_per_epoch = static_cast<std::int64_t>(
        (dataset_size + static_cast<std::size_t>(state.cfg.batch_size) - 1) /
        static_cast<std::size_t>(state.cfg.batch_size));
    state.schedule = LrSchedule{state.cfg.lr, steps_per_epoch * state.cfg.warmup_epochs,
                                steps_per_epoch * state.cfg.epochs};
}

// One optimization step over a batch, following the two-branch pipeline:
// random mask -> branch-1 reconstruction -> per-patch losses -> second mask
// -> branch-2 reconstruction -> feature regression -> combined backward ->
// Adam -> optional EMA.
inline LossReport train_step(TrainState& state, const std::vector<const MultiChannelImage*>& batch) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const auto& cfg = state.cfg;
    const auto vit = cfg.vit_config(state.channels);
    const int n_patches = vit.patch_count();
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    Tape<float> tape;
    BasicTensor<float> lp1_sum, lp2_sum, lf_sum;
    bool first = true;
    LossReport report;
    report.per_patch_1.assign(static_cast<std::size_t>(n_patches), 0.0);

    for (const MultiChannelImage* image : batch) {
        const auto m1 = random_mask(n_patches, cfg.mask_ratio, state.rng);
        // the random baseline consumes its randomness here so the rng
        // stream does not depend on loss values
        Mask m2_random;
        if (cfg.mask_strategy == MaskStrategy::random_overlap)
            m2_random = random_overlap_mask(m1, cfg.mask_ratio, cfg.overlap_ratio, state.rng);

        const auto grid = patchify(*image, cfg.patch_size);
        auto targets = BasicTensor<float>::from({n_patches, grid.token_dim()}, patch_targets(grid, false));

        auto enc1 = encode(tape, state.branch1, grid, m1);
        auto dec1 = decode(tape, state.branch1, enc1.features, m1);
        auto pl1 = pixel_loss(tape, dec1.pixels, targets, m1);

        Mask m2;
        switch (cfg.mask_strategy) {
            case MaskStrategy::random_overlap: m2 = m2_random; break;
            case MaskStrategy::adaptive_no_overlap:
                m2 = adaptive_mask(m1, pl1.per_patch, cfg.mask_ratio, 0.0);
                break;
            case MaskStrategy::adaptive_overlap:
                m2 = adaptive_mask(m1, pl1.per_patch, cfg.mask_ratio, cfg.overlap_ratio);
                break;
        }

        auto enc2 = encode(tape, state.branch2, grid, m2);
        auto dec2 = decode(tape, state.branch2, enc2.features, m2);
        auto pl2 = pixel_loss(tape, dec2.pixels, targets, m2);

        auto target = feature_target(enc2.block_feats, cfg.k_blocks);
        auto pred = feature_predict(tape, state.branch1, dec1.features, enc2.visible);
        auto lf = smooth_l1(tape, pred, target, cfg.beta);

        for (int i = 0; i < n_patches; ++i)
            report.per_patch_1[static_cast<std::size_t>(i)] += pl1.per_patch[static_cast<std::size_t>(i)] * inv_batch;

        if (first) {
            lp1_sum = pl1.scalar;
            lp2_sum = pl2.scalar;
            lf_sum = lf;
            first = false;
        } else {
            lp1_sum = add(tape, lp1_sum, pl1.scalar);
            lp2_sum = add(tape, lp2_sum, pl2.scalar);
            lf_sum = add(tape, lf_sum, lf);
        }
    }

    auto lp1 = scale(tape, lp1_sum, inv_batch);
    auto lp2 = scale(tape, lp2_sum, inv_batch);
    auto lf = scale(tape, lf_sum, inv_batch);
    BasicTensor<float> total;
    try {
        total = total_loss(tape, lp1, lp2, lf, cfg.alpha);
    } catch (const NumericError&) {
        throw NumericError("non-finite loss at step " + std::to_string(state.step));
    }
    if (!std::isfinite(static_cast<double>(total.item())))
        throw NumericError("non-finite loss at step " + std::to_string(state.step));

    state.branch1.zero_grads();
    state.branch2.zero_grads();
    tape.backward(total);

    const double lr = lr_at(state.step, state.schedule);
    auto params = state.trainable_params();
    state.opt.step(params, lr, cfg.weight_decay);

    const double lambda = lambda_at(state.step, state.schedule.total_steps);
    if (cfg.coupling == Coupling::student_ema) ema_update(state.branch2, state.branch1, lambda);

    report.lp1 = static_cast<double>(lp1.item());
    report.lp2 = static_cast<double>(lp2.item());
    report.lf = static_cast<double>(lf.item());
    report.total = static_cast<double>(total.item());

    state.metrics.push_back({state.step, state.epoch, lr, lambda, report.lp1, report.lp2, report.lf, report.total});
    ++state.step;
    return report;
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "step,epoch,lr,lambda,L_p1,L_p2,L_f,L_total\n";
    out << std::setprecision(17);
    for (const auto& r : rows)
        out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.lambda << ',' << r.lp1 << ',' << r.lp2 << ','
            << r.lf << ',' << r.total << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dama
