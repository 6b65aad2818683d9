#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dama/checkpoint.hpp"
#include "dama/errors.hpp"
#include "dama/losses.hpp"
#include "dama/masking.hpp"
#include "dama/patching.hpp"
#include "dama/rng.hpp"
#include "dama/schedule.hpp"
#include "dama/trainer.hpp"
#include "dama/vit.hpp"

namespace dama {

enum class EvalMode { linear_probe, finetune };

inline std::string to_string(EvalMode m) {
    return m == EvalMode::linear_probe ? "linear_probe" : "finetune";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "linear_probe" || s == "probe") return EvalMode::linear_probe;
    if (s == "finetune") return EvalMode::finetune;
    throw ConfigError("unknown eval mode '" + s + "'");
}

struct EvalConfig {
    EvalMode mode = EvalMode::linear_probe;
    double label_fraction = 1.0;
    int folds = 10;
    int epochs = 30;
    double lr = 1e-2;
    int batch_size = 16;
    std::uint64_t seed = 0;
    int classes = 5;

    void validate() const {
        if (!(label_fraction > 0.0 && label_fraction <= 1.0))
            throw ConfigError("eval: label_fraction must lie in (0, 1]");
        if (folds < 1 || epochs < 1 || batch_size < 1) throw ConfigError("eval: folds/epochs/batch must be >= 1");
        if (classes < 2) throw ConfigError("eval: needs at least two classes");
    }
};

struct EvalReport {
    std::vector<double> fold_acc;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ClassifierHead {
    BasicTensor<float> w, b;

    static ClassifierHead init(int dim, int classes, Rng& rng) {
        ClassifierHead h;
        h.w = BasicTensor<float>::zeros({dim, classes}, true);
        for (auto& v : h.w.value()) v = static_cast<float>(rng.normal() * 0.01);
        h.b = BasicTensor<float>::zeros({classes}, true);
        return h;
    }
};

// Mean-pooled final-block features of a fully visible image, mapped to
// class logits. Shape 1 x classes.
template <typename S>
BasicTensor<S> classify_logits(Tape<S>& tape, const BranchParams<S>& encoder, const BasicTensor<S>& head_w,
                               const BasicTensor<S>& head_b, const PatchGrid& grid) {
    auto enc = encode(tape, encoder, grid, Mask::none(grid.patch_count()));
    auto pooled = mean_over_axis(tape, enc.features, 0);
    auto row = reshape(tape, pooled, {1, encoder.cfg.dim});
    return add_rowvec(tape, matmul(tape, row, head_w), head_b);
}

namespace detail {

inline std::vector<float> pooled_features(const BranchParams<float>& encoder, const PatchGrid& grid) {
    Tape<float> tape;
    auto enc = encode(tape, encoder, grid, Mask::none(grid.patch_count()));
    auto pooled = mean_over_axis(tape, enc.features, 0);
    return pooled.value();
}

struct FoldSplit {
    std::vector<int> train;
    std::vector<int> test;
};

// 60/40 split per fold, deterministic from (seed, fold); the train side is
// then truncated to the label fraction.
inline FoldSplit fold_split(std::size_t n, double label_fraction, std::uint64_t seed, int fold, int classes) {
    Rng rng = Rng::child(seed, static_cast<std::uint64_t>(fold));
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const auto train_n = static_cast<std::size_t>(0.6 * static_cast<double>(n));
    FoldSplit split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_n));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n), order.end());
    const auto keep = static_cast<std::size_t>(label_fraction * static_cast<double>(train_n));
    if (keep < static_cast<std::size_t>(classes))
        throw ConfigError("eval: label fraction keeps " + std::to_string(keep) + " samples, fewer than " +
                          std::to_string(classes) + " classes");
    split.train.resize(keep);
    return split;
}

}  // namespace detail

// Per-fold 60/40 evaluation of an encoder on labeled images. linear_probe
// trains only the head on frozen pooled features; finetune clones the
// encoder per fold and trains everything.
inline EvalReport evaluate(const BranchParams<float>& encoder, const std::vector<MultiChannelImage>& dataset,
                           const EvalConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
    for (const auto& img : dataset)
        if (!img.label.has_value()) throw ConfigError("evaluate: dataset must be labeled");
    const int patch = dataset[0].height / encoder.cfg.grid_h;

    std::vector<PatchGrid> grids;
    grids.reserve(dataset.size());
    for (const auto& img : dataset) grids.push_back(patchify(img, patch));

    // probe mode: the encoder is frozen, features can be computed once
    std::vector<std::vector<float>> cached;
    if (cfg.mode == EvalMode::linear_probe) {
        auto frozen = encoder.clone();
        frozen.set_requires_grad(false);
        cached.reserve(grids.size());
        for (const auto& grid : grids) cached.push_back(detail::pooled_features(frozen, grid));
    }

    const int dim = encoder.cfg.dim;
    EvalReport report;
    for (int fold = 0; fold < cfg.folds; ++fold) {
        auto split = detail::fold_split(dataset.size(), cfg.label_fraction, cfg.seed, fold, cfg.classes);
        Rng rng = Rng::child(cfg.seed ^ 0x5EEDF01Dull, static_cast<std::uint64_t>(fold));
        auto head = ClassifierHead::init(dim, cfg.classes, rng);

        // probe features are standardized with train-split statistics; an
        // affine preprocessing step keeps the head a linear map overall
        std::vector<float> feat_mu(static_cast<std::size_t>(dim), 0.0f);
        std::vector<float> feat_inv(static_cast<std::size_t>(dim), 1.0f);
        if (cfg.mode == EvalMode::linear_probe) {
            for (int idx : split.train)
                for (int d = 0; d < dim; ++d)
                    feat_mu[static_cast<std::size_t>(d)] += cached[static_cast<std::size_t>(idx)][static_cast<std::size_t>(d)];
            for (auto& v : feat_mu) v /= static_cast<float>(split.train.size());
            std::vector<float> var(static_cast<std::size_t>(dim), 0.0f);
            for (int idx : split.train)
                for (int d = 0; d < dim; ++d) {
                    const float c = cached[static_cast<std::size_t>(idx)][static_cast<std::size_t>(d)] -
                                    feat_mu[static_cast<std::size_t>(d)];
                    var[static_cast<std::size_t>(d)] += c * c;
                }
            for (int d = 0; d < dim; ++d)
                feat_inv[static_cast<std::size_t>(d)] =
                    1.0f / (std::sqrt(var[static_cast<std::size_t>(d)] / static_cast<float>(split.train.size())) + 1e-8f);
        }
        auto probe_features = [&](int idx) {
            std::vector<float> f(static_cast<std::size_t>(dim));
            for (int d = 0; d < dim; ++d)
                f[static_cast<std::size_t>(d)] = (cached[static_cast<std::size_t>(idx)][static_cast<std::size_t>(d)] -
                                                  feat_mu[static_cast<std::size_t>(d)]) *
                                                 feat_inv[static_cast<std::size_t>(d)];
            return f;
        };

        BranchParams<float> ft_encoder;
        const bool finetune = cfg.mode == EvalMode::finetune;
        if (finetune) {
            ft_encoder = encoder.clone();
            ft_encoder.set_requires_grad(true);
        }

        const auto steps_per_epoch = static_cast<std::int64_t>(
            (split.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
            static_cast<std::size_t>(cfg.batch_size));
        LrSchedule schedule{cfg.lr, finetune ? 5 * steps_per_epoch : 0, cfg.epochs * steps_per_epoch};

        AdamState opt;
        std::vector<std::pair<std::string, BasicTensor<float>*>> params{{"head.w", &head.w}, {"head.b", &head.b}};
        if (finetune)
            ft_encoder.for_each_param(
                [&](const std::string& n, BasicTensor<float>& t) { params.emplace_back("enc." + n, &t); });

        std::int64_t step = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(split.train);
            for (std::size_t start = 0; start < split.train.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t stop =
                    std::min(split.train.size(), start + static_cast<std::size_t>(cfg.batch_size));
                Tape<float> tape;
                std::vector<int> labels;
                BasicTensor<float> logits;
                for (std::size_t i = start; i < stop; ++i) {
                    const int idx = split.train[i];
                    labels.push_back(static_cast<int>(*dataset[static_cast<std::size_t>(idx)].label));
                    BasicTensor<float> row;
                    if (finetune) {
                        row = classify_logits(tape, ft_encoder, head.w, head.b, grids[static_cast<std::size_t>(idx)]);
                    } else {
                        auto feats = BasicTensor<float>::from({1, dim}, probe_features(idx));
                        row = add_rowvec(tape, matmul(tape, feats, head.w), head.b);
                    }
                    logits = i == start ? row : concat(tape, logits, row);
                }
                auto loss = cross_entropy(tape, logits, labels);
                head.w.zero_grad();
                head.b.zero_grad();
                if (finetune) ft_encoder.zero_grads();
                tape.backward(loss);
                opt.step(params, lr_at(step, schedule), 0.0);
                ++step;
            }
        }

        int correct = 0;
        for (int idx : split.test) {
            std::vector<float> logits;
            if (finetune) {
                Tape<float> tape;
                logits = classify_logits(tape, ft_encoder, head.w, head.b, grids[static_cast<std::size_t>(idx)]).value();
            } else {
                Tape<float> tape;
                auto feats = BasicTensor<float>::from({1, dim}, probe_features(idx));
                logits = add_rowvec(tape, matmul(tape, feats, head.w), head.b).value();
            }
            const int pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
            if (pred == static_cast<int>(*dataset[static_cast<std::size_t>(idx)].label)) ++correct;
        }
        report.fold_acc.push_back(split.test.empty() ? 0.0 : static_cast<double>(correct) / split.test.size());
    }

    double sum = 0;
    for (double a : report.fold_acc) sum += a;
    report.mean = sum / static_cast<double>(report.fold_acc.size());
    double var = 0;
    for (double a : report.fold_acc) var += (a - report.mean) * (a - report.mean);
    report.stddev = std::sqrt(var / static_cast<double>(report.fold_acc.size()));
    return report;
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

struct AblationCell {
    MaskStrategy strategy;
    Coupling coupling;
    double ratio;
    double acc_mean = 0.0;
    double acc_std = 0.0;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::vector<std::string> skipped;  // human-readable reasons
};

// Grid JSON: {"strategies": [...], "couplings": [...], "ratios": [...],
// "config": {...}, "eval": {...}}. One pretrain + evaluate per valid cell.
inline AblationResult ablate(const nlohmann::json& grid, const std::vector<MultiChannelImage>& dataset) {
    BranchConfig base = grid.contains("config") ? BranchConfig::from_json(grid.at("config")) : BranchConfig{};
    EvalConfig eval_cfg;
    if (grid.contains("eval")) {
        const auto& e = grid.at("eval");
        if (e.contains("mode")) eval_cfg.mode = eval_mode_from_string(e.at("mode").get<std::string>());
        if (e.contains("label_fraction")) eval_cfg.label_fraction = e.at("label_fraction").get<double>();
        if (e.contains("folds")) eval_cfg.folds = e.at("folds").get<int>();
        if (e.contains("epochs")) eval_cfg.epochs = e.at("epochs").get<int>();
        if (e.contains("lr")) eval_cfg.lr = e.at("lr").get<double>();
        if (e.contains("batch_size")) eval_cfg.batch_size = e.at("batch_size").get<int>();
        if (e.contains("seed")) eval_cfg.seed = e.at("seed").get<std::uint64_t>();
        if (e.contains("classes")) eval_cfg.classes = e.at("classes").get<int>();
    }

    std::vector<MaskStrategy> strategies;
    for (const auto& s : grid.at("strategies")) strategies.push_back(strategy_from_string(s.get<std::string>()));
    std::vector<Coupling> couplings;
    for (const auto& c : grid.at("couplings")) couplings.push_back(coupling_from_string(c.get<std::string>()));
    std::vector<double> ratios;
    for (const auto& r : grid.at("ratios")) ratios.push_back(r.get<double>());
    if (strategies.empty() || couplings.empty() || ratios.empty())
        throw ConfigError("ablate: grid axes must be non-empty");

    AblationResult result;
    for (const auto strategy : strategies)
        for (const auto coupling : couplings)
            for (const double ratio : ratios) {
                BranchConfig cfg = base;
                cfg.mask_strategy = strategy;
                cfg.coupling = coupling;
                cfg.mask_ratio = ratio;
                try {
                    cfg.validate();
                } catch (const ConfigError& e) {
                    result.skipped.push_back("skipped " + to_string(strategy) + "/" + to_string(coupling) +
                                             "/ratio=" + std::to_string(ratio) + ": " + e.what());
                    continue;
                }
                auto state = init_train_state(cfg, dataset[0].channels);
                pretrain(state, dataset);
                auto report = evaluate(state.branch1, dataset, eval_cfg);
                result.cells.push_back({strategy, coupling, ratio, report.mean, report.stddev});
            }
    return result;
}

inline void write_ablation_csv(const AblationResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "strategy,coupling,mask_ratio,acc_mean,acc_std\n" << std::setprecision(10);
    for (const auto& c : result.cells)
        out << to_string(c.strategy) << ',' << to_string(c.coupling) << ',' << c.ratio << ',' << c.acc_mean << ','
            << c.acc_std << '\n';
}

// ---------------------------------------------------------------------------
// Mask tracing
// ---------------------------------------------------------------------------

struct MaskTraceStep {
    Mask m1;
    std::vector<double> losses;
    Mask m2;
};

// Repeated branch-1 forward + adaptive exchange on one image with fresh
// random first masks, for offline inspection of what the sampler selects.
inline std::vector<MaskTraceStep> mask_trace(TrainState& state, const MultiChannelImage& image, int steps,
                                             Rng& rng) {
    if (steps < 1) throw ConfigError("mask_trace: steps must be >= 1");
    const auto& cfg = state.cfg;
    const auto grid = patchify(image, cfg.patch_size);
    const int n = grid.patch_count();
    auto targets = BasicTensor<float>::from({n, grid.token_dim()}, patch_targets(grid, false));

    std::vector<MaskTraceStep> rows;
    rows.reserve(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        MaskTraceStep row;
        row.m1 = random_mask(n, cfg.mask_ratio, rng);
        Tape<float> tape;
        auto enc = encode(tape, state.branch1, grid, row.m1);
        auto dec = decode(tape, state.branch1, enc.features, row.m1);
        auto pl = pixel_loss(tape, dec.pixels, targets, row.m1);
        row.losses = pl.per_patch;
        row.m2 = adaptive_mask(row.m1, row.losses, cfg.mask_ratio, cfg.overlap_ratio);
        rows.push_back(std::move(row));
    }
    return rows;
}

// CSV rows: step,field,v0,...,v{L-1} with fields m1, loss, m2.
inline void write_mask_trace_csv(const std::vector<MaskTraceStep>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "step,field,values...\n" << std::setprecision(10);
    for (std::size_t s = 0; s < rows.size(); ++s) {
        out << s << ",m1";
        for (auto b : rows[s].m1.bits) out << ',' << static_cast<int>(b);
        out << '\n' << s << ",loss";
        for (double v : rows[s].losses) out << ',' << v;
        out << '\n' << s << ",m2";
        for (auto b : rows[s].m2.bits) out << ',' << static_cast<int>(b);
        out << '\n';
    }
}

}  // namespace dama
