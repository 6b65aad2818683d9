// dama: command-line front end for synthetic data generation, masked
// autoencoder pretraining, downstream evaluation, ablation sweeps and mask
// tracing.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric abort.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dama/checkpoint.hpp"
#include "dama/errors.hpp"
#include "dama/eval.hpp"
#include "dama/synth.hpp"
#include "dama/trainer.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dama::ConfigError("cannot open config file: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw dama::ConfigError("invalid json in " + path + ": " + e.what());
    }
}

dama::SynthConfig synth_config_from_json(const nlohmann::json& j) {
    dama::SynthConfig cfg;
    try {
        if (j.contains("image_size")) {
            cfg.height = j.at("image_size").get<int>();
            cfg.width = cfg.height;
        }
        if (j.contains("height")) cfg.height = j.at("height").get<int>();
        if (j.contains("width")) cfg.width = j.at("width").get<int>();
        if (j.contains("channels")) cfg.channels = j.at("channels").get<int>();
        if (j.contains("classes")) cfg.classes = j.at("classes").get<int>();
        if (j.contains("min_cells")) cfg.min_cells = j.at("min_cells").get<int>();
        if (j.contains("max_cells")) cfg.max_cells = j.at("max_cells").get<int>();
        if (j.contains("min_radius")) cfg.min_radius = j.at("min_radius").get<double>();
        if (j.contains("max_radius")) cfg.max_radius = j.at("max_radius").get<double>();
        if (j.contains("noise_sigma")) cfg.noise_sigma = j.at("noise_sigma").get<double>();
        if (j.contains("center_amplitude")) cfg.center_amplitude = j.at("center_amplitude").get<double>();
        if (j.contains("distractor_amplitude")) cfg.distractor_amplitude = j.at("distractor_amplitude").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw dama::ConfigError(std::string("gen config: ") + e.what());
    }
    return cfg;
}

int run_gen(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed) {
    auto j = load_json(config_path);
    auto cfg = synth_config_from_json(j);
    if (seed) cfg.seed = *seed;
    const int count = j.contains("count") ? j.at("count").get<int>() : 100;
    auto images = dama::generate(cfg, count);
    dama::write_mcs(out_path, images);
    std::cout << "wrote " << images.size() << " images (" << cfg.height << "x" << cfg.width << "x" << cfg.channels
              << ") to " << out_path << "\n";
    return 0;
}

int run_pretrain(const std::string& config_path, const std::string& data_path, const std::string& out_path,
                 const std::string& metrics_path, int save_interval, std::optional<std::uint64_t> seed) {
    auto cfg = dama::BranchConfig::from_json(load_json(config_path));
    if (seed) cfg.seed = *seed;
    auto dataset = dama::read_mcs(data_path);
    if (dataset.empty()) throw dama::ConfigError("pretrain: empty dataset");
    auto state = dama::init_train_state(cfg, dataset[0].channels);

    dama::PretrainOptions opts;
    opts.checkpoint_path = out_path;
    opts.metrics_path = metrics_path;
    opts.save_interval_epochs = save_interval;
    dama::pretrain(state, dataset, opts);

    const auto& last = state.metrics.back();
    std::cout << "pretrained " << cfg.epochs << " epochs (" << state.step << " steps); final L_total " << last.total
              << " (L_p1 " << last.lp1 << ", L_p2 " << last.lp2 << ", L_f " << last.lf << ")\n"
              << "checkpoint: " << out_path << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& mode, double fraction,
             int folds, int epochs, double lr, std::optional<std::uint64_t> seed) {
    auto state = dama::load_checkpoint(ckpt_path);
    auto dataset = dama::read_mcs(data_path);

    dama::EvalConfig cfg;
    cfg.mode = dama::eval_mode_from_string(mode);
    cfg.label_fraction = fraction;
    cfg.folds = folds;
    cfg.epochs = epochs > 0 ? epochs : (cfg.mode == dama::EvalMode::linear_probe ? 50 : 20);
    cfg.lr = lr > 0 ? lr : (cfg.mode == dama::EvalMode::linear_probe ? 1e-2 : 1e-3);
    if (seed) cfg.seed = *seed;

    auto report = dama::evaluate(state.branch1, dataset, cfg);
    std::cout << "mode " << dama::to_string(cfg.mode) << ", fraction " << cfg.label_fraction << ", folds "
              << cfg.folds << "\n";
    for (std::size_t i = 0; i < report.fold_acc.size(); ++i)
        std::cout << "fold " << i << ": " << report.fold_acc[i] << "\n";
    std::cout << "mean accuracy " << report.mean << " +- " << report.stddev << "\n";
    return 0;
}

int run_ablate(const std::string& grid_path, const std::string& data_path, const std::string& out_path,
               std::optional<std::uint64_t> seed) {
    auto grid = load_json(grid_path);
    if (seed) {
        if (!grid.contains("config")) grid["config"] = nlohmann::json::object();
        grid["config"]["seed"] = *seed;
        if (!grid.contains("eval")) grid["eval"] = nlohmann::json::object();
        grid["eval"]["seed"] = *seed;
    }
    auto dataset = dama::read_mcs(data_path);
    auto result = dama::ablate(grid, dataset);
    for (const auto& line : result.skipped) std::cerr << line << "\n";
    dama::write_ablation_csv(result, out_path);
    std::cout << "wrote " << result.cells.size() << " cells to " << out_path << " (" << result.skipped.size()
              << " skipped)\n";
    return 0;
}

int run_mask_trace(const std::string& ckpt_path, const std::string& data_path, int steps, int index,
                   const std::string& out_path, std::optional<std::uint64_t> seed) {
    auto state = dama::load_checkpoint(ckpt_path);
    auto dataset = dama::read_mcs(data_path);
    if (index < 0 || index >= static_cast<int>(dataset.size()))
        throw dama::ConfigError("mask-trace: image index out of range");
    dama::Rng rng(seed ? *seed : 0);
    auto rows = dama::mask_trace(state, dataset[static_cast<std::size_t>(index)], steps, rng);
    dama::write_mask_trace_csv(rows, out_path);
    std::cout << "traced " << rows.size() << " steps to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-loss adaptive masked autoencoder workbench"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "override the configured seed")->capture_default_str();

    std::string config_path, data_path, out_path, metrics_path, grid_path, ckpt_path;
    std::string mode = "probe";
    double fraction = 1.0;
    int folds = 10, epochs = 0, steps = 32, index = 0, save_interval = 0;
    double lr = 0.0;

    auto* gen = app.add_subcommand("gen", "generate a synthetic labeled dataset");
    gen->add_option("--config", config_path, "synthesis config json")->required();
    gen->add_option("--out", out_path, "output .mcs path")->required();

    auto* pre = app.add_subcommand("pretrain", "run self-supervised pretraining");
    pre->add_option("--config", config_path, "training config json")->required();
    pre->add_option("--data", data_path, "input .mcs dataset")->required();
    pre->add_option("--out", out_path, "output checkpoint path")->required();
    pre->add_option("--metrics", metrics_path, "per-step metrics csv");
    pre->add_option("--save-interval", save_interval, "checkpoint every N epochs");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on labeled data");
    ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    ev->add_option("--data", data_path, "labeled .mcs dataset")->required();
    ev->add_option("--mode", mode, "probe|finetune")->capture_default_str();
    ev->add_option("--fraction", fraction, "label fraction in (0, 1]")->capture_default_str();
    ev->add_option("--folds", folds, "number of folds")->capture_default_str();
    ev->add_option("--epochs", epochs, "head training epochs (0 = mode default)");
    ev->add_option("--lr", lr, "head learning rate (0 = mode default)");

    auto* ab = app.add_subcommand("ablate", "sweep strategies x couplings x ratios");
    ab->add_option("--grid", grid_path, "grid json")->required();
    ab->add_option("--data", data_path, "labeled .mcs dataset")->required();
    ab->add_option("--out", out_path, "output csv")->required();

    auto* tr = app.add_subcommand("mask-trace", "emit (m1, loss, m2) triples for one image");
    tr->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    tr->add_option("--data", data_path, "input .mcs dataset")->required();
    tr->add_option("--steps", steps, "number of fresh random masks")->capture_default_str();
    tr->add_option("--index", index, "image index in the dataset")->capture_default_str();
    tr->add_option("--out", out_path, "output csv")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return run_gen(config_path, out_path, seed);
        if (pre->parsed()) return run_pretrain(config_path, data_path, out_path, metrics_path, save_interval, seed);
        if (ev->parsed()) return run_eval(ckpt_path, data_path, mode, fraction, folds, epochs, lr, seed);
        if (ab->parsed()) return run_ablate(grid_path, data_path, out_path, seed);
        if (tr->parsed()) return run_mask_trace(ckpt_path, data_path, steps, index, out_path, seed);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const dama::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dama::NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
