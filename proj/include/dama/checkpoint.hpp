#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dama/bytes.hpp"
#include "dama/errors.hpp"
#include "dama/trainer.hpp"

namespace dama {

// Checkpoint layout:
//   magic "DAMA"
//   u32 version (= 1)
//   u32 json length, json bytes (config + counters + record counts)
//   named parameter records: u32 name_len, name, u32 rank, u32 dims[rank],
//     little-endian f32 payload
//   optimizer moment records in the same record format
//   rng state bytes

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_record(std::vector<std::uint8_t>& buf, const std::string& name, const std::vector<int>& dims,
                       const std::vector<float>& data) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : data) put_f32(buf, v);
}

struct Record {
    std::string name;
    std::vector<int> dims;
    std::vector<float> data;
};

inline Record read_record(ByteReader& r) {
    Record rec;
    const std::uint32_t name_len = r.u32("record name length");
    if (name_len == 0 || name_len > 4096) throw FormatError("implausible record name length", r.pos - 4);
    rec.name = r.bytes(name_len, "record name");
    const std::uint32_t rank = r.u32("record rank");
    if (rank > 8) throw FormatError("implausible record rank", r.pos - 4);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32("record dim");
        rec.dims.push_back(static_cast<int>(d));
        numel *= d;
    }
    rec.data.resize(numel);
    for (std::size_t i = 0; i < numel; ++i) rec.data[i] = r.f32("record payload");
    return rec;
}

}  // namespace detail

inline void save_checkpoint(TrainState& state, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'D', 'A', 'M', 'A'});
    detail::put_u32(buf, detail::kCheckpointVersion);

    std::vector<std::pair<std::string, BasicTensor<float>*>> params;
    state.branch1.for_each_param(
        [&](const std::string& n, BasicTensor<float>& t) { params.emplace_back("b1." + n, &t); });
    if (!state.shares_weights())
        state.branch2.for_each_param(
            [&](const std::string& n, BasicTensor<float>& t) { params.emplace_back("b2." + n, &t); });

    std::vector<std::string> moment_names;
    for (const auto& [name, tensor] : params) {
        (void)tensor;
        if (state.opt.slots.count(name)) moment_names.push_back(name);
    }

    nlohmann::json meta;
    meta["config"] = state.cfg.to_json();
    meta["channels"] = state.channels;
    meta["step"] = state.step;
    meta["epoch"] = state.epoch;
    meta["adam_t"] = state.opt.t;
    meta["param_count"] = params.size();
    meta["moment_count"] = moment_names.size() * 2;
    const std::string json_text = meta.dump();
    detail::put_u32(buf, static_cast<std::uint32_t>(json_text.size()));
    buf.insert(buf.end(), json_text.begin(), json_text.end());

    for (const auto& [name, tensor] : params) detail::put_record(buf, name, tensor->shape(), tensor->value());
    for (const auto& name : moment_names) {
        const auto& slot = state.opt.slots.at(name);
        const std::vector<int> dims{static_cast<int>(slot.m.size())};
        detail::put_record(buf, name + "#m", dims, slot.m);
        detail::put_record(buf, name + "#v", dims, slot.v);
    }

    const auto rng_bytes = state.rng.serialize();
    buf.insert(buf.end(), rng_bytes.begin(), rng_bytes.end());
    detail::write_file(path, buf);
}

inline TrainState load_checkpoint(const std::string& path) {
    const auto buf = detail::read_file(path);
    if (buf.size() < 4 || buf[0] != 'D' || buf[1] != 'A' || buf[2] != 'M' || buf[3] != 'A')
        throw FormatError("bad checkpoint magic", 0);
    detail::ByteReader r{buf.data(), buf.size(), 4};
    const std::uint32_t version = r.u32("version");
    if (version != detail::kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint32_t json_len = r.u32("json length");
    const std::string json_text = r.bytes(json_len, "config json");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid checkpoint json: ") + e.what(), 12);
    }

    BranchConfig cfg = BranchConfig::from_json(meta.at("config"));
    const int channels = meta.at("channels").get<int>();
    TrainState state = init_train_state(cfg, channels);
    state.step = meta.at("step").get<std::int64_t>();
    state.epoch = meta.at("epoch").get<int>();
    state.opt.t = meta.at("adam_t").get<std::int64_t>();

    std::unordered_map<std::string, BasicTensor<float>*> by_name;
    state.branch1.for_each_param(
        [&](const std::string& n, BasicTensor<float>& t) { by_name["b1." + n] = &t; });
    if (!state.shares_weights())
        state.branch2.for_each_param(
            [&](const std::string& n, BasicTensor<float>& t) { by_name["b2." + n] = &t; });

    const auto param_count = meta.at("param_count").get<std::size_t>();
    const auto moment_count = meta.at("moment_count").get<std::size_t>();
    if (param_count != by_name.size())
        throw FormatError("parameter count mismatch: checkpoint has " + std::to_string(param_count) +
                              ", model expects " + std::to_string(by_name.size()),
                          r.pos);

    for (std::size_t i = 0; i < param_count; ++i) {
        auto rec = detail::read_record(r);
        auto it = by_name.find(rec.name);
        if (it == by_name.end()) throw FormatError("unknown parameter record '" + rec.name + "'", r.pos);
        if (rec.dims != it->second->shape())
            throw FormatError("shape mismatch for parameter '" + rec.name + "'", r.pos);
        it->second->value() = std::move(rec.data);
    }
    for (std::size_t i = 0; i < moment_count; ++i) {
        auto rec = detail::read_record(r);
        if (rec.name.size() < 3 || rec.name[rec.name.size() - 2] != '#')
            throw FormatError("malformed moment record name '" + rec.name + "'", r.pos);
        const char kind = rec.name.back();
        const std::string param_name = rec.name.substr(0, rec.name.size() - 2);
        if (!by_name.count(param_name))
            throw FormatError("moment record for unknown parameter '" + param_name + "'", r.pos);
        auto& slot = state.opt.slots[param_name];
        if (kind == 'm')
            slot.m = std::move(rec.data);
        else if (kind == 'v')
            slot.v = std::move(rec.data);
        else
            throw FormatError("moment record kind must be m or v, got '" + rec.name + "'", r.pos);
    }

    if (r.pos + Rng::serialized_size() != buf.size())
        throw FormatError("trailing bytes do not match rng state size", r.pos);
    state.rng = Rng::deserialize(buf.data() + r.pos, buf.size() - r.pos);
    return state;
}

struct PretrainOptions {
    std::string metrics_path;     // empty: keep metrics in memory only
    std::string checkpoint_path;  // empty: no checkpoints
    int save_interval_epochs = 0; // 0: only the final checkpoint
    int stop_after_epoch = 0;     // 0: run to cfg.epochs; schedules always span the full run
};

// Epoch loop: shuffle, fixed-size batches (last batch may be short), one
// train_step per batch. Deterministic given (config, seed, dataset);
// resuming from an epoch-boundary checkpoint continues the exact run.
inline void pretrain(TrainState& state, const std::vector<MultiChannelImage>& dataset,
                     const PretrainOptions& opts = {}) {
    if (dataset.empty()) throw ConfigError("pretrain: dataset is empty");
    for (const auto& img : dataset)
        if (img.height != state.cfg.image_size || img.width != state.cfg.image_size ||
            img.channels != state.channels)
            throw ConfigError("pretrain: dataset images do not match the configured image size/channels");
    set_schedule_from_dataset(state, dataset.size());

    const int last_epoch = opts.stop_after_epoch > 0 ? std::min(opts.stop_after_epoch, state.cfg.epochs)
                                                     : state.cfg.epochs;
    std::vector<int> order(dataset.size());
    for (int e = state.epoch; e < last_epoch; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        state.rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(state.cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(state.cfg.batch_size));
            std::vector<const MultiChannelImage*> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i)
                batch.push_back(&dataset[static_cast<std::size_t>(order[i])]);
            train_step(state, batch);
        }
        state.epoch = e + 1;
        if (!opts.checkpoint_path.empty() && opts.save_interval_epochs > 0 &&
            state.epoch % opts.save_interval_epochs == 0 && state.epoch < state.cfg.epochs)
            save_checkpoint(state, opts.checkpoint_path);
    }
    if (!opts.checkpoint_path.empty()) save_checkpoint(state, opts.checkpoint_path);
    if (!opts.metrics_path.empty()) write_metrics_csv(state.metrics, opts.metrics_path);
}

}  // namespace dama
