#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dama/errors.hpp"
#include "dama/masking.hpp"
#include "dama/patching.hpp"
#include "dama/rng.hpp"
#include "dama/tensor.hpp"

namespace dama {

struct ViTConfig {
    int grid_h = 8;
    int grid_w = 8;
    int token_dim = 448;  // P*P*C
    int dim = 64;
    int depth = 6;
    int heads = 4;
    int mlp_ratio = 4;
    int decoder_dim = 48;
    int decoder_depth = 2;
    int target_blocks = 6;  // K: final encoder blocks averaged into the feature target

    int patch_count() const { return grid_h * grid_w; }

    void validate() const {
        if (grid_h <= 0 || grid_w <= 0 || token_dim <= 0) throw ConfigError("vit: degenerate token grid");
        if (dim <= 0 || depth <= 0 || heads <= 0 || decoder_dim <= 0) throw ConfigError("vit: degenerate model dims");
        if (dim % heads != 0) throw ConfigError("vit: dim must be divisible by heads");
        if (dim % 4 != 0 || decoder_dim % 4 != 0)
            throw ConfigError("vit: dims must be divisible by 4 for 2-d sin-cos positions");
        if (target_blocks < 1 || target_blocks > depth)
            throw ConfigError("vit: target_blocks must lie in [1, depth]");
    }
};

namespace detail {

constexpr double kLayerNormEps = 1e-6;

// Fixed 2-d sine-cosine table, (gh*gw) x dim. Deterministic from the grid
// shape and never trained.
template <typename S>
std::vector<S> sincos_position_table(int grid_h, int grid_w, int dim) {
    const int quarter = dim / 4;
    std::vector<double> omega(static_cast<std::size_t>(quarter));
    for (int i = 0; i < quarter; ++i)
        omega[static_cast<std::size_t>(i)] = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
    std::vector<S> table(static_cast<std::size_t>(grid_h) * grid_w * dim);
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            S* row = table.data() + static_cast<std::size_t>(y * grid_w + x) * dim;
            for (int i = 0; i < quarter; ++i) {
                row[i] = static_cast<S>(static_cast<float>(std::sin(y * omega[static_cast<std::size_t>(i)])));
                row[quarter + i] = static_cast<S>(static_cast<float>(std::cos(y * omega[static_cast<std::size_t>(i)])));
                row[2 * quarter + i] = static_cast<S>(static_cast<float>(std::sin(x * omega[static_cast<std::size_t>(i)])));
                row[3 * quarter + i] = static_cast<S>(static_cast<float>(std::cos(x * omega[static_cast<std::size_t>(i)])));
            }
        }
    return table;
}

}  // namespace detail

template <typename S>
struct AttentionParams {
    BasicTensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct BlockParams {
    BasicTensor<S> ln1_g, ln1_b;
    AttentionParams<S> attn;
    BasicTensor<S> ln2_g, ln2_b;
    BasicTensor<S> fc1_w, fc1_b, fc2_w, fc2_b;
};

// One branch of the masked autoencoder: patch embedding, encoder stack,
// decoder stack with a learnable mask embedding, pixel head and feature
// head. Positional tables are fixed and excluded from parameter traversal.
template <typename S>
struct BranchParams {
    ViTConfig cfg;

    BasicTensor<S> embed_w, embed_b;
    BasicTensor<S> enc_pos;  // constant
    std::vector<BlockParams<S>> enc_blocks;
    BasicTensor<S> enc_norm_g, enc_norm_b;

    BasicTensor<S> dec_embed_w, dec_embed_b;
    BasicTensor<S> mask_token;  // 1 x decoder_dim
    BasicTensor<S> dec_pos;     // constant
    std::vector<BlockParams<S>> dec_blocks;
    BasicTensor<S> dec_norm_g, dec_norm_b;

    BasicTensor<S> pixel_w, pixel_b;
    BasicTensor<S> feat_w, feat_b;

    static BasicTensor<S> randn(std::vector<int> shape, Rng& rng, double sigma) {
        auto t = BasicTensor<S>::zeros(std::move(shape), true);
        // round through float so float/double instantiations share exact values
        for (auto& v : t.value()) v = static_cast<S>(static_cast<float>(rng.normal() * sigma));
        return t;
    }

    static BlockParams<S> init_block(int dim, int mlp_ratio, Rng& rng) {
        BlockParams<S> b;
        b.ln1_g = BasicTensor<S>::full({dim}, S(1), true);
        b.ln1_b = BasicTensor<S>::zeros({dim}, true);
        b.attn.wq = randn({dim, dim}, rng, 0.02);
        b.attn.bq = BasicTensor<S>::zeros({dim}, true);
        b.attn.wk = randn({dim, dim}, rng, 0.02);
        b.attn.bk = BasicTensor<S>::zeros({dim}, true);
        b.attn.wv = randn({dim, dim}, rng, 0.02);
        b.attn.bv = BasicTensor<S>::zeros({dim}, true);
        b.attn.wo = randn({dim, dim}, rng, 0.02);
        b.attn.bo = BasicTensor<S>::zeros({dim}, true);
        b.ln2_g = BasicTensor<S>::full({dim}, S(1), true);
        b.ln2_b = BasicTensor<S>::zeros({dim}, true);
        const int hidden = dim * mlp_ratio;
        b.fc1_w = randn({dim, hidden}, rng, 0.02);
        b.fc1_b = BasicTensor<S>::zeros({hidden}, true);
        b.fc2_w = randn({hidden, dim}, rng, 0.02);
        b.fc2_b = BasicTensor<S>::zeros({dim}, true);
        return b;
    }

    static BranchParams init(const ViTConfig& cfg, Rng& rng) {
        cfg.validate();
        BranchParams p;
        p.cfg = cfg;
        p.embed_w = randn({cfg.token_dim, cfg.dim}, rng, 0.02);
        p.embed_b = BasicTensor<S>::zeros({cfg.dim}, true);
        p.enc_pos = BasicTensor<S>::from({cfg.patch_count(), cfg.dim},
                                         detail::sincos_position_table<S>(cfg.grid_h, cfg.grid_w, cfg.dim));
        for (int i = 0; i < cfg.depth; ++i) p.enc_blocks.push_back(init_block(cfg.dim, cfg.mlp_ratio, rng));
        p.enc_norm_g = BasicTensor<S>::full({cfg.dim}, S(1), true);
        p.enc_norm_b = BasicTensor<S>::zeros({cfg.dim}, true);

        p.dec_embed_w = randn({cfg.dim, cfg.decoder_dim}, rng, 0.02);
        p.dec_embed_b = BasicTensor<S>::zeros({cfg.decoder_dim}, true);
        p.mask_token = randn({1, cfg.decoder_dim}, rng, 0.02);
        p.dec_pos = BasicTensor<S>::from({cfg.patch_count(), cfg.decoder_dim},
                                         detail::sincos_position_table<S>(cfg.grid_h, cfg.grid_w, cfg.decoder_dim));
        for (int i = 0; i < cfg.decoder_depth; ++i)
            p.dec_blocks.push_back(init_block(cfg.decoder_dim, cfg.mlp_ratio, rng));
        p.dec_norm_g = BasicTensor<S>::full({cfg.decoder_dim}, S(1), true);
        p.dec_norm_b = BasicTensor<S>::zeros({cfg.decoder_dim}, true);

        p.pixel_w = randn({cfg.decoder_dim, cfg.token_dim}, rng, 0.02);
        p.pixel_b = BasicTensor<S>::zeros({cfg.token_dim}, true);
        p.feat_w = randn({cfg.decoder_dim, cfg.dim}, rng, 0.02);
        p.feat_b = BasicTensor<S>::zeros({cfg.dim}, true);
        return p;
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        auto visit_block = [&](const std::string& prefix, BlockParams<S>& b) {
            fn(prefix + ".ln1.g", b.ln1_g);
            fn(prefix + ".ln1.b", b.ln1_b);
            fn(prefix + ".attn.wq", b.attn.wq);
            fn(prefix + ".attn.bq", b.attn.bq);
            fn(prefix + ".attn.wk", b.attn.wk);
            fn(prefix + ".attn.bk", b.attn.bk);
            fn(prefix + ".attn.wv", b.attn.wv);
            fn(prefix + ".attn.bv", b.attn.bv);
            fn(prefix + ".attn.wo", b.attn.wo);
            fn(prefix + ".attn.bo", b.attn.bo);
            fn(prefix + ".ln2.g", b.ln2_g);
            fn(prefix + ".ln2.b", b.ln2_b);
            fn(prefix + ".mlp.w1", b.fc1_w);
            fn(prefix + ".mlp.b1", b.fc1_b);
            fn(prefix + ".mlp.w2", b.fc2_w);
            fn(prefix + ".mlp.b2", b.fc2_b);
        };
        fn("embed.w", embed_w);
        fn("embed.b", embed_b);
        for (std::size_t i = 0; i < enc_blocks.size(); ++i) visit_block("enc." + std::to_string(i), enc_blocks[i]);
        fn("enc.norm.g", enc_norm_g);
        fn("enc.norm.b", enc_norm_b);
        fn("dec.embed.w", dec_embed_w);
        fn("dec.embed.b", dec_embed_b);
        fn("dec.mask_token", mask_token);
        for (std::size_t i = 0; i < dec_blocks.size(); ++i) visit_block("dec." + std::to_string(i), dec_blocks[i]);
        fn("dec.norm.g", dec_norm_g);
        fn("dec.norm.b", dec_norm_b);
        fn("head.pixel.w", pixel_w);
        fn("head.pixel.b", pixel_b);
        fn("head.feature.w", feat_w);
        fn("head.feature.b", feat_b);
    }

    BranchParams clone() const {
        BranchParams copy = *this;
        auto deep = [](BasicTensor<S>& t) { t = t.clone(); };
        copy.for_each_param([&](const std::string&, BasicTensor<S>& t) { deep(t); });
        copy.enc_pos = enc_pos.clone();
        copy.dec_pos = dec_pos.clone();
        return copy;
    }

    void set_requires_grad(bool rg) {
        for_each_param([&](const std::string&, BasicTensor<S>& t) { t.set_requires_grad(rg); });
    }

    void zero_grads() {
        for_each_param([](const std::string&, BasicTensor<S>& t) { t.zero_grad(); });
    }
};

namespace detail {

template <typename S>
BasicTensor<S> attention(Tape<S>& tape, const BasicTensor<S>& x, const AttentionParams<S>& p, int heads) {
    const int dim = x.dim(1);
    const int head_dim = dim / heads;
    auto q = add_rowvec(tape, matmul(tape, x, p.wq), p.bq);
    auto k = add_rowvec(tape, matmul(tape, x, p.wk), p.bk);
    auto v = add_rowvec(tape, matmul(tape, x, p.wv), p.bv);
    std::vector<BasicTensor<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
        auto qh = slice_cols(tape, q, c0, c1);
        auto kh = slice_cols(tape, k, c0, c1);
        auto vh = slice_cols(tape, v, c0, c1);
        auto scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
        outs.push_back(matmul(tape, softmax(tape, scores), vh));
    }
    auto merged = concat_cols(tape, outs);
    return add_rowvec(tape, matmul(tape, merged, p.wo), p.bo);
}

template <typename S>
BasicTensor<S> block_forward(Tape<S>& tape, const BasicTensor<S>& x, const BlockParams<S>& b, int heads) {
    auto normed = layer_norm(tape, x, b.ln1_g, b.ln1_b, kLayerNormEps);
    auto h = add(tape, x, attention(tape, normed, b.attn, heads));
    auto normed2 = layer_norm(tape, h, b.ln2_g, b.ln2_b, kLayerNormEps);
    auto mlp = add_rowvec(tape, matmul(tape, gelu(tape, add_rowvec(tape, matmul(tape, normed2, b.fc1_w), b.fc1_b)), b.fc2_w),
                          b.fc2_b);
    return add(tape, h, mlp);
}

}  // namespace detail

template <typename S>
struct EncodeResult {
    BasicTensor<S> features;                  // len_keep x dim, after the final norm
    std::vector<BasicTensor<S>> block_feats;  // depth entries, each len_keep x dim
    std::vector<int> visible;                 // ascending patch indices fed to the encoder
};

// Runs the encoder over visible tokens only; masked patch content never
// enters the computation.
template <typename S>
EncodeResult<S> encode(Tape<S>& tape, const BranchParams<S>& params, const PatchGrid& grid, const Mask& mask) {
    if (mask.length() != grid.patch_count())
        throw ShapeError("encode: mask length " + std::to_string(mask.length()) + " != patch count " +
                         std::to_string(grid.patch_count()));
    if (grid.token_dim() != params.cfg.token_dim)
        throw ShapeError("encode: token dim mismatch");
    EncodeResult<S> result;
    result.visible = mask.visible_indices();
    const int n_vis = static_cast<int>(result.visible.size());
    if (n_vis == 0) throw ContractError("encode: mask leaves no visible patches");

    std::vector<S> vis_tokens(static_cast<std::size_t>(n_vis) * grid.token_dim());
    for (int r = 0; r < n_vis; ++r)
        for (int j = 0; j < grid.token_dim(); ++j)
            vis_tokens[static_cast<std::size_t>(r * grid.token_dim() + j)] =
                static_cast<S>(grid.tokens[static_cast<std::size_t>(result.visible[static_cast<std::size_t>(r)]) *
                                               grid.token_dim() +
                                           static_cast<std::size_t>(j)]);
    auto x = BasicTensor<S>::from({n_vis, grid.token_dim()}, std::move(vis_tokens));

    auto h = add_rowvec(tape, matmul(tape, x, params.embed_w), params.embed_b);
    auto pos = gather_rows(tape, params.enc_pos, result.visible);
    h = add(tape, h, pos);
    result.block_feats.reserve(params.enc_blocks.size());
    for (const auto& block : params.enc_blocks) {
        h = detail::block_forward(tape, h, block, params.cfg.heads);
        result.block_feats.push_back(h);
    }
    result.features = layer_norm(tape, h, params.enc_norm_g, params.enc_norm_b, detail::kLayerNormEps);
    return result;
}

template <typename S>
struct DecodeResult {
    BasicTensor<S> pixels;    // N x token_dim
    BasicTensor<S> features;  // N x decoder_dim, after the decoder norm
};

// Projects visible features into the decoder, fills masked positions with
// the learnable mask embedding plus positions, and predicts pixels for every
// patch.
template <typename S>
DecodeResult<S> decode(Tape<S>& tape, const BranchParams<S>& params, const BasicTensor<S>& visible_features,
                       const Mask& mask) {
    const int n = params.cfg.patch_count();
    if (mask.length() != n) throw ShapeError("decode: mask length != patch count");
    const auto visible = mask.visible_indices();
    if (visible_features.rank() != 2 || visible_features.dim(0) != static_cast<int>(visible.size()) ||
        visible_features.dim(1) != params.cfg.dim)
        throw ShapeError("decode: visible feature shape " + std::to_string(visible_features.dim(0)) + "x" +
                         std::to_string(visible_features.rank() == 2 ? visible_features.dim(1) : -1) +
                         " inconsistent with mask");

    auto projected = add_rowvec(tape, matmul(tape, visible_features, params.dec_embed_w), params.dec_embed_b);

    const int n_masked = n - static_cast<int>(visible.size());
    BasicTensor<S> stacked = projected;
    if (n_masked > 0) {
        auto ones = BasicTensor<S>::full({n_masked, 1}, S(1));
        auto mask_rows = matmul(tape, ones, params.mask_token);
        stacked = concat(tape, projected, mask_rows);
    }

    // row r of `stacked` is visible[r] for r < |visible|, then masked patches
    // in ascending order; scatter rows back to patch order
    std::vector<int> perm(static_cast<std::size_t>(n));
    int vis_rank = 0, masked_rank = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask.bits[static_cast<std::size_t>(i)])
            perm[static_cast<std::size_t>(i)] = vis_rank++;
        else
            perm[static_cast<std::size_t>(i)] = static_cast<int>(visible.size()) + masked_rank++;
    }
    auto full = gather_rows(tape, stacked, perm);
    auto h = add(tape, full, params.dec_pos);
    for (const auto& block : params.dec_blocks) h = detail::block_forward(tape, h, block, params.cfg.heads);
    DecodeResult<S> result;
    result.features = layer_norm(tape, h, params.dec_norm_g, params.dec_norm_b, detail::kLayerNormEps);
    result.pixels = add_rowvec(tape, matmul(tape, result.features, params.pixel_w), params.pixel_b);
    return result;
}

// Data2Vec-style target: parameter-free layer norm applied to each of the
// last K encoder blocks, then averaged. The result is detached from the
// graph; no gradient flows into the target branch through it.
template <typename S>
BasicTensor<S> feature_target(const std::vector<BasicTensor<S>>& block_feats, int k) {
    if (k < 1 || k > static_cast<int>(block_feats.size()))
        throw ConfigError("feature_target: K must lie in [1, depth]");
    const auto& last = block_feats.back();
    const int rows = last.dim(0), cols = last.dim(1);
    std::vector<double> acc(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int b = static_cast<int>(block_feats.size()) - k; b < static_cast<int>(block_feats.size()); ++b) {
        const auto& feats = block_feats[static_cast<std::size_t>(b)];
        for (int r = 0; r < rows; ++r) {
            const S* row = feats.value().data() + static_cast<std::size_t>(r) * cols;
            double mean = 0;
            for (int c = 0; c < cols; ++c) mean += row[c];
            mean /= cols;
            double var = 0;
            for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
            var /= cols;
            const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
            for (int c = 0; c < cols; ++c)
                acc[static_cast<std::size_t>(r * cols + c)] += (row[c] - mean) * inv;
        }
    }
    auto out = BasicTensor<S>::zeros({rows, cols});
    for (std::size_t i = 0; i < acc.size(); ++i) out.value()[i] = static_cast<S>(acc[i] / k);
    return out;
}

// Feature head applied to decoder tokens gathered at selected positions.
template <typename S>
BasicTensor<S> feature_predict(Tape<S>& tape, const BranchParams<S>& params, const BasicTensor<S>& decoder_features,
                               const std::vector<int>& positions) {
    if (positions.empty()) throw ContractError("feature_predict: empty position selection");
    auto rows = gather_rows(tape, decoder_features, positions);
    return add_rowvec(tape, matmul(tape, rows, params.feat_w), params.feat_b);
}

// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, in place. The
// teacher never sees gradients.
template <typename S>
void ema_update(BranchParams<S>& teacher, BranchParams<S>& student, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("ema_update: lambda must lie in [0, 1]");
    std::vector<BasicTensor<S>*> student_params;
    student.for_each_param([&](const std::string&, BasicTensor<S>& t) { student_params.push_back(&t); });
    std::size_t i = 0;
    teacher.for_each_param([&](const std::string& name, BasicTensor<S>& t) {
        if (i >= student_params.size() || t.shape() != student_params[i]->shape())
            throw ContractError("ema_update: parameter shape mismatch at " + name);
        const auto& s = student_params[i]->value();
        auto& dst = t.value();
        const S lam = static_cast<S>(lambda);
        if (lambda != 1.0)
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = lam * dst[j] + (S(1) - lam) * s[j];
        ++i;
    });
    if (i != student_params.size()) throw ContractError("ema_update: parameter count mismatch");
}

}  // namespace dama
