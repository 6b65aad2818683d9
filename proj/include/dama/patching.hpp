#pragma once

#include <cmath>
#include <vector>

#include "dama/errors.hpp"
#include "dama/synth.hpp"

namespace dama {

// An image reshaped into N = (H/P)*(W/P) flattened patch tokens. Token i
// corresponds to grid cell (i / grid_w, i % grid_w); within a patch the
// layout is row-major, channel-last, matching the image layout.
struct PatchGrid {
    int patch = 0;
    int channels = 0;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<float> tokens;  // N x (P*P*C), row-major

    int patch_count() const { return grid_h * grid_w; }
    int token_dim() const { return patch * patch * channels; }
};

inline PatchGrid patchify(const MultiChannelImage& img, int patch) {
    if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0)
        throw ShapeError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible by patch size " + std::to_string(patch));
    PatchGrid grid;
    grid.patch = patch;
    grid.channels = img.channels;
    grid.grid_h = img.height / patch;
    grid.grid_w = img.width / patch;
    grid.tokens.resize(static_cast<std::size_t>(grid.patch_count()) * grid.token_dim());
    const int c = img.channels;
    for (int gy = 0; gy < grid.grid_h; ++gy)
        for (int gx = 0; gx < grid.grid_w; ++gx) {
            float* tok = grid.tokens.data() +
                         static_cast<std::size_t>(gy * grid.grid_w + gx) * grid.token_dim();
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int ch = 0; ch < c; ++ch)
                        *tok++ = img.at(gy * patch + py, gx * patch + px, ch);
        }
    return grid;
}

inline MultiChannelImage unpatchify(const PatchGrid& grid) {
    if (grid.patch <= 0 || grid.grid_h <= 0 || grid.grid_w <= 0 ||
        grid.tokens.size() != static_cast<std::size_t>(grid.patch_count()) * grid.token_dim())
        throw ShapeError("unpatchify: inconsistent grid metadata");
    MultiChannelImage img =
        MultiChannelImage::zeros(grid.grid_h * grid.patch, grid.grid_w * grid.patch, grid.channels);
    const int patch = grid.patch, c = grid.channels;
    for (int gy = 0; gy < grid.grid_h; ++gy)
        for (int gx = 0; gx < grid.grid_w; ++gx) {
            const float* tok = grid.tokens.data() +
                               static_cast<std::size_t>(gy * grid.grid_w + gx) * grid.token_dim();
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int ch = 0; ch < c; ++ch)
                        img.at(gy * patch + py, gx * patch + px, ch) = *tok++;
        }
    return img;
}

// Per-patch reconstruction targets. With normalize=false the targets are
// the raw pixels; with normalize=true each patch is standardized to zero
// mean / unit variance.
inline std::vector<float> patch_targets(const PatchGrid& grid, bool normalize) {
    std::vector<float> targets = grid.tokens;
    if (!normalize) return targets;
    const int n = grid.patch_count();
    const int d = grid.token_dim();
    constexpr float kEps = 1e-6f;
    for (int p = 0; p < n; ++p) {
        float* row = targets.data() + static_cast<std::size_t>(p) * d;
        float mean = 0;
        for (int i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<float>(d);
        float var = 0;
        for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + kEps);
        for (int i = 0; i < d; ++i) row[i] = (row[i] - mean) * inv;
    }
    return targets;
}

}  // namespace dama
