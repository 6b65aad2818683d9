#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dama/bytes.hpp"
#include "dama/errors.hpp"
#include "dama/rng.hpp"

namespace dama {

// H x W x C image, channel-last, values in [0, 1].
struct MultiChannelImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;
    std::optional<std::uint32_t> label;

    float& at(int y, int x, int c) {
        return data[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    float at(int y, int x, int c) const {
        return data[static_cast<std::size_t>((y * width + x) * channels + c)];
    }

    static MultiChannelImage zeros(int h, int w, int c) {
        MultiChannelImage img;
        img.height = h;
        img.width = w;
        img.channels = c;
        img.data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
        return img;
    }
};

// Synthetic cell-like images: every cell lights the two nucleus channels
// (0 and 1); its class lights exactly one marker channel among 2..channels-1.
// The label of an image is the class of the central cell; additional cells
// are background clutter.
struct SynthConfig {
    int height = 64;
    int width = 64;
    int channels = 7;
    int classes = 5;
    int min_cells = 1;  // including the central cell
    int max_cells = 4;
    double min_radius = 3.0;
    double max_radius = 6.0;
    double noise_sigma = 0.05;
    double center_amplitude = 0.9;      // brightness of the labeled central cell
    double distractor_amplitude = 0.45; // brightness of background cells
    std::uint64_t seed = 0;

    void validate() const {
        if (height <= 0 || width <= 0 || channels < 2) throw ConfigError("synth: degenerate image dims");
        if (classes < 1 || classes > channels - 2)
            throw ConfigError("synth: classes must fit the marker channels (2..channels-1)");
        if (min_radius <= 0.0 || max_radius < min_radius) throw ConfigError("synth: invalid blob radius range");
        if (min_cells < 1 || max_cells < min_cells) throw ConfigError("synth: invalid cells-per-image range");
        if (center_amplitude <= 0.0 || distractor_amplitude < 0.0)
            throw ConfigError("synth: amplitudes must be positive");
    }
};

namespace detail {

// Anisotropic Gaussian blob, additively composited.
inline void render_blob(MultiChannelImage& img, int channel, double cy, double cx, double sy, double sx,
                        double angle, double amplitude) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int ry = static_cast<int>(std::ceil(3.0 * std::max(sy, sx)));
    const int y0 = std::max(0, static_cast<int>(cy) - ry), y1 = std::min(img.height - 1, static_cast<int>(cy) + ry);
    const int x0 = std::max(0, static_cast<int>(cx) - ry), x1 = std::min(img.width - 1, static_cast<int>(cx) + ry);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double u = ca * dy + sa * dx;
            const double v = -sa * dy + ca * dx;
            const double e = std::exp(-0.5 * (u * u / (sy * sy) + v * v / (sx * sx)));
            img.at(y, x, channel) += static_cast<float>(amplitude * e);
        }
}

inline void render_cell(MultiChannelImage& img, const SynthConfig& cfg, Rng& rng, double cy, double cx,
                        int cell_class, double amplitude) {
    const double sy = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double sx = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    // nucleus channels, slightly tighter than the marker footprint
    render_blob(img, 0, cy, cx, sy * 0.6, sx * 0.6, angle, amplitude * rng.uniform(0.8, 1.0));
    render_blob(img, 1, cy, cx, sy * 0.6, sx * 0.6, angle, amplitude * rng.uniform(0.6, 0.9));
    render_blob(img, 2 + cell_class, cy, cx, sy, sx, angle, amplitude * rng.uniform(0.85, 1.0));
}

}  // namespace detail

inline std::vector<MultiChannelImage> generate(const SynthConfig& cfg, int n) {
    cfg.validate();
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    std::vector<MultiChannelImage> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::child(cfg.seed, static_cast<std::uint64_t>(i));
        const int label = i % cfg.classes;
        MultiChannelImage img = MultiChannelImage::zeros(cfg.height, cfg.width, cfg.channels);
        for (auto& v : img.data) v = static_cast<float>(rng.normal() * cfg.noise_sigma);

        const double cy = cfg.height / 2.0 + rng.uniform(-3.0, 3.0);
        const double cx = cfg.width / 2.0 + rng.uniform(-3.0, 3.0);
        detail::render_cell(img, cfg, rng, cy, cx, label, cfg.center_amplitude);

        const int extra = cfg.min_cells - 1 + rng.uniform_int(cfg.max_cells - cfg.min_cells + 1);
        for (int k = 0; k < extra; ++k) {
            const double ey = rng.uniform(0.0, cfg.height);
            const double ex = rng.uniform(0.0, cfg.width);
            const int ec = rng.uniform_int(cfg.classes);
            detail::render_cell(img, cfg, rng, ey, ex, ec, cfg.distractor_amplitude);
        }
        for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
        img.label = static_cast<std::uint32_t>(label);
        out.push_back(std::move(img));
    }
    return out;
}

// Affine-only augmentation: flips, quarter turns, small translation, scale.
// Intensities are never altered; resampling is nearest-neighbour with edge
// clamping so every output pixel carries an input channel vector.
struct AugmentParams {
    bool flip_h = false;
    bool flip_v = false;
    int quarter_turns = 0;  // multiples of 90 degrees, CCW
    int shift_y = 0;
    int shift_x = 0;
    double scale = 1.0;
};

inline AugmentParams sample_augment(const MultiChannelImage& img, Rng& rng, int max_shift = 4) {
    AugmentParams p;
    p.flip_h = rng.uniform_int(2) == 1;
    p.flip_v = rng.uniform_int(2) == 1;
    p.quarter_turns = img.height == img.width ? rng.uniform_int(4) : 2 * rng.uniform_int(2);
    p.shift_y = rng.uniform_int(2 * max_shift + 1) - max_shift;
    p.shift_x = rng.uniform_int(2 * max_shift + 1) - max_shift;
    p.scale = rng.uniform(0.8, 1.2);
    return p;
}

inline MultiChannelImage augment_with(const MultiChannelImage& img, const AugmentParams& p) {
    const int h = img.height, w = img.width, c = img.channels;
    MultiChannelImage out = img;
    auto src_of = [&](int y, int x) {
        // invert the transform chain: scale -> translate -> rotate -> flips
        double sy = (y - (h - 1) / 2.0) / p.scale + (h - 1) / 2.0;
        double sx = (x - (w - 1) / 2.0) / p.scale + (w - 1) / 2.0;
        int iy = static_cast<int>(std::lround(sy)) - p.shift_y;
        int ix = static_cast<int>(std::lround(sx)) - p.shift_x;
        iy = std::clamp(iy, 0, h - 1);
        ix = std::clamp(ix, 0, w - 1);
        for (int q = 0; q < p.quarter_turns % 4; ++q) {
            const int ty = iy;
            iy = w - 1 - ix;  // inverse of a CCW quarter turn
            ix = ty;
        }
        if (p.flip_v) iy = h - 1 - iy;
        if (p.flip_h) ix = w - 1 - ix;
        return std::pair<int, int>{iy, ix};
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto [iy, ix] = src_of(y, x);
            std::memcpy(&out.data[static_cast<std::size_t>((y * w + x) * c)],
                        &img.data[static_cast<std::size_t>((iy * w + ix) * c)],
                        sizeof(float) * static_cast<std::size_t>(c));
        }
    out.label = img.label;
    return out;
}

inline MultiChannelImage augment(const MultiChannelImage& img, Rng& rng) {
    return augment_with(img, sample_augment(img, rng));
}

// ---------------------------------------------------------------------------
// MCS container
//
// magic "MCS1", then little-endian u32 [version=1, count, H, W, C,
// label_flag], then count u32 labels when label_flag=1, then count*H*W*C
// little-endian f32 in image-major, row-major, channel-last order.
// ---------------------------------------------------------------------------



inline void write_mcs(const std::string& path, const std::vector<MultiChannelImage>& images) {
    if (images.empty()) throw ConfigError("write_mcs: empty image list");
    const int h = images[0].height, w = images[0].width, c = images[0].channels;
    const bool labeled = images[0].label.has_value();
    for (const auto& img : images) {
        if (img.height != h || img.width != w || img.channels != c)
            throw ShapeError("write_mcs: images must share one shape");
        if (img.label.has_value() != labeled)
            throw ConfigError("write_mcs: mixed labeled/unlabeled images");
    }
    std::vector<std::uint8_t> buf;
    buf.reserve(28 + images.size() * images[0].data.size() * 4);
    buf.insert(buf.end(), {'M', 'C', 'S', '1'});
    detail::put_u32(buf, 1);
    detail::put_u32(buf, static_cast<std::uint32_t>(images.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(h));
    detail::put_u32(buf, static_cast<std::uint32_t>(w));
    detail::put_u32(buf, static_cast<std::uint32_t>(c));
    detail::put_u32(buf, labeled ? 1 : 0);
    if (labeled)
        for (const auto& img : images) detail::put_u32(buf, *img.label);
    for (const auto& img : images)
        for (float v : img.data) detail::put_f32(buf, v);
    detail::write_file(path, buf);
}

inline std::vector<MultiChannelImage> read_mcs(const std::string& path) {
    const auto buf = detail::read_file(path);
    detail::ByteReader r{buf.data(), buf.size()};
    if (buf.size() < 4 || buf[0] != 'M' || buf[1] != 'C' || buf[2] != 'S' || buf[3] != '1')
        throw FormatError("bad MCS magic", 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1) throw FormatError("unsupported MCS version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("count");
    const std::uint32_t h = r.u32("height");
    const std::uint32_t w = r.u32("width");
    const std::uint32_t c = r.u32("channels");
    const std::uint32_t label_flag = r.u32("label flag");
    if (count == 0 || h == 0 || w == 0 || c == 0) throw FormatError("degenerate MCS header", 8);
    if (label_flag > 1) throw FormatError("invalid label flag", 24);

    std::vector<std::uint32_t> labels;
    if (label_flag == 1) {
        labels.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) labels.push_back(r.u32("label"));
    }
    const std::size_t per_image = static_cast<std::size_t>(h) * w * c;
    const std::size_t expected = r.pos + count * per_image * 4;
    if (buf.size() != expected)
        throw FormatError("payload size does not match header count (expected " + std::to_string(expected) +
                              " bytes, have " + std::to_string(buf.size()) + ")",
                          std::min(buf.size(), expected));

    std::vector<MultiChannelImage> images;
    images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        MultiChannelImage img = MultiChannelImage::zeros(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
        for (auto& v : img.data) v = r.f32("pixel");
        if (label_flag == 1) img.label = labels[i];
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace dama
