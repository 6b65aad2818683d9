#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dama/errors.hpp"
#include "dama/rng.hpp"

namespace dama {

// Binary patch mask; bit 1 = masked (hidden from the encoder), 0 = visible.
struct Mask {
    std::vector<std::uint8_t> bits;
    double ratio = 0.0;

    int length() const { return static_cast<int>(bits.size()); }

    int masked_count() const {
        int n = 0;
        for (auto b : bits) n += b;
        return n;
    }
    int visible_count() const { return length() - masked_count(); }

    std::vector<int> visible_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < length(); ++i)
            if (!bits[static_cast<std::size_t>(i)]) idx.push_back(i);
        return idx;
    }
    std::vector<int> masked_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < length(); ++i)
            if (bits[static_cast<std::size_t>(i)]) idx.push_back(i);
        return idx;
    }

    // Everything visible; used at evaluation time.
    static Mask none(int length) {
        Mask m;
        m.bits.assign(static_cast<std::size_t>(length), 0);
        m.ratio = 0.0;
        return m;
    }
};

// Number of visible patches for a masking ratio, matching the truncating
// int() of the reference procedure.
inline int keep_count(int length, double ratio) {
    return static_cast<int>(length * (1.0 - ratio));
}

inline int overlap_count(int len_keep, double overlap_ratio) {
    return static_cast<int>(len_keep * overlap_ratio);
}

inline Mask random_mask(int length, double ratio, Rng& rng) {
    if (length < 2) throw ConfigError("random_mask: length must be >= 2");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("random_mask: ratio must lie in (0, 1)");
    const int len_keep = keep_count(length, ratio);
    std::vector<int> perm(static_cast<std::size_t>(length));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Mask m;
    m.ratio = ratio;
    m.bits.assign(static_cast<std::size_t>(length), 1);
    for (int i = 0; i < len_keep; ++i) m.bits[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = 0;
    return m;
}

namespace detail {

// Shared skeleton of the second-branch mask construction: invert m1,
// re-mask `take` members of masked(m1) picked by the caller, then un-mask
// the first overlap_len visible(m1) indices. Keeps |masked(m2)| == |masked(m1)|.
inline Mask exchange_mask(const Mask& m1, double ratio, double overlap_ratio,
                          const std::vector<int>& remask_ids) {
    const int length = m1.length();
    const int len_keep = keep_count(length, ratio);
    const int overlap_len = overlap_count(len_keep, overlap_ratio);
    Mask m2;
    m2.ratio = ratio;
    m2.bits.assign(static_cast<std::size_t>(length), 0);
    for (int i = 0; i < length; ++i) m2.bits[static_cast<std::size_t>(i)] = m1.bits[static_cast<std::size_t>(i)] ? 0 : 1;
    for (int id : remask_ids) m2.bits[static_cast<std::size_t>(id)] = 1;
    int unmasked = 0;
    for (int i = 0; i < length && unmasked < overlap_len; ++i)
        if (!m1.bits[static_cast<std::size_t>(i)]) {
            m2.bits[static_cast<std::size_t>(i)] = 0;
            ++unmasked;
        }
    return m2;
}

inline void check_adaptive_inputs(const Mask& m1, std::size_t loss_len, double ratio,
                                  double overlap_ratio) {
    if (loss_len != m1.bits.size())
        throw ShapeError("adaptive_mask: loss length " + std::to_string(loss_len) +
                         " does not match mask length " + std::to_string(m1.bits.size()));
    if (ratio < 0.5)
        throw ConfigError("adaptive_mask: mask ratio " + std::to_string(ratio) +
                          " unsupported, the exchange arithmetic requires ratio >= 0.5");
    if (!(overlap_ratio >= 0.0 && overlap_ratio <= 1.0))
        throw ConfigError("adaptive_mask: overlap ratio must lie in [0, 1]");
    const int len_keep = keep_count(m1.length(), ratio);
    if (m1.visible_count() != len_keep)
        throw ContractError("adaptive_mask: m1 has " + std::to_string(m1.visible_count()) +
                            " visible patches but ratio implies " + std::to_string(len_keep));
}

}  // namespace detail

// Second-branch mask from the first branch's detached per-patch losses.
// The (loss_len + overlap_len) highest-loss members of masked(m1) stay
// masked; the remaining masked patches become visible; overlap_len visible
// patches of m1 (lowest indices) stay visible. Ties are broken by stable
// ascending sort, so equal losses resolve in favour of re-masking the
// higher index.
inline Mask adaptive_mask(const Mask& m1, const std::vector<double>& loss, double ratio,
                          double overlap_ratio) {
    detail::check_adaptive_inputs(m1, loss.size(), ratio, overlap_ratio);
    const int length = m1.length();
    const int len_keep = keep_count(length, ratio);
    const int loss_len = length - len_keep * 2;
    const int overlap_len = overlap_count(len_keep, overlap_ratio);

    std::vector<int> masked = m1.masked_indices();
    std::stable_sort(masked.begin(), masked.end(), [&](int a, int b) {
        return loss[static_cast<std::size_t>(a)] < loss[static_cast<std::size_t>(b)];
    });
    const int take = loss_len + overlap_len;
    std::vector<int> remask(masked.end() - take, masked.end());
    return detail::exchange_mask(m1, ratio, overlap_ratio, remask);
}

// Ablation baseline: the same exchange as adaptive_mask but the re-masked
// patches are drawn uniformly from masked(m1) instead of ranked by loss.
inline Mask random_overlap_mask(const Mask& m1, double ratio, double overlap_ratio, Rng& rng) {
    detail::check_adaptive_inputs(m1, m1.bits.size(), ratio, overlap_ratio);
    const int length = m1.length();
    const int len_keep = keep_count(length, ratio);
    const int loss_len = length - len_keep * 2;
    const int overlap_len = overlap_count(len_keep, overlap_ratio);

    std::vector<int> masked = m1.masked_indices();
    rng.shuffle(masked);
    const int take = loss_len + overlap_len;
    std::vector<int> remask(masked.begin(), masked.begin() + take);
    return detail::exchange_mask(m1, ratio, overlap_ratio, remask);
}

// Mask pair plus the detached losses that produced the second mask.
struct MaskPair {
    Mask m1;
    Mask m2;
    std::vector<double> patch_losses;
    double overlap_ratio = 0.0;
};

struct MaskStats {
    int visible_1 = 0;
    int visible_2 = 0;
    int overlap = 0;                 // |visible(m1) ∩ visible(m2)|
    double mean_loss_masked2 = 0.0;  // over masked(m2) ∩ masked(m1)
    double mean_loss_visible2 = 0.0; // over visible(m2) ∩ masked(m1)
};

inline MaskStats mask_stats(const MaskPair& pair) {
    if (pair.m1.bits.size() != pair.m2.bits.size() || pair.patch_losses.size() != pair.m1.bits.size())
        throw ShapeError("mask_stats: mismatched pair lengths");
    MaskStats s;
    s.visible_1 = pair.m1.visible_count();
    s.visible_2 = pair.m2.visible_count();
    double masked_sum = 0, visible_sum = 0;
    int masked_n = 0, visible_n = 0;
    for (int i = 0; i < pair.m1.length(); ++i) {
        const bool m1 = pair.m1.bits[static_cast<std::size_t>(i)] != 0;
        const bool m2 = pair.m2.bits[static_cast<std::size_t>(i)] != 0;
        if (!m1 && !m2) ++s.overlap;
        if (m1 && m2) {
            masked_sum += pair.patch_losses[static_cast<std::size_t>(i)];
            ++masked_n;
        }
        if (m1 && !m2) {
            visible_sum += pair.patch_losses[static_cast<std::size_t>(i)];
            ++visible_n;
        }
    }
    s.mean_loss_masked2 = masked_n ? masked_sum / masked_n : 0.0;
    s.mean_loss_visible2 = visible_n ? visible_sum / visible_n : 0.0;
    return s;
}

}  // namespace dama
