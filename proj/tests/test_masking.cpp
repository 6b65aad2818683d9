#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dama/masking.hpp"
#include "dama/rng.hpp"
#include "support/alg1_oracle.hpp"

using dama::adaptive_mask;
using dama::Mask;
using dama::random_mask;
using dama::random_overlap_mask;
using dama::Rng;

namespace {

Mask mask_from_bits(std::vector<std::uint8_t> bits, double ratio) {
    Mask m;
    m.bits = std::move(bits);
    m.ratio = ratio;
    return m;
}

}  // namespace

TEST_CASE("random_mask visible/masked counts follow the truncating keep rule") {
    Rng rng(0);
    auto m = random_mask(64, 0.8, rng);
    REQUIRE(m.visible_count() == 12);  // int(64 * 0.2) == 12
    REQUIRE(m.masked_count() == 52);

    auto half = random_mask(8, 0.5, rng);
    REQUIRE(half.masked_count() == 4);
}

TEST_CASE("random_mask is deterministic under a fixed seed") {
    Rng a(9), b(9);
    auto ma = random_mask(32, 0.75, a);
    auto mb = random_mask(32, 0.75, b);
    REQUIRE(ma.bits == mb.bits);
}

TEST_CASE("random_mask rejects out-of-range ratios and tiny lengths") {
    Rng rng(1);
    REQUIRE_THROWS_AS(random_mask(16, 0.0, rng), dama::ConfigError);
    REQUIRE_THROWS_AS(random_mask(16, 1.0, rng), dama::ConfigError);
    REQUIRE_THROWS_AS(random_mask(1, 0.5, rng), dama::ConfigError);
}

TEST_CASE("adaptive_mask reproduces the hand-traced exchange") {
    // L=8, ratio=0.75: len_keep=2, loss_len=4, overlap_len=1.
    auto m1 = mask_from_bits({1, 1, 0, 1, 1, 1, 0, 1}, 0.75);
    std::vector<double> loss = {0.9, 0.1, 0.0, 0.5, 0.8, 0.7, 0.0, 0.2};
    auto m2 = adaptive_mask(m1, loss, 0.75, 0.5);
    REQUIRE(m2.bits == std::vector<std::uint8_t>{1, 0, 0, 1, 1, 1, 1, 1});
    REQUIRE(m2.visible_indices() == std::vector<int>{1, 2});
}

TEST_CASE("ratio 0.5 with full overlap undoes the inversion") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const int length = 8 + 2 * rng.uniform_int(32);
        auto m1 = random_mask(length, 0.5, rng);
        std::vector<double> loss(static_cast<std::size_t>(length));
        for (auto& v : loss) v = rng.uniform(1e-6, 1.0);
        auto m2 = adaptive_mask(m1, loss, 0.5, 1.0);
        REQUIRE(m2.bits == m1.bits);
    }
}

TEST_CASE("adaptive_mask matches the reference executor on random instances") {
    Rng rng(4242);
    for (int trial = 0; trial < 500; ++trial) {
        const int length = 8 + rng.uniform_int(249);
        const double ratio = 0.5 + 0.1 * rng.uniform_int(5);
        const double overlap = std::vector<double>{0.0, 0.25, 0.5, 1.0}[static_cast<std::size_t>(rng.uniform_int(4))];
        auto m1 = random_mask(length, ratio, rng);
        std::vector<double> loss(static_cast<std::size_t>(length));
        for (auto& v : loss) v = rng.uniform(1e-6, 1.0);
        auto m2 = adaptive_mask(m1, loss, ratio, overlap);
        auto ref = testsupport::adaptive_mask_reference(m1.bits, loss, ratio, overlap);
        REQUIRE(m2.bits == ref);
    }
}

TEST_CASE("mask pair invariants hold for all valid inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const int length = 8 + rng.uniform_int(249);
        const double ratio = 0.5 + 0.1 * rng.uniform_int(5);
        const double overlap = rng.uniform(0.0, 1.0);
        auto m1 = random_mask(length, ratio, rng);
        std::vector<double> loss(static_cast<std::size_t>(length));
        for (auto& v : loss) v = rng.uniform(1e-6, 1.0);
        auto m2 = adaptive_mask(m1, loss, ratio, overlap);

        const int len_keep = dama::keep_count(length, ratio);
        const int overlap_len = dama::overlap_count(len_keep, overlap);

        // mask-ratio preservation
        REQUIRE(m2.masked_count() == m1.masked_count());
        REQUIRE(m2.visible_count() == len_keep);

        // overlap exactness
        int both_visible = 0;
        for (int i = 0; i < length; ++i)
            if (!m1.bits[static_cast<std::size_t>(i)] && !m2.bits[static_cast<std::size_t>(i)]) ++both_visible;
        REQUIRE(both_visible == overlap_len);

        // newly visible patches are exactly the lowest-loss masked(m1) members
        std::vector<int> newly_visible;
        for (int i = 0; i < length; ++i)
            if (m1.bits[static_cast<std::size_t>(i)] && !m2.bits[static_cast<std::size_t>(i)])
                newly_visible.push_back(i);
        REQUIRE(static_cast<int>(newly_visible.size()) == len_keep - overlap_len);
        double max_new = -1.0, min_kept = 2.0;
        for (int i : newly_visible) max_new = std::max(max_new, loss[static_cast<std::size_t>(i)]);
        for (int i = 0; i < length; ++i)
            if (m1.bits[static_cast<std::size_t>(i)] && m2.bits[static_cast<std::size_t>(i)])
                min_kept = std::min(min_kept, loss[static_cast<std::size_t>(i)]);
        if (!newly_visible.empty() && min_kept < 2.0) REQUIRE(max_new <= min_kept);
    }
}

TEST_CASE("adaptive_mask is invariant under strictly monotone loss transforms") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int length = 16 + rng.uniform_int(64);
        auto m1 = random_mask(length, 0.8, rng);
        std::vector<double> loss(static_cast<std::size_t>(length)), warped(static_cast<std::size_t>(length));
        for (std::size_t i = 0; i < loss.size(); ++i) {
            loss[i] = rng.uniform(1e-6, 1.0);
            warped[i] = std::exp(3.0 * loss[i]) + 7.0;
        }
        auto a = adaptive_mask(m1, loss, 0.8, 0.5);
        auto b = adaptive_mask(m1, warped, 0.8, 0.5);
        REQUIRE(a.bits == b.bits);
    }
}

TEST_CASE("adaptive_mask rejects unsupported ratios and mismatched lengths") {
    Rng rng(3);
    auto m1 = random_mask(16, 0.5, rng);
    std::vector<double> loss(16, 0.5);
    REQUIRE_THROWS_AS(adaptive_mask(m1, loss, 0.4, 0.5), dama::ConfigError);
    std::vector<double> short_loss(15, 0.5);
    REQUIRE_THROWS_AS(adaptive_mask(m1, short_loss, 0.5, 0.5), dama::ShapeError);
}

TEST_CASE("random_overlap_mask keeps the exchange invariants without ranking") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const int length = 8 + rng.uniform_int(120);
        const double ratio = 0.5 + 0.1 * rng.uniform_int(5);
        auto m1 = random_mask(length, ratio, rng);
        auto m2 = random_overlap_mask(m1, ratio, 0.5, rng);
        REQUIRE(m2.masked_count() == m1.masked_count());
        const int len_keep = dama::keep_count(length, ratio);
        int both_visible = 0;
        for (int i = 0; i < length; ++i)
            if (!m1.bits[static_cast<std::size_t>(i)] && !m2.bits[static_cast<std::size_t>(i)]) ++both_visible;
        REQUIRE(both_visible == dama::overlap_count(len_keep, 0.5));
    }
}

TEST_CASE("mask_stats reports the traced example and degenerate cases") {
    auto m1 = mask_from_bits({1, 1, 0, 1, 1, 1, 0, 1}, 0.75);
    std::vector<double> loss = {0.9, 0.1, 0.0, 0.5, 0.8, 0.7, 0.0, 0.2};
    auto m2 = adaptive_mask(m1, loss, 0.75, 0.5);
    dama::MaskPair pair{m1, m2, loss, 0.5};
    auto stats = dama::mask_stats(pair);
    REQUIRE(stats.overlap == 1);
    REQUIRE(stats.visible_1 == 2);
    REQUIRE(stats.visible_2 == 2);
    REQUIRE(stats.mean_loss_masked2 >= stats.mean_loss_visible2);

    // uniform losses: the ordering holds with equality
    Rng rng(8);
    auto u1 = random_mask(16, 0.75, rng);
    std::vector<double> uniform(16, 0.3);
    auto u2 = adaptive_mask(u1, uniform, 0.75, 0.5);
    auto ustats = dama::mask_stats({u1, u2, uniform, 0.5});
    REQUIRE_THAT(ustats.mean_loss_masked2, Catch::Matchers::WithinAbs(ustats.mean_loss_visible2, 1e-12));

    // zero overlap ratio
    auto z2 = adaptive_mask(u1, uniform, 0.75, 0.0);
    auto zstats = dama::mask_stats({u1, z2, uniform, 0.0});
    REQUIRE(zstats.overlap == 0);
}
