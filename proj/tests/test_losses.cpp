#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dama/losses.hpp"
#include "dama/masking.hpp"
#include "dama/rng.hpp"
#include "dama/tensor.hpp"
#include "support/gradcheck.hpp"

using dama::BasicTensor;
using dama::Mask;
using dama::Rng;
using dama::Tape;
using Tensor = BasicTensor<float>;

namespace {

Mask mask_from_bits(std::vector<std::uint8_t> bits, double ratio) {
    Mask m;
    m.bits = std::move(bits);
    m.ratio = ratio;
    return m;
}

}  // namespace

TEST_CASE("pixel_loss basics") {
    Tape<float> tape;
    Rng rng(1);
    std::vector<float> tv(4 * 3);
    for (auto& v : tv) v = static_cast<float>(rng.uniform());
    auto target = Tensor::from({4, 3}, tv);
    auto mask = mask_from_bits({1, 0, 1, 0}, 0.5);

    SECTION("perfect prediction scores zero") {
        auto pred = Tensor::from({4, 3}, tv, true);
        auto r = dama::pixel_loss(tape, pred, target, mask);
        REQUIRE(r.scalar.item() == 0.0f);
    }

    SECTION("constant error e on one masked patch gives e^2") {
        auto one_mask = mask_from_bits({0, 1, 0, 0}, 0.25);
        auto pv = tv;
        for (int j = 0; j < 3; ++j) pv[static_cast<std::size_t>(3 + j)] += 0.5f;
        auto pred = Tensor::from({4, 3}, pv, true);
        auto r = dama::pixel_loss(tape, pred, target, one_mask);
        REQUIRE_THAT(r.scalar.item(), Catch::Matchers::WithinRel(0.25f, 1e-5f));
    }

    SECTION("two masked patches with MSEs 0.1 and 0.3 average to 0.2") {
        auto pv = tv;
        const float e1 = std::sqrt(0.1f), e2 = std::sqrt(0.3f);
        for (int j = 0; j < 3; ++j) pv[static_cast<std::size_t>(j)] += e1;
        for (int j = 0; j < 3; ++j) pv[static_cast<std::size_t>(6 + j)] += e2;
        auto pred = Tensor::from({4, 3}, pv, true);
        auto r = dama::pixel_loss(tape, pred, target, mask);
        REQUIRE_THAT(r.scalar.item(), Catch::Matchers::WithinRel(0.2f, 1e-4f));
        REQUIRE(r.per_patch[1] == 0.0);
        REQUIRE(r.per_patch[3] == 0.0);
        REQUIRE_THAT(r.per_patch[0], Catch::Matchers::WithinRel(0.1, 1e-4));
        REQUIRE_THAT(r.per_patch[2], Catch::Matchers::WithinRel(0.3, 1e-4));
    }
}

TEST_CASE("pixel_loss is bit-invariant to visible patch content") {
    Tape<float> tape;
    Rng rng(2);
    std::vector<float> tv(6 * 4), pv(6 * 4);
    for (auto& v : tv) v = static_cast<float>(rng.uniform());
    for (auto& v : pv) v = static_cast<float>(rng.uniform());
    auto mask = mask_from_bits({1, 0, 1, 0, 1, 1}, 0.66);

    auto r1 = dama::pixel_loss(tape, Tensor::from({6, 4}, pv, true), Tensor::from({6, 4}, tv), mask);

    // rewrite every visible row in both tensors
    for (int i : mask.visible_indices())
        for (int j = 0; j < 4; ++j) {
            pv[static_cast<std::size_t>(i * 4 + j)] = static_cast<float>(rng.uniform() * 10);
            tv[static_cast<std::size_t>(i * 4 + j)] = static_cast<float>(rng.uniform() * 10);
        }
    auto r2 = dama::pixel_loss(tape, Tensor::from({6, 4}, pv, true), Tensor::from({6, 4}, tv), mask);
    REQUIRE(r1.scalar.item() == r2.scalar.item());
}

TEST_CASE("pixel_loss rejects an empty masked set") {
    Tape<float> tape;
    auto pred = Tensor::zeros({2, 2}, true);
    auto target = Tensor::zeros({2, 2});
    REQUIRE_THROWS_AS(dama::pixel_loss(tape, pred, target, mask_from_bits({0, 0}, 0.0)), dama::ContractError);
}

TEST_CASE("smooth_l1 evaluates the piecewise form at beta = 2") {
    Tape<float> tape;
    auto target = Tensor::zeros({1});

    auto at = [&](float diff) {
        auto pred = Tensor::from({1}, {diff}, true);
        return dama::smooth_l1(tape, pred, target, 2.0).item();
    };
    REQUIRE(at(0.0f) == 0.0f);
    REQUIRE_THAT(at(1.0f), Catch::Matchers::WithinRel(0.25f, 1e-6f));   // 0.5*1^2/2
    REQUIRE_THAT(at(3.0f), Catch::Matchers::WithinRel(2.0f, 1e-6f));    // 3 - 1
    REQUIRE_THAT(at(-3.0f), Catch::Matchers::WithinRel(2.0f, 1e-6f));

    // continuity across the knee
    const float eps = 1e-4f;
    REQUIRE(std::abs(at(2.0f - eps) - at(2.0f + eps)) < 1e-3f);
}

TEST_CASE("smooth_l1 gradient follows d/beta inside and saturates at 1 outside") {
    auto grad_at = [](float diff) {
        Tape<float> tape;
        auto pred = Tensor::from({1}, {diff}, true);
        auto target = Tensor::zeros({1});
        auto loss = dama::smooth_l1(tape, pred, target, 2.0);
        tape.backward(loss);
        return pred.grad()[0];
    };
    REQUIRE_THAT(grad_at(1.0f), Catch::Matchers::WithinRel(0.5f, 1e-5f));
    REQUIRE_THAT(grad_at(5.0f), Catch::Matchers::WithinRel(1.0f, 1e-5f));
    REQUIRE_THAT(grad_at(-5.0f), Catch::Matchers::WithinRel(-1.0f, 1e-5f));
    REQUIRE_THAT(grad_at(100.0f), Catch::Matchers::WithinRel(1.0f, 1e-5f));
}

TEST_CASE("smooth_l1 rejects non-positive beta and mismatched shapes") {
    Tape<float> tape;
    auto a = Tensor::zeros({2, 2});
    auto b = Tensor::zeros({2, 2});
    REQUIRE_THROWS_AS(dama::smooth_l1(tape, a, b, 0.0), dama::ConfigError);
    REQUIRE_THROWS_AS(dama::smooth_l1(tape, a, Tensor::zeros({2, 3}), 2.0), dama::ShapeError);
}

TEST_CASE("smooth_l1 gradients agree with finite differences") {
    Rng rng(7);
    auto r = testsupport::grad_check(
        [](auto& tape, auto& xs) { return dama::smooth_l1(tape, xs[0], xs[1], 0.5); },
        {{4, 5}, {4, 5}}, 20, rng);
    INFO(r.max_rel_err);
    REQUIRE(r.ok(1e-3));
}

TEST_CASE("total_loss composes the dual objective") {
    Tape<float> tape;
    auto lp1 = Tensor::scalar(0.4f);
    auto lp2 = Tensor::scalar(0.6f);
    auto lf = Tensor::scalar(0.02f);

    REQUIRE_THAT(dama::total_loss(tape, lp1, lp2, lf, 1.0).item(),
                 Catch::Matchers::WithinRel(1.02f, 1e-6f));
    REQUIRE_THAT(dama::total_loss(tape, lp1, lp2, lf, 0.0).item(),
                 Catch::Matchers::WithinRel(1.0f, 1e-6f));  // pixel-only objective

    auto nan = Tensor::scalar(std::numeric_limits<float>::quiet_NaN());
    REQUIRE_THROWS_AS(dama::total_loss(tape, lp1, lp2, nan, 1.0), dama::NumericError);
}

TEST_CASE("scaling all patch losses by c > 0 leaves the adaptive mask unchanged") {
    Rng rng(9);
    auto m1 = dama::random_mask(32, 0.75, rng);
    std::vector<double> loss(32);
    for (auto& v : loss) v = rng.uniform(1e-4, 1.0);
    auto scaled = loss;
    for (auto& v : scaled) v *= 37.5;
    auto a = dama::adaptive_mask(m1, loss, 0.75, 0.5);
    auto b = dama::adaptive_mask(m1, scaled, 0.75, 0.5);
    REQUIRE(a.bits == b.bits);
}

TEST_CASE("cross_entropy matches a hand-computed case and its gradient") {
    Tape<float> tape;
    auto logits = Tensor::from({1, 3}, {1.0f, 2.0f, 3.0f}, true);
    auto loss = dama::cross_entropy(tape, logits, {2});
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(static_cast<float>(lse - 3.0), 1e-5f));
    tape.backward(loss);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    REQUIRE_THAT(logits.grad()[2], Catch::Matchers::WithinAbs(static_cast<float>(std::exp(3.0) / z - 1.0), 1e-5f));

    Rng rng(10);
    auto r = testsupport::grad_check(
        [](auto& tape2, auto& xs) { return dama::cross_entropy(tape2, xs[0], {1, 0, 2}); },
        {{3, 4}}, 15, rng);
    INFO(r.max_rel_err);
    REQUIRE(r.ok(1e-3));
}
