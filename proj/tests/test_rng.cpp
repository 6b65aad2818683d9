#include <catch2/catch_amalgamated.hpp>

#include "dama/rng.hpp"

using dama::Rng;

TEST_CASE("same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
    Rng r(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("normal has roughly standard moments") {
    Rng r(3);
    double sum = 0, sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        sum += v;
        sq += v * v;
    }
    REQUIRE(std::abs(sum / n) < 0.05);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("uniform_int is bounded and deterministic") {
    Rng a(11), b(11);
    for (int i = 0; i < 1000; ++i) {
        int va = a.uniform_int(17);
        REQUIRE(va >= 0);
        REQUIRE(va < 17);
        REQUIRE(va == b.uniform_int(17));
    }
}

TEST_CASE("serialize round-trips mid-stream, including the normal cache") {
    Rng r(99);
    for (int i = 0; i < 5; ++i) r.normal();  // leaves a cached spare
    auto bytes = r.serialize();
    Rng copy = Rng::deserialize(bytes.data(), bytes.size());
    REQUIRE(copy == r);
    for (int i = 0; i < 50; ++i) REQUIRE(copy.normal() == r.normal());
    for (int i = 0; i < 50; ++i) REQUIRE(copy.next_u64() == r.next_u64());
}

TEST_CASE("child streams differ from the parent and from each other") {
    Rng parent(5);
    Rng c0 = Rng::child(5, 0);
    Rng c1 = Rng::child(5, 1);
    REQUIRE(c0.next_u64() != c1.next_u64());
    REQUIRE(Rng::child(5, 0).next_u64() != parent.next_u64());
}
