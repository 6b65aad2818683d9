#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "dama/errors.hpp"

namespace dama {

// Deterministic splitmix64 generator. Everything stochastic in the project
// draws from this so that runs are reproducible bit-for-bit from a seed and
// the generator state can be serialized into checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    // Derives an independent stream, e.g. one per image or per fold.
    static Rng child(std::uint64_t seed, std::uint64_t stream) {
        Rng r(seed);
        r.state_ ^= 0x9E3779B97F4A7C15ull * (stream + 1);
        r.next_u64();
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw ContractError("Rng::uniform_int requires n > 0");
        int v = static_cast<int>(uniform() * n);
        return v < n ? v : n - 1;
    }

    // Standard normal via Box-Muller; the spare draw is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    // 17-byte little-endian state dump: u64 state, u8 cache flag, f64 cache.
    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out(17);
        for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(state_ >> (8 * i));
        out[8] = has_cached_ ? 1 : 0;
        std::uint64_t bits = 0;
        std::memcpy(&bits, &cached_, sizeof(bits));
        for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(9 + i)] = static_cast<std::uint8_t>(bits >> (8 * i));
        return out;
    }

    static constexpr std::size_t serialized_size() { return 17; }

    static Rng deserialize(const std::uint8_t* bytes, std::size_t len) {
        if (len < serialized_size()) throw FormatError("truncated rng state", len);
        Rng r;
        r.state_ = 0;
        for (int i = 0; i < 8; ++i) r.state_ |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        r.has_cached_ = bytes[8] != 0;
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[9 + i]) << (8 * i);
        std::memcpy(&r.cached_, &bits, sizeof(bits));
        return r;
    }

    bool operator==(const Rng& other) const {
        return state_ == other.state_ && has_cached_ == other.has_cached_ &&
               (!has_cached_ || cached_ == other.cached_);
    }

private:
    std::uint64_t state_ = 0;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace dama
