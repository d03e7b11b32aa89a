#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace atvd {

// Counter-derivable PRNG (splitmix64 core). Every consumer of randomness gets
// its own stream derived from (seed, path...), so results never depend on
// evaluation order across workers, phases, or resumption points.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t a, uint64_t b) {
        // one splitmix64 round over a ^ golden-ratio-scrambled b
        uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static Rng derive(uint64_t seed, std::initializer_list<uint64_t> path) {
        uint64_t s = seed;
        for (uint64_t p : path) s = mix(s, p);
        return Rng(s);
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // standard normal via Box-Muller; consumes exactly two uniforms per draw
    // so the stream position is draw-count deterministic
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

// Stream tags for derived RNG paths; values are part of the reproducibility
// contract (changing them changes every downstream draw).
namespace stream {
inline constexpr uint64_t dataset_record = 0x01;
inline constexpr uint64_t init = 0x02;
inline constexpr uint64_t batch_index = 0x03;
inline constexpr uint64_t augment = 0x04;
inline constexpr uint64_t reparam_disc = 0x05;
inline constexpr uint64_t reparam_gen = 0x06;
inline constexpr uint64_t diff_t = 0x07;
inline constexpr uint64_t diff_eps = 0x08;
inline constexpr uint64_t sample = 0x09;
inline constexpr uint64_t clean_image = 0x0a;
} // namespace stream

} // namespace atvd
