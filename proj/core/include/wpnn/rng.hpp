#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wpnn {

// Named seeded RNG streams. Streams derived from the same seed but different
// purpose tags ("channel", "noise", "init", "spsa", ...) are independent, so
// e.g. resampling the channel more often does not shift the noise draws.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view purpose)
        : RngStream(seed, fnv1a(purpose)) {}

    // Derived independent stream, e.g. one per parallel worker or trial.
    RngStream split(std::uint64_t index) const {
        return RngStream(mix(state0_, 0x9e3779b97f4a7c15ULL + index), state1_);
    }

    std::mt19937_64& engine() { return eng_; }

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }
    int bernoulli_sign() { return (eng_() & 1u) ? 1 : -1; }

private:
    RngStream(std::uint64_t s0, std::uint64_t s1)
        : state0_(s0), state1_(s1) {
        std::seed_seq seq{s0, s1};
        eng_.seed(seq);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return h;
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a + b;
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27; x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    std::uint64_t state0_, state1_;
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace wpnn
