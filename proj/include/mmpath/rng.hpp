#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace mmpath {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random stream. All distributions are hand-rolled on top of
// mt19937_64 so that sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // Spread the seed so nearby seeds give unrelated streams.
        uint64_t s = seed;
        std::seed_seq seq{splitmix64(s), splitmix64(s), splitmix64(s), splitmix64(s)};
        eng_.seed(seq);
    }

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    // Standard normal via Box-Muller (one draw per call, second discarded
    // to keep the stream position independent of call pairing).
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

// Named substream: every independent source of randomness hangs off the
// single run seed through a stable name, so adding a consumer never
// perturbs the others.
inline Rng substream(uint64_t seed, std::string_view name) {
    return Rng(seed ^ fnv1a(name));
}

inline Rng substream(uint64_t seed, std::string_view name, uint64_t index) {
    uint64_t h = seed ^ fnv1a(name);
    uint64_t mix = h + 0x632be59bd9b4e019ULL * (index + 1);
    return Rng(splitmix64(mix));
}

} // namespace mmpath
