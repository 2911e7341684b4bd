#pragma once

// Self-contained deterministic RNG. <random> distributions are not guaranteed
// to produce the same stream on every standard library, and every experiment
// here has to be bit-reproducible from a single master seed, so the generator,
// the normal transform and the shuffles are all spelled out.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace agsd::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable 64-bit hash of (master, purpose, a, b). Every seed in the project is
// derived through this, so runs are reproducible and sub-streams (per round,
// per client, per restart) never collide by accident.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : purpose) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    std::uint64_t s = master ^ h;
    std::uint64_t r = splitmix64(s);
    s ^= a;
    r ^= splitmix64(s);
    s ^= b;
    r ^= splitmix64(s);
    std::uint64_t fin = r;
    return splitmix64(fin);
}

// xoshiro256** seeded via splitmix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform in [0, n); unbiased via rejection
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    // standard normal via Box-Muller (no cached spare: keeps the stream layout obvious)
    double normal() {
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4]{};
};

inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng r(seed);
    r.shuffle(idx);
    return idx;
}

// k distinct values from [0, n), returned sorted ascending
inline std::vector<int> sample_without_replacement(int n, int k, std::uint64_t seed) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
    std::vector<int> idx = shuffled_indices(n, seed);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace agsd::rng
