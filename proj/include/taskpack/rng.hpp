#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace taskpack {

// Self-contained splitmix64 generator. Standard-library distributions are
// not bitwise portable across implementations, so everything that needs
// reproducible streams goes through this.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) {
        return static_cast<float>(uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }

    // Box-Muller, no cached spare so the stream position is call-count independent.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Uniform integer in [0, n), n > 0. Multiply-shift bound, deterministic.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::int64_t range(std::int64_t lo, std::int64_t hi) { // inclusive lo, exclusive hi
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Stream derivation: distinct labels yield decorrelated child seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0x632BE59BD9B4E019ULL * (stream + 1)));
    return r.next_u64();
}

} // namespace taskpack
