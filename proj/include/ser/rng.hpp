#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace ser {

// Deterministic splitmix64 stream. Same seed -> same sequence on every
// platform and build; the single u64 state serializes into checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Box-Muller; avoids stdlib distribution implementation differences.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)],
                      v[static_cast<std::size_t>(uniform_int(i + 1))]);
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// Independent child seed for (base, stream); order-free and stable.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    Rng r(base ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    return r.next_u64();
}

inline std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace ser
