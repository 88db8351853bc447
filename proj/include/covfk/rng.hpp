#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace covfk {

// Counter-based random numbers: every value is a pure function of
// (seed, stream, counter), so parallel workers can draw from disjoint
// streams without shared state and results never depend on scheduling.
struct RngConfig {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    friend bool operator==(const RngConfig&, const RngConfig&) = default;
};

namespace detail {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(RngConfig cfg) noexcept {
    return mix64(mix64(cfg.seed) ^ mix64(cfg.stream ^ 0x5851f42d4c957f2dULL));
}

} // namespace detail

class CounterRng {
public:
    explicit CounterRng(RngConfig cfg) : key_(detail::stream_key(cfg)) {}

    // 64 uniform bits at a given counter
    std::uint64_t bits(std::uint64_t counter) const noexcept {
        return detail::mix64(key_ + counter * 0x9e3779b97f4a7c15ULL);
    }

    // uniform in (0,1]
    double uniform(std::uint64_t counter) const noexcept {
        return static_cast<double>((bits(counter) >> 11) + 1) * 0x1.0p-53;
    }

    // standard normal, Box-Muller; consumes counters 2i and 2i+1
    double gaussian(std::uint64_t i) const noexcept {
        const double u1 = uniform(2 * i);
        const double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t key_;
};

// Child i of (seed, stream) is (seed, mix64(stream + (i+1)*phi64)); the
// derivation is fixed so stream tables can be frozen in golden files.
inline std::vector<RngConfig> split_streams(RngConfig parent, std::size_t n) {
    if (n < 1) throw std::invalid_argument("split_streams: n must be >= 1");
    std::vector<RngConfig> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(RngConfig{parent.seed,
                                detail::mix64(parent.stream + (i + 1) * 0x9e3779b97f4a7c15ULL)});
    }
    return out;
}

} // namespace covfk
