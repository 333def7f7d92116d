#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Counter-based randomness. Every random draw in the engine is a pure
// function of (seed, stream, index) so parallel and serial runs agree.
namespace matprobe::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a) noexcept {
    return splitmix64(seed ^ splitmix64(a + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
    return derive(derive(seed, a), b);
}

/// Uniform in [0, 1) with 53 bits of resolution.
constexpr double to_unit(std::uint64_t h) noexcept {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, std::uint64_t index) noexcept {
    return to_unit(derive(seed, index));
}

/// Standard normal via Box-Muller on two derived uniforms.
inline double gaussian(std::uint64_t seed, std::uint64_t index) noexcept {
    const std::uint64_t h = derive(seed, index);
    const double u1 = (static_cast<double>(splitmix64(h) >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = to_unit(splitmix64(h ^ 0xd1b54a32d192ed03ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential stream for places that want an engine-like interface.
class Stream {
public:
    explicit Stream(std::uint64_t seed) noexcept : seed_(seed) {}
    double uniform() noexcept { return rng::uniform(seed_, counter_++); }
    double gaussian() noexcept { return rng::gaussian(seed_, counter_++); }
    std::uint64_t next() noexcept { return derive(seed_, counter_++); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace matprobe::rng
