#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>

namespace dflshield {

/// Seeded random source with platform-independent distributions.
///
/// std::mt19937_64 output is fully specified by the standard, but the
/// std::*_distribution adaptors are not, so reproducible scenario runs draw
/// through the helpers below instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n);

    /// Uniform real in [0, 1) with 53 bits of precision.
    double uniform01();

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal(double mean, double stddev);

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_normal_;
};

/// splitmix64 mix of a base seed and a stream id; used to give every node,
/// link and subsystem its own independent generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

namespace seed_stream {
inline constexpr std::uint64_t topology = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t model_init = 3;
inline constexpr std::uint64_t attack = 4;
inline constexpr std::uint64_t dataset = 5;
inline constexpr std::uint64_t fabric = 6;
inline constexpr std::uint64_t train_order_base = 1'000'000;
inline constexpr std::uint64_t mtd_base = 2'000'000;
inline constexpr std::uint64_t link_base = 3'000'000;
}  // namespace seed_stream

}  // namespace dflshield
