#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace civic {

/// Seeded generator with platform-independent derived distributions.
///
/// std::mt19937_64 output is fixed by the standard, but the library's
/// distributions are not, so every draw used by the pipeline goes through
/// the helpers here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Standard normal via Box-Muller.
    double normal();

    bool bernoulli(double p) { return uniform01() < p; }

    template <class T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Derives an independent child seed; used to give each sub-task its own stream.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    double spare_normal_{0.0};
    bool has_spare_{false};
};

}  // namespace civic
