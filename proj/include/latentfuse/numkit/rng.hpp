#pragma once

#include <cstdint>
#include <random>

#include "latentfuse/numkit/tensor.hpp"

namespace latentfuse::numkit {

/// Seeded, splittable random stream.
///
/// The engine is mt19937_64 seeded through a SplitMix64 mix of (seed, stream),
/// and every distribution is computed here rather than through <random>
/// distributions, so a given (seed, stream, call sequence) reproduces the
/// same numbers on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// Independent child stream; children with different ids never share state.
    Rng split(std::uint64_t child) const;

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n);
    double normal();
    double normal(double mean, double std) { return mean + std * normal(); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

/// i.i.d. N(mean, std^2) tensor. std must be non-negative.
Tensor rng_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std);

}  // namespace latentfuse::numkit
