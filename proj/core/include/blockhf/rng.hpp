#pragma once

#include <cstdint>

#include "blockhf/tensor.hpp"

namespace blockhf {

// Deterministic generator: xoshiro256** seeded through splitmix64. The
// algorithm is fixed so that a given seed produces the same stream on every
// platform -- std::mt19937 distributions are not portable, this is.
//
// Single-owner mutable state; never share one instance across concurrent
// tasks. Fork children instead.
class Rng {
public:
    static constexpr const char* algorithm = "xoshiro256**";

    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform double in [0, 1), 53 mantissa bits.
    double uniform();

    // Uniform double in [lo, hi); requires lo < hi.
    double uniform(double lo, double hi);

    // Uniform integer in [0, bound); rejection sampling, unbiased.
    std::size_t uniform_index(std::size_t bound);

    // Child generator seeded from this stream.
    Rng fork();

private:
    std::uint64_t s_[4];
};

// Tensor of uniform draws in [lo, hi); advances rng deterministically.
Tensor seeded_uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng);

}  // namespace blockhf
