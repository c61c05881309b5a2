#pragma once

#include <cstdint>
#include <random>

#include "m2r2/numerics/tensor.hpp"

namespace m2r2 {

using Rng = std::mt19937_64;

/// splitmix64 mix of (seed, stream); used to derive independent per-phase seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double uniform(Rng& rng, double lo = 0.0, double hi = 1.0);
std::size_t uniform_index(Rng& rng, std::size_t n);

Tensor normal_tensor(Rng& rng, Shape shape, double stddev);
/// Glorot-uniform initialization for a [fan_out x fan_in] weight.
Tensor glorot_uniform(Rng& rng, std::size_t fan_out, std::size_t fan_in);

}  // namespace m2r2
