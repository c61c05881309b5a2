#include "m2r2/random.hpp"

#include <cmath>

namespace m2r2 {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double normal(Rng& rng, double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(rng);
}

double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = normal(rng, 0.0, stddev);
    return t;
}

Tensor glorot_uniform(Rng& rng, std::size_t fan_out, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_out, fan_in});
    for (auto& v : t.values()) v = uniform(rng, -limit, limit);
    return t;
}

}  // namespace m2r2
