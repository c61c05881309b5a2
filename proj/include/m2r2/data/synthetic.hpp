#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "m2r2/data/dataset.hpp"

namespace m2r2::data {

/// Parameters of the synthetic conversation family.
///
/// Each turn's speaker is drawn from a switching process over Q parties, and
/// every party carries a latent emotion. The label of turn t is the speaker's
/// emotion: with probability `rho` it is the image of the previous turn's
/// label under a fixed seeded permutation (context coupling). Otherwise the
/// speaker's own chain steps: it keeps its last emotion with probability
/// `persistence` and draws uniformly otherwise. Each modality vector is the
/// class mean for that modality plus isotropic Gaussian noise.
struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t num_parties = 2;
    std::size_t num_classes = 4;
    std::size_t min_turns = 10;
    std::size_t max_turns = 14;
    ModalityDims dims{8, 8, 8};
    double noise = 0.5;
    double rho = 0.5;
    /// Probability that the floor passes to another party at each turn.
    double switch_prob = 0.8;
    /// Probability that a party's own emotion carries over to its next turn
    /// when the context coupling does not fire. The rest is a uniform draw.
    double persistence = 0.5;
    /// Scale of the seeded standard-normal class means when `means` is empty.
    double mean_scale = 2.0;
    /// means[c][m] is the mean vector of class c for modality m. Drawn from
    /// the seed when empty.
    std::vector<std::array<std::vector<double>, kModalityCount>> means;
};

void validate(const SynthSpec& spec);

/// Class means used by the generator: spec.means, or the seeded draw.
std::vector<std::array<std::vector<double>, kModalityCount>> class_means(const SynthSpec& spec);

/// The label permutation applied by the context coupling.
std::vector<std::size_t> coupling_permutation(const SynthSpec& spec);

Dataset generate_synthetic(const SynthSpec& spec, std::size_t num_conversations);

/// Conversation-level split: the first part receives round(ratio * n)
/// conversations (clamped so both parts are nonempty).
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double ratio, std::uint64_t seed);

}  // namespace m2r2::data
