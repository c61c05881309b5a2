#include "m2r2/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "m2r2/random.hpp"

namespace m2r2::data {

namespace {

constexpr std::uint64_t kMeansStream = 1;
constexpr std::uint64_t kCouplingStream = 2;
constexpr std::uint64_t kConversationStream = 1000;

}  // namespace

void validate(const SynthSpec& spec) {
    if (spec.num_parties == 0) throw std::invalid_argument("synthetic: num_parties must be >= 1");
    if (spec.num_classes == 0) throw std::invalid_argument("synthetic: num_classes must be >= 1");
    if (spec.min_turns == 0 || spec.max_turns < spec.min_turns)
        throw std::invalid_argument("synthetic: turn range must satisfy 1 <= min_turns <= max_turns");
    for (std::size_t m = 0; m < kModalityCount; ++m)
        if (spec.dims[m] == 0) throw std::invalid_argument("synthetic: modality dims must be >= 1");
    if (!(spec.noise > 0)) throw std::invalid_argument("synthetic: noise sigma must be > 0");
    if (!(spec.rho >= 0 && spec.rho <= 1)) throw std::invalid_argument("synthetic: rho must lie in [0, 1]");
    if (!(spec.switch_prob >= 0 && spec.switch_prob <= 1))
        throw std::invalid_argument("synthetic: switch_prob must lie in [0, 1]");
    if (!(spec.persistence >= 0 && spec.persistence <= 1))
        throw std::invalid_argument("synthetic: persistence must lie in [0, 1]");
    if (!spec.means.empty()) {
        if (spec.means.size() != spec.num_classes)
            throw std::invalid_argument("synthetic: means must list one entry per class");
        for (const auto& cm : spec.means)
            for (std::size_t m = 0; m < kModalityCount; ++m)
                if (cm[m].size() != spec.dims[m])
                    throw std::invalid_argument("synthetic: class mean has the wrong dimension");
    }
}

std::vector<std::array<std::vector<double>, kModalityCount>> class_means(const SynthSpec& spec) {
    if (!spec.means.empty()) return spec.means;
    Rng rng(derive_seed(spec.seed, kMeansStream));
    std::vector<std::array<std::vector<double>, kModalityCount>> means(spec.num_classes);
    for (auto& cm : means)
        for (std::size_t m = 0; m < kModalityCount; ++m) {
            cm[m].resize(spec.dims[m]);
            for (auto& v : cm[m]) v = spec.mean_scale * normal(rng);
        }
    return means;
}

std::vector<std::size_t> coupling_permutation(const SynthSpec& spec) {
    std::vector<std::size_t> perm(spec.num_classes);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(spec.seed, kCouplingStream));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    return perm;
}

Dataset generate_synthetic(const SynthSpec& spec, std::size_t num_conversations) {
    validate(spec);
    const auto means = class_means(spec);
    const auto perm = coupling_permutation(spec);

    Dataset ds;
    ds.dims = spec.dims;
    for (std::size_t c = 0; c < spec.num_classes; ++c) ds.classes.push_back("class_" + std::to_string(c));

    for (std::size_t n = 0; n < num_conversations; ++n) {
        Rng rng(derive_seed(spec.seed, kConversationStream + n));
        Conversation conv;
        conv.id = "synth_" + std::to_string(n);
        conv.num_parties = spec.num_parties;
        const std::size_t turns = spec.min_turns + uniform_index(rng, spec.max_turns - spec.min_turns + 1);
        std::size_t speaker = uniform_index(rng, spec.num_parties);
        std::size_t prev_label = 0;
        // Each party's latent emotion, unset until it first speaks.
        std::vector<std::optional<std::size_t>> state(spec.num_parties);
        for (std::size_t t = 0; t < turns; ++t) {
            if (t > 0 && spec.num_parties > 1 && uniform(rng) < spec.switch_prob) {
                const std::size_t other = uniform_index(rng, spec.num_parties - 1);
                speaker = other >= speaker ? other + 1 : other;
            }
            std::size_t label;
            if (t > 0 && uniform(rng) < spec.rho)
                label = perm[prev_label];
            else if (state[speaker] && uniform(rng) < spec.persistence)
                label = *state[speaker];
            else
                label = uniform_index(rng, spec.num_classes);
            state[speaker] = label;
            Utterance u;
            u.turn = t;
            u.speaker = speaker;
            u.label = label;
            for (std::size_t m = 0; m < kModalityCount; ++m) {
                FeatureVector x(spec.dims[m]);
                for (std::size_t i = 0; i < x.size(); ++i) x[i] = means[label][m][i] + spec.noise * normal(rng);
                u.features[m] = std::move(x);
            }
            conv.utterances.push_back(std::move(u));
            prev_label = label;
        }
        ds.conversations.push_back(std::move(conv));
    }
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double ratio, std::uint64_t seed) {
    if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("split ratio must lie in (0, 1)");
    const std::size_t n = dataset.conversations.size();
    if (n < 2) throw std::invalid_argument("split needs at least 2 conversations");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    auto first_count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    first_count = std::clamp<std::size_t>(first_count, 1, n - 1);
    std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_count));
    std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(first_count), order.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    Dataset a{dataset.dims, dataset.classes, {}};
    Dataset b{dataset.dims, dataset.classes, {}};
    for (auto i : first) a.conversations.push_back(dataset.conversations[i]);
    for (auto i : second) b.conversations.push_back(dataset.conversations[i]);
    return {std::move(a), std::move(b)};
}

}  // namespace m2r2::data
