#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "m2r2/crl/crl.hpp"
#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/panet/panet.hpp"
#include "m2r2/random.hpp"

using namespace m2r2;

namespace {

constexpr int kCases = 1000;

}  // namespace

TEST_CASE("attention weights are a distribution") {
    Rng rng(101);
    int failures = 0;
    for (int i = 0; i < kCases; ++i) {
        const std::size_t k = 1 + uniform_index(rng, 12), dq = 1 + uniform_index(rng, 6), dv = 1 + uniform_index(rng, 6);
        const double spread = std::pow(10.0, uniform(rng, -2, 2));
        Graph g;
        std::vector<Var> memory;
        for (std::size_t j = 0; j < k; ++j) memory.push_back(g.constant(normal_tensor(rng, {dv}, spread)));
        const Var q = g.constant(normal_tensor(rng, {dq}, spread));
        const Var wt = g.constant(normal_tensor(rng, {dv, dq}, 1.0));
        const auto a = panet::attend(memory, q, wt);
        double total = 0;
        bool ok = a.weights.value().all_finite();
        for (double w : a.weights.value().values()) {
            ok &= w >= 0 && w <= 1;
            total += w;
        }
        ok &= std::abs(total - 1) < 1e-9;
        failures += !ok;
    }
    CHECK(failures == 0);
}

TEST_CASE("GRU states stay between the previous state and the candidate bound") {
    Rng rng(102);
    int failures = 0;
    for (int i = 0; i < kCases; ++i) {
        const std::size_t in = 1 + uniform_index(rng, 5), hid = 1 + uniform_index(rng, 5);
        GruWeights w = GruWeights::create("gru", in, hid, rng);
        for (auto* p : {&w.w_z, &w.u_z, &w.b_z, &w.w_r, &w.u_r, &w.b_r, &w.w_h, &w.u_h, &w.b_h})
            p->value = normal_tensor(rng, p->value.shape(), 2.0);
        Graph g;
        const Tensor h0 = normal_tensor(rng, {hid}, 0.8);
        const Var h = panet::gru_cell(g.constant(normal_tensor(rng, {in}, 3.0)), g.constant(h0), w.freeze(g));
        // h' = h + z (c - h) is a convex combination of h and c with |c| < 1.
        for (std::size_t j = 0; j < hid; ++j) {
            const double lo = std::min(h0[j], -1.0), hi = std::max(h0[j], 1.0);
            if (!(h.value()[j] >= lo && h.value()[j] <= hi)) ++failures;
        }
    }
    CHECK(failures == 0);
}

TEST_CASE("every masked turn keeps at least one modality") {
    Rng rng(103);
    int failures = 0;
    for (int i = 0; i < kCases; ++i) {
        data::SynthSpec spec;
        spec.seed = rng();
        spec.dims = {1, 1, 1};
        spec.min_turns = 1;
        spec.max_turns = 6;
        const auto ds = data::generate_synthetic(spec, 1 + uniform_index(rng, 4));
        const double eta = uniform(rng, 0, data::kMaxMissingRate);
        const auto masks = data::generate_mask(ds, eta, rng());
        for (const auto& m : masks)
            for (const auto& row : m.observed) failures += std::none_of(row.begin(), row.end(), [](bool b) { return b; });
        // Exact count of absent slots.
        const double slots = 3.0 * static_cast<double>(ds.total_turns());
        failures += std::abs(data::missing_rate(masks) * slots - std::round(eta * slots)) > 1e-9;
    }
    CHECK(failures == 0);
}

TEST_CASE("classification loss is nonnegative and vanishes on correct predictions") {
    Rng rng(104);
    int negative = 0, nonzero_on_correct = 0;
    for (int i = 0; i < kCases; ++i) {
        const std::size_t k = 2 + uniform_index(rng, 5), d = 1 + uniform_index(rng, 5);
        std::vector<std::optional<Tensor>> cents;
        for (std::size_t c = 0; c < k; ++c) cents.emplace_back(normal_tensor(rng, {d}, 1.0));
        const Tensor h = normal_tensor(rng, {d}, 1.5);
        const std::size_t label = uniform_index(rng, k);
        negative += crl::classification_loss(h.data(), label, cents) < 0;
        const std::size_t predicted = crl::predict_from_h(h.data(), cents);
        nonzero_on_correct += crl::classification_loss(h.data(), predicted, cents) != 0.0;
    }
    CHECK(negative == 0);
    CHECK(nonzero_on_correct == 0);
}

TEST_CASE("reconstruction loss ignores the contents of absent slots") {
    Rng rng(105);
    data::SynthSpec spec;
    spec.dims = {2, 3, 2};
    spec.min_turns = 2;
    spec.max_turns = 5;
    const auto ds = data::generate_synthetic(spec, 4);
    std::vector<std::size_t> lengths;
    for (const auto& c : ds.conversations) lengths.push_back(c.length());
    crl::CrlConfig cfg;
    cfg.h_dim = 3;
    cfg.hidden_width = 6;
    cfg.hidden_layers = 1;
    const auto state = crl::CrlState::create(cfg, ds.dims, 4, lengths);
    int failures = 0;
    for (int i = 0; i < kCases; ++i) {
        const auto masks = data::generate_mask(ds, uniform(rng, 0.1, 0.6), rng());
        const auto batches = crl::make_observed(ds, masks, nullptr);
        const std::size_t n = uniform_index(rng, batches.size());
        const Tensor h = normal_tensor(rng, {batches[n].turns, 3}, 1.0);
        auto noisy = batches[n];
        for (std::size_t m = 0; m < noisy.features.size(); ++m)
            for (std::size_t t = 0; t < noisy.turns; ++t)
                if (!noisy.observed[m][t])
                    for (std::size_t j = 0; j < noisy.features[m].cols(); ++j) noisy.features[m].at(t, j) = normal(rng, 0, 100);
        failures += crl::reconstruction_loss(state, batches[n], h) != crl::reconstruction_loss(state, noisy, h);
    }
    CHECK(failures == 0);
}
