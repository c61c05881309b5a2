#include "m2r2/data/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "m2r2/random.hpp"

namespace m2r2::data {

double missing_rate(const MaskSet& masks) {
    std::size_t absent = 0;
    std::size_t slots = 0;
    for (const auto& m : masks) {
        absent += m.absent_count();
        slots += m.turns() * kModalityCount;
    }
    return slots == 0 ? 0.0 : static_cast<double>(absent) / static_cast<double>(slots);
}

MaskSet generate_mask(const Dataset& dataset, double eta, std::uint64_t seed) {
    if (!(eta >= 0.0) || eta > kMaxMissingRate + 1e-12)
        throw std::invalid_argument("missing rate " + std::to_string(eta) + " outside [0, " +
                                    std::to_string(kMaxMissingRate) + "]");
    MaskSet masks = full_masks(dataset);

    struct Slot {
        std::size_t conv, turn, modality;
    };
    std::vector<Slot> slots;
    for (std::size_t n = 0; n < dataset.conversations.size(); ++n)
        for (std::size_t t = 0; t < dataset.conversations[n].length(); ++t)
            for (std::size_t m = 0; m < kModalityCount; ++m) slots.push_back({n, t, m});
    const std::size_t max_absent = slots.size() / kModalityCount * (kModalityCount - 1);
    const auto target = std::min(static_cast<std::size_t>(std::llround(eta * static_cast<double>(slots.size()))),
                                 max_absent);

    Rng rng(seed);
    std::vector<std::size_t> order(slots.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    std::size_t absent = 0;
    for (std::size_t i = 0; i < target; ++i) {
        const auto& s = slots[order[i]];
        masks[s.conv].observed[s.turn][s.modality] = false;
        ++absent;
    }

    auto observed_in_row = [&](std::size_t n, std::size_t t) {
        const auto& row = masks[n].observed[t];
        return static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
    };

    // Repair rows that lost every modality.
    for (std::size_t n = 0; n < masks.size(); ++n)
        for (std::size_t t = 0; t < masks[n].turns(); ++t)
            if (observed_in_row(n, t) == 0) {
                masks[n].observed[t][uniform_index(rng, kModalityCount)] = true;
                --absent;
            }

    // Re-balance: remove further observed slots from rows that can spare one.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& s = slots[i];
        if (masks[s.conv].observed[s.turn][s.modality]) eligible.push_back(i);
    }
    while (absent < target && !eligible.empty()) {
        const std::size_t k = uniform_index(rng, eligible.size());
        const auto& s = slots[eligible[k]];
        eligible[k] = eligible.back();
        eligible.pop_back();
        if (observed_in_row(s.conv, s.turn) < 2) continue;
        masks[s.conv].observed[s.turn][s.modality] = false;
        ++absent;
    }
    return masks;
}

Dataset apply_mask(const Dataset& dataset, const MaskSet& masks) {
    validate_masks(dataset, masks);
    Dataset out = dataset;
    for (std::size_t n = 0; n < out.conversations.size(); ++n) {
        auto& conv = out.conversations[n];
        for (std::size_t t = 0; t < conv.length(); ++t)
            for (std::size_t m = 0; m < kModalityCount; ++m)
                if (!masks[n].observed[t][m]) conv.utterances[t].features[m].reset();
    }
    validate(out);
    return out;
}

}  // namespace m2r2::data
