#include "m2r2/data/dataset.hpp"

#include <algorithm>

namespace m2r2::data {

const char* modality_name(std::size_t m) {
    switch (m) {
        case 0: return "audio";
        case 1: return "text";
        case 2: return "visual";
        default: return "unknown";
    }
}

std::size_t ModalityDims::operator[](std::size_t m) const {
    switch (m) {
        case 0: return audio;
        case 1: return text;
        case 2: return visual;
        default: throw std::out_of_range("modality index " + std::to_string(m));
    }
}

std::size_t ModalityMask::absent_count() const {
    std::size_t n = 0;
    for (const auto& row : observed)
        for (bool s : row) n += s ? 0 : 1;
    return n;
}

std::size_t Dataset::total_turns() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.length();
    return n;
}

std::size_t Dataset::max_parties() const {
    std::size_t q = 0;
    for (const auto& c : conversations) q = std::max(q, c.num_parties);
    return q;
}

void validate(const Dataset& dataset) {
    for (std::size_t m = 0; m < kModalityCount; ++m)
        if (dataset.dims[m] == 0)
            throw DatasetError(std::string("dimension of modality ") + modality_name(m) + " must be positive");
    if (dataset.classes.empty()) throw DatasetError("dataset declares no classes");
    for (const auto& conv : dataset.conversations) {
        const std::string where = "conversation '" + conv.id + "'";
        if (conv.num_parties == 0) throw DatasetError(where + ": num_parties must be >= 1");
        if (conv.utterances.empty()) throw DatasetError(where + ": no utterances");
        for (std::size_t t = 0; t < conv.utterances.size(); ++t) {
            const auto& u = conv.utterances[t];
            const std::string at = where + " turn " + std::to_string(t);
            if (u.turn != t) throw DatasetError(at + ": turn index " + std::to_string(u.turn) + " out of sequence");
            if (u.speaker >= conv.num_parties)
                throw DatasetError(at + ": speaker " + std::to_string(u.speaker) + " >= num_parties " +
                                   std::to_string(conv.num_parties));
            if (u.label >= dataset.num_classes())
                throw DatasetError(at + ": label " + std::to_string(u.label) + " out of range");
            bool any = false;
            for (std::size_t m = 0; m < kModalityCount; ++m) {
                if (!u.features[m]) continue;
                any = true;
                if (u.features[m]->size() != dataset.dims[m])
                    throw DatasetError(at + ": " + modality_name(m) + " has dimension " +
                                       std::to_string(u.features[m]->size()) + ", expected " +
                                       std::to_string(dataset.dims[m]));
            }
            if (!any) throw DatasetError(at + ": every modality is absent");
        }
    }
}

void validate_masks(const Dataset& dataset, const MaskSet& masks) {
    if (masks.size() != dataset.conversations.size())
        throw DatasetError("mask set covers " + std::to_string(masks.size()) + " conversations, dataset has " +
                           std::to_string(dataset.conversations.size()));
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const auto& conv = dataset.conversations[n];
        if (masks[n].turns() != conv.length())
            throw DatasetError("mask for conversation '" + conv.id + "' has " + std::to_string(masks[n].turns()) +
                               " rows, expected " + std::to_string(conv.length()));
        for (std::size_t t = 0; t < conv.length(); ++t) {
            const auto& row = masks[n].observed[t];
            if (std::none_of(row.begin(), row.end(), [](bool s) { return s; }))
                throw DatasetError("mask for conversation '" + conv.id + "' has an empty row at turn " +
                                   std::to_string(t));
        }
    }
}

ModalityMask mask_of(const Conversation& conversation) {
    ModalityMask mask;
    for (const auto& u : conversation.utterances) {
        std::array<bool, kModalityCount> row{};
        for (std::size_t m = 0; m < kModalityCount; ++m) row[m] = u.features[m].has_value();
        mask.observed.push_back(row);
    }
    return mask;
}

MaskSet masks_of(const Dataset& dataset) {
    MaskSet out;
    for (const auto& c : dataset.conversations) out.push_back(mask_of(c));
    return out;
}

MaskSet full_masks(const Dataset& dataset) {
    MaskSet out;
    for (const auto& c : dataset.conversations) {
        ModalityMask m;
        m.observed.assign(c.length(), {true, true, true});
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<std::size_t> labels_of(const Dataset& dataset) {
    std::vector<std::size_t> out;
    for (const auto& c : dataset.conversations)
        for (const auto& u : c.utterances) out.push_back(u.label);
    return out;
}

}  // namespace m2r2::data
