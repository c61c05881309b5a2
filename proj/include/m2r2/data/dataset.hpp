#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2r2::data {

inline constexpr std::size_t kModalityCount = 3;

enum class Modality : std::size_t { Audio = 0, Text = 1, Visual = 2 };

const char* modality_name(std::size_t m);

struct ModalityDims {
    std::size_t audio = 0;
    std::size_t text = 0;
    std::size_t visual = 0;

    std::size_t operator[](std::size_t m) const;
    std::size_t total() const { return audio + text + visual; }
    bool operator==(const ModalityDims&) const = default;
};

using FeatureVector = std::vector<double>;

struct Utterance {
    std::size_t turn = 0;
    std::size_t speaker = 0;
    std::size_t label = 0;
    /// Indexed by Modality; nullopt means the modality is absent at this turn.
    std::array<std::optional<FeatureVector>, kModalityCount> features;

    bool operator==(const Utterance&) const = default;
};

struct Conversation {
    std::string id;
    std::size_t num_parties = 1;
    std::vector<Utterance> utterances;

    std::size_t length() const { return utterances.size(); }
    bool operator==(const Conversation&) const = default;
};

/// Per-turn observation indicators; observed[t][m] is true iff modality m is
/// available at turn t.
struct ModalityMask {
    std::vector<std::array<bool, kModalityCount>> observed;

    std::size_t turns() const { return observed.size(); }
    std::size_t absent_count() const;
    bool operator==(const ModalityMask&) const = default;
};

using MaskSet = std::vector<ModalityMask>;

struct Dataset {
    ModalityDims dims;
    std::vector<std::string> classes;
    std::vector<Conversation> conversations;

    std::size_t num_classes() const { return classes.size(); }
    std::size_t total_turns() const;
    std::size_t max_parties() const;
    bool operator==(const Dataset&) const = default;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Throws DatasetError on any broken invariant.
void validate(const Dataset& dataset);
void validate_masks(const Dataset& dataset, const MaskSet& masks);

ModalityMask mask_of(const Conversation& conversation);
MaskSet masks_of(const Dataset& dataset);
MaskSet full_masks(const Dataset& dataset);

std::vector<std::size_t> labels_of(const Dataset& dataset);

}  // namespace m2r2::data
