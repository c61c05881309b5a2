#pragma once

#include <cstdint>

#include "m2r2/data/dataset.hpp"

namespace m2r2::data {

/// Largest reachable missing rate when every turn keeps one modality.
inline constexpr double kMaxMissingRate = static_cast<double>(kModalityCount - 1) / kModalityCount;

/// Fraction of absent (turn, modality) slots over all slots.
double missing_rate(const MaskSet& masks);

/// Draws absent slots uniformly at random so that exactly round(eta * slots)
/// are absent while every turn keeps at least one observed modality.
MaskSet generate_mask(const Dataset& dataset, double eta, std::uint64_t seed);

/// Drops the feature vectors of masked-out slots. Slots already absent stay absent.
Dataset apply_mask(const Dataset& dataset, const MaskSet& masks);

}  // namespace m2r2::data
