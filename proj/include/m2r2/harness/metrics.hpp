#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace m2r2::harness {

/// Fraction of correct predictions.
double weighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

struct F1Scores {
    std::vector<double> per_class;
    double weighted = 0;
};
/// Per-class F1 (0 when precision + recall is 0) and the support-weighted mean.
F1Scores f1_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes);

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels, std::size_t classes);

struct MetricsReport {
    std::size_t classes = 0;
    std::size_t samples = 0;
    std::vector<std::size_t> support;
    /// Per-class accuracy is the recall of that class.
    std::vector<double> per_class_accuracy;
    std::vector<double> per_class_f1;
    double weighted_accuracy = 0;
    double weighted_f1 = 0;
    /// confusion[true][pred]
    std::vector<std::vector<std::size_t>> confusion;
};

MetricsReport evaluate(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes);

nlohmann::ordered_json to_json(const MetricsReport& report, const std::vector<std::string>& class_names = {});

}  // namespace m2r2::harness
