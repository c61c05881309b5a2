#include "m2r2/harness/metrics.hpp"

#include <stdexcept>

namespace m2r2::harness {

namespace {

void check(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    if (preds.empty()) throw std::invalid_argument("metrics: empty input");
    if (preds.size() != labels.size())
        throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions for " +
                                    std::to_string(labels.size()) + " labels");
}

}  // namespace

double weighted_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    check(preds, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> preds,
                                                       std::span<const std::size_t> labels, std::size_t classes) {
    check(preds, labels);
    std::vector<std::vector<std::size_t>> cm(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= classes || labels[i] >= classes)
            throw std::out_of_range("metrics: class index out of range at sample " + std::to_string(i));
        ++cm[labels[i]][preds[i]];
    }
    return cm;
}

F1Scores f1_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes) {
    const auto cm = confusion_matrix(preds, labels, classes);
    F1Scores out;
    out.per_class.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t predicted = 0, support = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            predicted += cm[k][c];
            support += cm[c][k];
        }
        const double tp = static_cast<double>(cm[c][c]);
        const double p = predicted ? tp / static_cast<double>(predicted) : 0.0;
        const double r = support ? tp / static_cast<double>(support) : 0.0;
        out.per_class[c] = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        out.weighted += out.per_class[c] * static_cast<double>(support);
    }
    out.weighted /= static_cast<double>(preds.size());
    return out;
}

MetricsReport evaluate(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes) {
    MetricsReport r;
    r.classes = classes;
    r.samples = preds.size();
    r.confusion = confusion_matrix(preds, labels, classes);
    const auto f1 = f1_scores(preds, labels, classes);
    r.per_class_f1 = f1.per_class;
    r.weighted_f1 = f1.weighted;
    r.weighted_accuracy = weighted_accuracy(preds, labels);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t support = 0;
        for (auto v : r.confusion[c]) support += v;
        r.support.push_back(support);
        r.per_class_accuracy.push_back(support ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(support)
                                               : 0.0);
    }
    return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r, const std::vector<std::string>& class_names) {
    nlohmann::ordered_json j;
    j["samples"] = r.samples;
    j["weighted_accuracy"] = r.weighted_accuracy;
    j["weighted_f1"] = r.weighted_f1;
    auto per = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.classes; ++c) {
        nlohmann::ordered_json e;
        e["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
        e["support"] = r.support[c];
        e["accuracy"] = r.per_class_accuracy[c];
        e["f1"] = r.per_class_f1[c];
        per.push_back(std::move(e));
    }
    j["per_class"] = std::move(per);
    j["confusion"] = r.confusion;
    return j;
}

}  // namespace m2r2::harness
