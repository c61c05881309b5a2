#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "m2r2/crl/crl.hpp"
#include "m2r2/data/dataset.hpp"
#include "m2r2/harness/metrics.hpp"
#include "m2r2/panet/panet.hpp"

namespace m2r2::pipeline {

enum class AttachmentKind { h, b };

/// Which PANet state becomes the extra CRL modality.
enum class BSource { emotion, global, party };

/// Which representations of the training set are fed to PANet.
enum class HSource {
    /// The tables learned during CRL training.
    learned,
    /// Re-inferred without labels through the test-time procedure, so that
    /// training and test inputs come from the same process.
    inferred,
};

const char* to_string(BSource s);
const char* to_string(HSource s);
BSource parse_b_source(const std::string& s);
HSource parse_h_source(const std::string& s);

struct M2r2Config {
    /// Recurrent widths; modality dims, classes and parties are taken from the data.
    std::size_t global_dim = 32;
    std::size_t party_dim = 32;
    std::size_t emotion_dim = 16;
    panet::PanetOptions panet_options;
    double panet_learning_rate = 1e-3;
    double panet_l2 = 0.0;
    crl::CrlConfig crl;
    std::size_t n_e = 5;
    std::size_t n_p = 5;
    std::size_t max_iterations = 20;
    std::size_t window = 3;
    double epsilon = 1e-3;
    BSource b_source = BSource::emotion;
    HSource h_source = HSource::learned;
    std::uint64_t seed = 0;
};

void validate(const M2r2Config& config);

struct AugmentedDataset {
    const data::Dataset* base = nullptr;
    AttachmentKind kind = AttachmentKind::h;
    std::size_t width = 0;
    /// One [T_n x width] table per conversation.
    std::vector<Tensor> table;
};

AugmentedDataset extend_with(const data::Dataset& dataset, std::vector<Tensor> table, AttachmentKind kind);
/// All-zero attachment of the given width.
std::vector<Tensor> zero_tables(const data::Dataset& dataset, std::size_t width);

panet::PanetDims panet_dims(const data::Dataset& dataset, const M2r2Config& config, std::size_t extension);

/// PANet inputs for an h-augmented dataset (zero-filled absent modalities).
std::vector<panet::ModelInput> model_inputs(const AugmentedDataset& augmented, const data::MaskSet& masks);
std::vector<panet::ModelInput> model_inputs(const data::Dataset& dataset, const data::MaskSet& masks);

/// Per-turn PANet features of the chosen kind, [T x D] per conversation.
std::vector<Tensor> extract_features(const panet::PanetParams& params, std::span<const panet::ModelInput> inputs,
                                     BSource source);

struct IterationRecord {
    std::size_t iteration = 0;
    double val_accuracy = 0;
    double panet_loss = 0;
    double panet_train_accuracy = 0;
    crl::LossComponents crl;
};

bool converged(const std::vector<IterationRecord>& history, double epsilon, std::size_t k);

struct TrainedModel {
    panet::PanetParams panet;
    /// Absent when the selected PANet was trained with all-zero representations.
    std::optional<crl::CrlState> crl;
    /// Seed of the label-free inference used by evaluate().
    std::uint64_t inference_seed = 0;
};

struct TrainResult {
    TrainedModel model;
    std::vector<IterationRecord> history;
    std::size_t best_iteration = 0;
};

/// Alternating optimization. PANet at iteration i is trained on the
/// representations of CRL iteration i-1 (zeros at i = 1) and validated
/// together with that CRL state; the best pair is returned.
TrainResult train(const data::Dataset& train_set, const data::MaskSet& train_masks, const data::Dataset& val_set,
                  const data::MaskSet& val_masks, const M2r2Config& config);

/// Label-free inference of representations and predictions.
struct Inference {
    std::vector<Tensor> h;
    std::vector<Tensor> b;
    std::vector<std::vector<std::size_t>> predictions;
};

/// Test protocol: emotion features from a zero-representation PANet pass,
/// fine-tuning for h*, then a PANet pass with h*. Reads no labels.
Inference infer(const TrainedModel& model, const data::Dataset& dataset, const data::MaskSet& masks,
                const M2r2Config& config);

struct TestResult {
    Inference inference;
    harness::MetricsReport metrics;
};

TestResult test(const TrainedModel& model, const data::Dataset& test_set, const data::MaskSet& test_masks,
                const M2r2Config& config);

/// PANet alone on zero-filled inputs, best epoch by validation accuracy.
struct BaselineResult {
    panet::PanetParams panet;
    std::vector<double> val_accuracy;
    std::size_t best_epoch = 0;
};
BaselineResult train_baseline(const data::Dataset& train_set, const data::MaskSet& train_masks,
                              const data::Dataset& val_set, const data::MaskSet& val_masks,
                              const M2r2Config& config, std::size_t epochs);

enum class AblationMode { full, no_m2r2, no_party_attention };
const char* to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& s);

struct AblationResult {
    AblationMode mode = AblationMode::full;
    harness::MetricsReport metrics;
    std::vector<IterationRecord> history;
};

/// `train_set` is split into fit and validation parts with `val_ratio`.
/// no_m2r2 runs PANet for n_e * max_iterations epochs.
AblationResult ablation_run(AblationMode mode, const data::Dataset& train_set, const data::MaskSet& train_masks,
                            const data::Dataset& test_set, const data::MaskSet& test_masks,
                            const M2r2Config& config, double val_ratio = 0.8);

}  // namespace m2r2::pipeline
