#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m2r2/data/dataset.hpp"
#include "m2r2/numerics/adam.hpp"
#include "m2r2/numerics/graph.hpp"
#include "m2r2/numerics/layers.hpp"
#include "m2r2/random.hpp"

namespace m2r2::crl {

struct CrlConfig {
    std::size_t h_dim = 16;
    double lambda_r = 1.0;
    double lambda_c = 10.0;
    double lambda_a = 10.0;
    double lambda_g = 1.0;
    std::size_t critic_steps = 2;
    /// Adam step size for generators and critics.
    double learning_rate = 1e-3;
    /// Adam step size for the per-utterance representations.
    double h_learning_rate = 1e-2;
    /// Squared-L2 weight on generator and critic parameters.
    double weight_decay = 1e-3;
    std::size_t hidden_layers = 2;
    /// 0 selects max(64, 2 * h_dim).
    std::size_t hidden_width = 0;
    double leaky_slope = 0.01;
    /// Central-difference step of the gradient-penalty surrogate.
    double gp_step = 1e-4;
    double h_init_std = 0.01;
    std::size_t finetune_epochs = 30;
    std::uint64_t seed = 0;
    /// Overrides the stream used to initialize critics.
    std::optional<std::uint64_t> critic_seed;

    std::size_t width() const { return hidden_width ? hidden_width : std::max<std::size_t>(64, 2 * h_dim); }
};

void validate(const CrlConfig& config);

/// Maps a common representation to one modality: affine layers with batch
/// normalization and LeakyReLU between them.
struct Generator {
    std::vector<Linear> layers;
    std::vector<BatchNormLayer> norms;
    double slope = 0.01;

    static Generator create(const std::string& name, std::size_t h_dim, std::size_t out_dim, std::size_t hidden_layers,
                            std::size_t width, double slope, Rng& rng);
    void collect(std::vector<Parameter*>& out);
    std::size_t output_dim() const { return layers.back().out_features(); }

    /// H: [n x h_dim] -> [n x out_dim].
    Var forward(Graph& g, Var h, bool train, bool update_running, bool trainable = true);
    Var forward_frozen(Graph& g, Var h, bool train) const;
};

/// Wasserstein critic: affine layers with LeakyReLU, scalar output.
struct Critic {
    std::vector<Linear> layers;
    double slope = 0.01;

    static Critic create(const std::string& name, std::size_t in_dim, std::size_t hidden_layers, std::size_t width,
                         double slope, Rng& rng);
    void collect(std::vector<Parameter*>& out);
    std::size_t input_dim() const { return layers.front().in_features(); }

    struct Bound {
        std::vector<Linear::Bound> layers;
        double slope = 0.01;
        /// X: [n x in] -> [n x 1].
        Var apply(Var x) const;
    };
    Bound bind(Graph& g, bool trainable = true);
    Bound freeze(Graph& g) const;
    double score(const std::vector<double>& x) const;
};

struct ModalityNets {
    std::string name;
    std::size_t dim = 0;
    Generator generator;
    Critic critic;
    Adam critic_optimizer;
};

/// One conversation's observed features, without labels.
struct ObservedBatch {
    std::string id;
    std::size_t turns = 0;
    /// features[m] is [T x D_m], zero in absent slots.
    std::vector<Tensor> features;
    /// observed[m][t]
    std::vector<std::vector<bool>> observed;
};

struct LabeledBatch {
    ObservedBatch observed;
    std::vector<std::size_t> labels;
};

/// Builds batches for the three base modalities, plus an always-observed
/// fourth modality from `attachment` (one [T x D] table per conversation).
std::vector<ObservedBatch> make_observed(const data::Dataset& dataset, const data::MaskSet& masks,
                                         const std::vector<Tensor>* attachment);
std::vector<LabeledBatch> make_labeled(const data::Dataset& dataset, const data::MaskSet& masks,
                                       const std::vector<Tensor>* attachment);

struct CrlState {
    CrlConfig config;
    std::size_t num_classes = 0;
    std::vector<ModalityNets> modalities;
    /// One learnable [T_n x h_dim] table per training conversation.
    std::vector<Parameter> h;
    std::vector<Adam> h_optimizers;
    Adam generator_optimizer;
    std::vector<std::optional<Tensor>> centroids;
    /// Observed vectors per modality, used to top up critic real batches.
    std::vector<std::vector<std::vector<double>>> reservoir;
    Rng rng;
    std::size_t epochs_trained = 0;

    static CrlState create(const CrlConfig& config, const data::ModalityDims& dims, std::size_t num_classes,
                           std::span<const std::size_t> conversation_lengths);
    /// Registers an extra, always-observed modality (the emotion-state attachment).
    void add_modality(const std::string& name, std::size_t dim);
    std::vector<Parameter*> generator_parameters();
    std::vector<Parameter*> critic_parameters(std::size_t m);
    std::size_t modality_count() const { return modalities.size(); }
    /// Current representations as plain tables.
    std::vector<Tensor> h_tables() const;
};

/// Evaluation-mode reconstruction of modality m from one representation.
std::vector<double> reconstruct(const CrlState& state, const std::vector<double>& h, std::size_t m);

/// F(a, b) = -||a - b||^2.
double similarity(std::span<const double> a, std::span<const double> b);

/// Nearest centroid under F, lowest index on ties. Throws if any centroid is missing.
std::size_t predict_from_h(std::span<const double> h, const std::vector<std::optional<Tensor>>& centroids);

/// max(0, delta(y, y_hat) + F(mu_yhat, h) - F(mu_y, h)) with y_hat the centroid prediction.
double classification_loss(std::span<const double> h, std::size_t label,
                           const std::vector<std::optional<Tensor>>& centroids);
/// Mean classification loss over the rows of H as a graph node.
Var classification_loss(Var h_rows, std::span<const std::size_t> labels,
                        const std::vector<std::optional<Tensor>>& centroids);

/// (1/T) sum_t sum_m s_{t,m} ||u^m_t - f_m(h_t)||^2 over the given reconstructions.
Var reconstruction_loss(std::span<const Var> reconstructions, const ObservedBatch& batch);
/// Numeric value in evaluation mode for one batch and its representation table.
double reconstruction_loss(const CrlState& state, const ObservedBatch& batch, const Tensor& h_table);

/// Exact (||grad_x D(x)|| - 1)^2 via reverse mode w.r.t. the input.
double gradient_penalty_exact(const Critic& critic, const std::vector<double>& x);
/// Central-difference surrogate of the per-row penalty at the rows of `points`,
/// built from plain forward passes so it is differentiable w.r.t. critic weights.
Var gradient_penalty_surrogate(const Critic::Bound& critic, const Tensor& points, double step);

struct AdversarialResult {
    /// Critic objective per modality at the last critic step (0 when skipped).
    std::vector<double> critic_loss;
    std::vector<bool> updated;
    std::size_t critic_updates = 0;
};

/// Runs `critic_steps` critic updates for every modality that has missing
/// slots in the batch. Generated samples come from the current generators.
AdversarialResult adversarial_step(CrlState& state, std::size_t batch_index, const ObservedBatch& batch);

struct LossComponents {
    double reconstruction = 0;
    double classification = 0;
    double adversarial = 0;
    double critic = 0;
    double total = 0;
    std::size_t critic_updates = 0;
    std::size_t generator_updates = 0;
};

/// Recomputes the class centroids from the current representations.
void refresh_centroids(CrlState& state, std::span<const LabeledBatch> batches);

/// One epoch over the training conversations in seeded random order.
LossComponents crl_train_epoch(CrlState& state, std::span<const LabeledBatch> batches);

/// Composite objective for one batch as a graph node. `critics` are bound
/// as constants; generators and h are trainable.
struct GeneratorObjective {
    Var total;
    Var reconstruction;
    Var classification;
    Var adversarial;
};
GeneratorObjective generator_objective(Graph& g, CrlState& state, Var h_rows, const LabeledBatch& batch,
                                       bool update_running);

/// Copies the generators, learns fresh representations for unseen
/// conversations under the observed-slot reconstruction loss, and returns
/// them. Labels are not an input.
/// When `final_losses` is given it receives each batch's reconstruction loss
/// under the fine-tuned generators.
std::vector<Tensor> test_time_finetune(const CrlState& trained, std::span<const ObservedBatch> batches,
                                       std::uint64_t seed, std::vector<double>* final_losses = nullptr);

}  // namespace m2r2::crl
