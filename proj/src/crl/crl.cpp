#include "m2r2/crl/crl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace m2r2::crl {

namespace {

constexpr std::uint64_t kGeneratorStream = 11;
constexpr std::uint64_t kCriticStream = 23;
constexpr std::uint64_t kHStream = 37;
constexpr std::uint64_t kTrainRngStream = 41;

Var sum_of_squares(Graph& g, std::span<Parameter* const> params) {
    Var total;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Var s = sum(square(g.parameter(*params[i])));
        total = i == 0 ? s : add(total, s);
    }
    return total;
}

std::vector<std::size_t> missing_rows(const ObservedBatch& batch, std::size_t m) {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < batch.turns; ++t)
        if (!batch.observed[m][t]) rows.push_back(t);
    return rows;
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t c = x.cols();
    Tensor out({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(rows[i], j);
    return out;
}

void check_batch(const CrlState& state, const ObservedBatch& batch) {
    if (batch.features.size() != state.modalities.size() || batch.observed.size() != state.modalities.size())
        throw std::invalid_argument("crl: batch '" + batch.id + "' carries " + std::to_string(batch.features.size()) +
                                    " modalities, state has " + std::to_string(state.modalities.size()));
    for (std::size_t m = 0; m < state.modalities.size(); ++m) {
        const auto& f = batch.features[m];
        if (f.rank() != 2 || f.shape()[0] != batch.turns || f.shape()[1] != state.modalities[m].dim)
            throw std::invalid_argument("crl: batch '" + batch.id + "' modality " + state.modalities[m].name +
                                        " has shape " + shape_string(f.shape()));
    }
}

}  // namespace

void validate(const CrlConfig& c) {
    if (c.h_dim == 0) throw std::invalid_argument("crl: h_dim must be >= 1");
    for (double l : {c.lambda_r, c.lambda_c, c.lambda_a, c.lambda_g, c.weight_decay})
        if (!(l >= 0)) throw std::invalid_argument("crl: loss weights must be >= 0");
    if (!(c.learning_rate >= 0) || !(c.h_learning_rate >= 0))
        throw std::invalid_argument("crl: learning rates must be >= 0");
    if (!(c.gp_step > 0)) throw std::invalid_argument("crl: gp_step must be > 0");
}

Generator Generator::create(const std::string& name, std::size_t h_dim, std::size_t out_dim,
                            std::size_t hidden_layers, std::size_t width, double slope, Rng& rng) {
    Generator gen;
    gen.slope = slope;
    std::size_t in = h_dim;
    for (std::size_t i = 0; i < hidden_layers; ++i) {
        gen.layers.push_back(Linear::create(name + ".fc" + std::to_string(i), in, width, rng));
        gen.norms.push_back(BatchNormLayer::create(name + ".bn" + std::to_string(i), width));
        in = width;
    }
    gen.layers.push_back(Linear::create(name + ".out", in, out_dim, rng));
    return gen;
}

void Generator::collect(std::vector<Parameter*>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(out);
        if (i < norms.size()) norms[i].collect(out);
    }
}

Var Generator::forward(Graph& g, Var x, bool train, bool update_running, bool trainable) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i].bind(g, trainable).apply_rows(x);
        if (i + 1 < layers.size()) {
            auto& bn = norms[i];
            x = bn.apply(x, m2r2::bind(g, bn.gamma, trainable), m2r2::bind(g, bn.beta, trainable), train,
                         update_running);
            x = leaky_relu(x, slope);
        }
    }
    return x;
}

Var Generator::forward_frozen(Graph& g, Var x, bool train) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i].freeze(g).apply_rows(x);
        if (i + 1 < layers.size()) {
            const auto& bn = norms[i];
            const Var gamma = g.constant(bn.gamma.value);
            const Var beta = g.constant(bn.beta.value);
            x = train ? batch_norm_train(x, gamma, beta, bn.eps, nullptr, nullptr)
                      : batch_norm_eval(x, gamma, beta, bn.running_mean, bn.running_var, bn.eps);
            x = leaky_relu(x, slope);
        }
    }
    return x;
}

Critic Critic::create(const std::string& name, std::size_t in_dim, std::size_t hidden_layers, std::size_t width,
                      double slope, Rng& rng) {
    Critic c;
    c.slope = slope;
    std::size_t in = in_dim;
    for (std::size_t i = 0; i < hidden_layers; ++i) {
        c.layers.push_back(Linear::create(name + ".fc" + std::to_string(i), in, width, rng));
        in = width;
    }
    c.layers.push_back(Linear::create(name + ".out", in, 1, rng));
    return c;
}

void Critic::collect(std::vector<Parameter*>& out) {
    for (auto& l : layers) l.collect(out);
}

Var Critic::Bound::apply(Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i].apply_rows(x);
        if (i + 1 < layers.size()) x = leaky_relu(x, slope);
    }
    return x;
}

Critic::Bound Critic::bind(Graph& g, bool trainable) {
    Bound b;
    b.slope = slope;
    for (auto& l : layers) b.layers.push_back(l.bind(g, trainable));
    return b;
}

Critic::Bound Critic::freeze(Graph& g) const {
    Bound b;
    b.slope = slope;
    for (const auto& l : layers) b.layers.push_back(l.freeze(g));
    return b;
}

double Critic::score(const std::vector<double>& x) const {
    Graph g;
    return freeze(g).apply(g.constant(Tensor({1, x.size()}, x))).value()[0];
}

std::vector<ObservedBatch> make_observed(const data::Dataset& dataset, const data::MaskSet& masks,
                                         const std::vector<Tensor>* attachment) {
    data::validate_masks(dataset, masks);
    if (attachment && attachment->size() != dataset.conversations.size())
        throw std::invalid_argument("crl: attachment covers " + std::to_string(attachment->size()) +
                                    " conversations, dataset has " + std::to_string(dataset.conversations.size()));
    std::vector<ObservedBatch> out;
    for (std::size_t n = 0; n < dataset.conversations.size(); ++n) {
        const auto& conv = dataset.conversations[n];
        ObservedBatch b;
        b.id = conv.id;
        b.turns = conv.length();
        for (std::size_t m = 0; m < data::kModalityCount; ++m) {
            Tensor f({b.turns, dataset.dims[m]});
            std::vector<bool> obs(b.turns, false);
            for (std::size_t t = 0; t < b.turns; ++t) {
                const auto& x = conv.utterances[t].features[m];
                if (!masks[n].observed[t][m] || !x) continue;
                obs[t] = true;
                for (std::size_t i = 0; i < x->size(); ++i) f.at(t, i) = (*x)[i];
            }
            b.features.push_back(std::move(f));
            b.observed.push_back(std::move(obs));
        }
        if (attachment) {
            const auto& a = (*attachment)[n];
            if (a.rank() != 2 || a.shape()[0] != b.turns)
                throw std::invalid_argument("crl: attachment for '" + conv.id + "' has shape " +
                                            shape_string(a.shape()));
            b.features.push_back(a);
            b.observed.emplace_back(b.turns, true);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<LabeledBatch> make_labeled(const data::Dataset& dataset, const data::MaskSet& masks,
                                       const std::vector<Tensor>* attachment) {
    auto observed = make_observed(dataset, masks, attachment);
    std::vector<LabeledBatch> out;
    for (std::size_t n = 0; n < observed.size(); ++n) {
        LabeledBatch b;
        b.observed = std::move(observed[n]);
        for (const auto& u : dataset.conversations[n].utterances) b.labels.push_back(u.label);
        out.push_back(std::move(b));
    }
    return out;
}

CrlState CrlState::create(const CrlConfig& config, const data::ModalityDims& dims, std::size_t num_classes,
                          std::span<const std::size_t> conversation_lengths) {
    validate(config);
    if (num_classes == 0) throw std::invalid_argument("crl: num_classes must be >= 1");
    CrlState s;
    s.config = config;
    s.num_classes = num_classes;
    s.centroids.assign(num_classes, std::nullopt);
    s.generator_optimizer = Adam({config.learning_rate, 0.5, 0.999, 1e-8});
    s.rng = Rng(derive_seed(config.seed, kTrainRngStream));
    for (std::size_t m = 0; m < data::kModalityCount; ++m) s.add_modality(data::modality_name(m), dims[m]);
    Rng h_rng(derive_seed(config.seed, kHStream));
    for (std::size_t n = 0; n < conversation_lengths.size(); ++n) {
        if (conversation_lengths[n] == 0) throw std::invalid_argument("crl: empty conversation");
        s.h.emplace_back("h." + std::to_string(n),
                         normal_tensor(h_rng, {conversation_lengths[n], config.h_dim}, config.h_init_std));
        s.h_optimizers.emplace_back(AdamConfig{config.h_learning_rate, 0.5, 0.999, 1e-8});
    }
    return s;
}

void CrlState::add_modality(const std::string& name, std::size_t dim) {
    if (dim == 0) throw std::invalid_argument("crl: modality '" + name + "' has zero dimension");
    const std::size_t index = modalities.size();
    Rng gen_rng(derive_seed(config.seed, kGeneratorStream + index));
    Rng critic_rng(derive_seed(config.critic_seed.value_or(config.seed), kCriticStream + index));
    ModalityNets nets;
    nets.name = name;
    nets.dim = dim;
    nets.generator = Generator::create("gen." + name, config.h_dim, dim, config.hidden_layers, config.width(),
                                       config.leaky_slope, gen_rng);
    nets.critic = Critic::create("critic." + name, dim, config.hidden_layers, config.width(), config.leaky_slope,
                                 critic_rng);
    nets.critic_optimizer = Adam({config.learning_rate, 0.5, 0.999, 1e-8});
    modalities.push_back(std::move(nets));
    // The generator parameter list grew; restart its moment estimates.
    generator_optimizer = Adam({config.learning_rate, 0.5, 0.999, 1e-8});
    reservoir.resize(modalities.size());
}

std::vector<Parameter*> CrlState::generator_parameters() {
    std::vector<Parameter*> out;
    for (auto& m : modalities) m.generator.collect(out);
    return out;
}

std::vector<Parameter*> CrlState::critic_parameters(std::size_t m) {
    std::vector<Parameter*> out;
    modalities.at(m).critic.collect(out);
    return out;
}

std::vector<Tensor> CrlState::h_tables() const {
    std::vector<Tensor> out;
    out.reserve(h.size());
    for (const auto& p : h) out.push_back(p.value);
    return out;
}

std::vector<double> reconstruct(const CrlState& state, const std::vector<double>& h, std::size_t m) {
    if (m >= state.modalities.size()) throw std::out_of_range("reconstruct: unknown modality " + std::to_string(m));
    if (h.size() != state.config.h_dim) throw std::invalid_argument("reconstruct: representation has wrong size");
    Graph g;
    const Var out = state.modalities[m].generator.forward_frozen(g, g.constant(Tensor({1, h.size()}, h)), false);
    return out.value().data();
}

double similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("similarity: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return -d;
}

std::size_t predict_from_h(std::span<const double> h, const std::vector<std::optional<Tensor>>& centroids) {
    if (centroids.empty()) throw std::invalid_argument("predict_from_h: empty centroid table");
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (!centroids[c]) throw std::runtime_error("class " + std::to_string(c) + " has no centroid (no members)");
        const double s = similarity(centroids[c]->values(), h);
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

double classification_loss(std::span<const double> h, std::size_t label,
                           const std::vector<std::optional<Tensor>>& centroids) {
    if (label >= centroids.size()) throw std::out_of_range("classification_loss: label out of range");
    const std::size_t pred = predict_from_h(h, centroids);
    const double delta = pred == label ? 0.0 : 1.0;
    return std::max(0.0, delta + similarity(centroids[pred]->values(), h) - similarity(centroids[label]->values(), h));
}

Var classification_loss(Var h_rows, std::span<const std::size_t> labels,
                        const std::vector<std::optional<Tensor>>& centroids) {
    const Tensor& hv = h_rows.value();
    const std::size_t T = hv.shape()[0];
    const std::size_t D = hv.shape()[1];
    if (labels.size() != T) throw std::invalid_argument("classification_loss: label count mismatch");
    Graph& g = h_rows.graph();
    Tensor mu_true({T, D}), mu_pred({T, D}), delta({T});
    for (std::size_t t = 0; t < T; ++t) {
        if (labels[t] >= centroids.size()) throw std::out_of_range("classification_loss: label out of range");
        const auto row = hv.row(t);
        const std::size_t pred = predict_from_h(row, centroids);
        delta[t] = pred == labels[t] ? 0.0 : 1.0;
        for (std::size_t i = 0; i < D; ++i) {
            mu_true.at(t, i) = (*centroids[labels[t]])[i];
            mu_pred.at(t, i) = (*centroids[pred])[i];
        }
    }
    const Var ones = g.constant(Tensor({D}, 1.0));
    // F(mu_pred, h) - F(mu_true, h) = ||mu_true - h||^2 - ||mu_pred - h||^2, row-wise.
    const Var d_true = matmul(square(sub(g.constant(mu_true), h_rows)), ones);
    const Var d_pred = matmul(square(sub(g.constant(mu_pred), h_rows)), ones);
    const Var margin = add(g.constant(delta), sub(d_true, d_pred));
    return mean(relu(margin));
}

Var reconstruction_loss(std::span<const Var> reconstructions, const ObservedBatch& batch) {
    if (reconstructions.size() != batch.features.size())
        throw std::invalid_argument("reconstruction_loss: modality count mismatch");
    Graph& g = reconstructions[0].graph();
    Var total;
    for (std::size_t m = 0; m < reconstructions.size(); ++m) {
        const auto& f = batch.features[m];
        Tensor mask(f.shape());
        const std::size_t d = f.shape()[1];
        for (std::size_t t = 0; t < batch.turns; ++t)
            if (batch.observed[m][t])
                for (std::size_t i = 0; i < d; ++i) mask.at(t, i) = 1.0;
        const Var diff = mul(sub(reconstructions[m], g.constant(f)), g.constant(std::move(mask)));
        const Var s = sum(square(diff));
        total = m == 0 ? s : add(total, s);
    }
    return scale(total, 1.0 / static_cast<double>(batch.turns));
}

double reconstruction_loss(const CrlState& state, const ObservedBatch& batch, const Tensor& h_table) {
    check_batch(state, batch);
    Graph g;
    const Var h = g.constant(h_table);
    std::vector<Var> recon;
    for (const auto& m : state.modalities) recon.push_back(m.generator.forward_frozen(g, h, false));
    return reconstruction_loss(recon, batch).value()[0];
}

double gradient_penalty_exact(const Critic& critic, const std::vector<double>& x) {
    Graph g;
    const Var in = g.input(Tensor({1, x.size()}, x));
    const Var out = sum(critic.freeze(g).apply(in));
    g.backward(out);
    double norm2 = 0;
    for (double v : in.grad().values()) norm2 += v * v;
    const double gap = std::sqrt(norm2) - 1.0;
    const double p = gap * gap;
    if (!std::isfinite(p)) throw std::runtime_error("gradient penalty is not finite");
    return p;
}

Var gradient_penalty_surrogate(const Critic::Bound& critic, const Tensor& points, double step) {
    if (critic.layers.empty()) throw std::invalid_argument("gradient_penalty: empty critic");
    Graph& g = critic.layers[0].weight.graph();
    const std::size_t n = points.shape()[0];
    const std::size_t d = points.shape()[1];
    const std::size_t half = n * d;
    Tensor perturbed({2 * half, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t r = i * d + j;
            for (std::size_t k = 0; k < d; ++k) {
                perturbed.at(r, k) = points.at(i, k);
                perturbed.at(half + r, k) = points.at(i, k);
            }
            perturbed.at(r, j) += step;
            perturbed.at(half + r, j) -= step;
        }
    const Var scores = critic.apply(g.constant(std::move(perturbed)));
    std::vector<std::size_t> plus(half), minus(half);
    std::iota(plus.begin(), plus.end(), 0);
    std::iota(minus.begin(), minus.end(), half);
    const Var slope = scale(sub(gather_rows(scores, plus), gather_rows(scores, minus)), 1.0 / (2.0 * step));
    const Var grads = reshape(slope, {n, d});
    const Var norms = m2r2::sqrt(matmul(square(grads), g.constant(Tensor({d}, 1.0))));
    return square(add_constant(norms, -1.0));
}

AdversarialResult adversarial_step(CrlState& state, std::size_t batch_index, const ObservedBatch& batch) {
    check_batch(state, batch);
    const auto& cfg = state.config;
    AdversarialResult result;
    result.critic_loss.assign(state.modalities.size(), 0.0);
    result.updated.assign(state.modalities.size(), false);
    const Tensor& h_table = state.h.at(batch_index).value;

    for (std::size_t m = 0; m < state.modalities.size(); ++m) {
        auto& nets = state.modalities[m];
        const auto missing = missing_rows(batch, m);
        if (missing.empty()) continue;

        Tensor fakes;
        {
            Graph g;
            const Var recon = nets.generator.forward_frozen(g, g.constant(h_table), true);
            fakes = rows_of(recon.value(), missing);
        }

        std::vector<std::vector<double>> real_rows;
        for (std::size_t t = 0; t < batch.turns; ++t)
            if (batch.observed[m][t]) real_rows.push_back(batch.features[m].row(t));
        const auto& pool = state.reservoir[m];
        while (real_rows.size() < missing.size() && !pool.empty())
            real_rows.push_back(pool[uniform_index(state.rng, pool.size())]);
        if (real_rows.empty()) continue;
        Tensor reals({real_rows.size(), nets.dim});
        for (std::size_t i = 0; i < real_rows.size(); ++i)
            for (std::size_t j = 0; j < nets.dim; ++j) reals.at(i, j) = real_rows[i][j];

        auto params = state.critic_parameters(m);
        for (std::size_t step = 0; step < cfg.critic_steps; ++step) {
            zero_grads(params);
            Graph g;
            const auto critic = nets.critic.bind(g);
            const Var d_fake = mean(critic.apply(g.constant(fakes)));
            const Var d_real = mean(critic.apply(g.constant(reals)));
            const Var gp = mean(gradient_penalty_surrogate(critic, fakes, cfg.gp_step));
            const Var objective = add(sub(d_fake, d_real), scale(gp, cfg.lambda_g));
            const Var loss = add(objective, scale(sum_of_squares(g, params), cfg.weight_decay));
            if (!loss.value().all_finite())
                throw std::runtime_error("crl: non-finite critic loss for modality " + nets.name + " on '" + batch.id +
                                         "'");
            g.backward(loss);
            nets.critic_optimizer.step(params);
            result.critic_loss[m] = objective.value()[0];
            result.updated[m] = true;
            ++result.critic_updates;
        }
        zero_grads(params);
    }
    return result;
}

void refresh_centroids(CrlState& state, std::span<const LabeledBatch> batches) {
    const std::size_t D = state.config.h_dim;
    std::vector<Tensor> sums(state.num_classes, Tensor({D}));
    std::vector<std::size_t> counts(state.num_classes, 0);
    for (std::size_t n = 0; n < batches.size(); ++n) {
        const auto& h = state.h.at(n).value;
        for (std::size_t t = 0; t < batches[n].labels.size(); ++t) {
            const auto y = batches[n].labels[t];
            if (y >= state.num_classes) throw std::out_of_range("crl: label out of range");
            for (std::size_t i = 0; i < D; ++i) sums[y][i] += h.at(t, i);
            ++counts[y];
        }
    }
    for (std::size_t c = 0; c < state.num_classes; ++c) {
        if (counts[c] == 0) {
            state.centroids[c].reset();
            continue;
        }
        for (auto& v : sums[c].values()) v /= static_cast<double>(counts[c]);
        state.centroids[c] = std::move(sums[c]);
    }
}

GeneratorObjective generator_objective(Graph& g, CrlState& state, Var h_rows, const LabeledBatch& batch,
                                       bool update_running) {
    const auto& cfg = state.config;
    const auto& obs = batch.observed;
    std::vector<Var> recon;
    for (auto& m : state.modalities) recon.push_back(m.generator.forward(g, h_rows, true, update_running));

    GeneratorObjective out;
    out.reconstruction = reconstruction_loss(recon, obs);
    out.classification = cfg.lambda_c > 0 ? classification_loss(h_rows, batch.labels, state.centroids)
                                          : g.constant(Tensor::scalar(0.0));
    out.adversarial = g.constant(Tensor::scalar(0.0));
    if (cfg.lambda_a > 0) {
        for (std::size_t m = 0; m < state.modalities.size(); ++m) {
            const auto missing = missing_rows(obs, m);
            if (missing.empty()) continue;
            const auto critic = state.modalities[m].critic.freeze(g);
            out.adversarial = sub(out.adversarial, mean(critic.apply(gather_rows(recon[m], missing))));
        }
    }
    auto gen_params = state.generator_parameters();
    out.total = add(add(scale(out.reconstruction, cfg.lambda_r), scale(out.classification, cfg.lambda_c)),
                    add(scale(out.adversarial, cfg.lambda_a), scale(sum_of_squares(g, gen_params), cfg.weight_decay)));
    return out;
}

LossComponents crl_train_epoch(CrlState& state, std::span<const LabeledBatch> batches) {
    if (batches.size() != state.h.size())
        throw std::invalid_argument("crl: " + std::to_string(batches.size()) + " batches for " +
                                    std::to_string(state.h.size()) + " representation tables");
    for (std::size_t n = 0; n < batches.size(); ++n) {
        check_batch(state, batches[n].observed);
        if (state.h[n].value.shape()[0] != batches[n].observed.turns)
            throw std::invalid_argument("crl: representation table does not match batch '" + batches[n].observed.id +
                                        "'");
    }
    const auto& cfg = state.config;

    for (auto& pool : state.reservoir) pool.clear();
    for (const auto& b : batches)
        for (std::size_t m = 0; m < state.modalities.size(); ++m)
            for (std::size_t t = 0; t < b.observed.turns; ++t)
                if (b.observed.observed[m][t]) state.reservoir[m].push_back(b.observed.features[m].row(t));

    refresh_centroids(state, batches);

    std::vector<std::size_t> order(batches.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(state.rng, i)]);

    LossComponents acc;
    auto gen_params = state.generator_parameters();
    for (const auto n : order) {
        if (cfg.lambda_a > 0) {
            const auto adv = adversarial_step(state, n, batches[n].observed);
            double c = 0;
            for (double v : adv.critic_loss) c += v;
            acc.critic += c;
            acc.critic_updates += adv.critic_updates;
        }
        zero_grads(gen_params);
        state.h[n].zero_grad();
        Graph g;
        const Var h_rows = g.parameter(state.h[n]);
        const auto obj = generator_objective(g, state, h_rows, batches[n], true);
        if (!obj.total.value().all_finite())
            throw std::runtime_error("crl: non-finite loss on conversation '" + batches[n].observed.id + "'");
        g.backward(obj.total);
        state.generator_optimizer.step(gen_params);
        Parameter* hp = &state.h[n];
        state.h_optimizers[n].step(std::span<Parameter* const>(&hp, 1));
        ++acc.generator_updates;
        acc.reconstruction += obj.reconstruction.value()[0];
        acc.classification += obj.classification.value()[0];
        acc.adversarial += obj.adversarial.value()[0];
        acc.total += obj.total.value()[0];
    }
    zero_grads(gen_params);
    const double k = batches.empty() ? 1.0 : static_cast<double>(batches.size());
    acc.reconstruction /= k;
    acc.classification /= k;
    acc.adversarial /= k;
    acc.critic /= k;
    acc.total /= k;
    ++state.epochs_trained;
    return acc;
}

std::vector<Tensor> test_time_finetune(const CrlState& trained, std::span<const ObservedBatch> batches,
                                       std::uint64_t seed, std::vector<double>* final_losses) {
    if (batches.empty()) throw std::invalid_argument("test_time_finetune: empty test set");
    for (const auto& b : batches) check_batch(trained, b);
    const auto& cfg = trained.config;

    std::vector<Generator> generators;
    for (const auto& m : trained.modalities) generators.push_back(m.generator);
    Adam gen_opt({cfg.learning_rate, 0.5, 0.999, 1e-8});
    auto gen_params = [&] {
        std::vector<Parameter*> out;
        for (auto& gen : generators) gen.collect(out);
        return out;
    };

    Rng rng(derive_seed(seed, kHStream));
    std::vector<Parameter> h;
    std::vector<Adam> h_opt;
    for (std::size_t n = 0; n < batches.size(); ++n) {
        h.emplace_back("h_test." + std::to_string(n), normal_tensor(rng, {batches[n].turns, cfg.h_dim}, cfg.h_init_std));
        h_opt.emplace_back(AdamConfig{cfg.h_learning_rate, 0.5, 0.999, 1e-8});
    }

    auto params = gen_params();
    for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        for (std::size_t n = 0; n < batches.size(); ++n) {
            zero_grads(params);
            h[n].zero_grad();
            Graph g;
            const Var h_rows = g.parameter(h[n]);
            std::vector<Var> recon;
            for (auto& gen : generators) recon.push_back(gen.forward(g, h_rows, false, false));
            Var loss = scale(reconstruction_loss(recon, batches[n]), cfg.lambda_r);
            loss = add(loss, scale(sum_of_squares(g, params), cfg.weight_decay));
            if (!loss.value().all_finite())
                throw std::runtime_error("crl: non-finite fine-tuning loss on '" + batches[n].id + "'");
            g.backward(loss);
            gen_opt.step(params);
            Parameter* hp = &h[n];
            h_opt[n].step(std::span<Parameter* const>(&hp, 1));
        }
    }
    if (final_losses) {
        final_losses->clear();
        for (std::size_t n = 0; n < batches.size(); ++n) {
            Graph g;
            const Var h_rows = g.constant(h[n].value);
            std::vector<Var> recon;
            for (const auto& gen : generators) recon.push_back(gen.forward_frozen(g, h_rows, false));
            final_losses->push_back(reconstruction_loss(recon, batches[n]).value().item());
        }
    }
    std::vector<Tensor> out;
    for (const auto& p : h) out.push_back(p.value);
    return out;
}

}  // namespace m2r2::crl
