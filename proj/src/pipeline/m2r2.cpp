#include "m2r2/pipeline/m2r2.hpp"

#include <algorithm>
#include <stdexcept>

#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/random.hpp"

namespace m2r2::pipeline {

namespace {

// Fixed offsets from the master seed, one per phase.
constexpr std::uint64_t kPanetInitStream = 1;
constexpr std::uint64_t kCrlStream = 2;
constexpr std::uint64_t kInferenceStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kPanetOrderStream = 1000;
constexpr std::uint64_t kTrainInferenceStream = 100000;

std::vector<std::vector<std::size_t>> conversation_labels(const data::Dataset& ds) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& c : ds.conversations) {
        std::vector<std::size_t> y;
        for (const auto& u : c.utterances) y.push_back(u.label);
        out.push_back(std::move(y));
    }
    return out;
}

std::vector<std::size_t> flatten(const std::vector<std::vector<std::size_t>>& v) {
    std::vector<std::size_t> out;
    for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
    return out;
}

double accuracy_of(const std::vector<std::vector<std::size_t>>& preds, const data::Dataset& ds) {
    return harness::weighted_accuracy(flatten(preds), data::labels_of(ds));
}

std::size_t feature_width(const panet::PanetDims& dims, BSource source) {
    switch (source) {
        case BSource::emotion: return dims.emotion;
        case BSource::global: return dims.global;
        case BSource::party: return dims.party;
    }
    throw std::logic_error("unreachable");
}

}  // namespace

const char* to_string(BSource s) {
    switch (s) {
        case BSource::emotion: return "emotion";
        case BSource::global: return "global";
        case BSource::party: return "party";
    }
    return "?";
}

const char* to_string(HSource s) { return s == HSource::learned ? "learned" : "inferred"; }

BSource parse_b_source(const std::string& s) {
    if (s == "emotion") return BSource::emotion;
    if (s == "global") return BSource::global;
    if (s == "party") return BSource::party;
    throw std::invalid_argument("unknown b source '" + s + "' (expected emotion, global or party)");
}

HSource parse_h_source(const std::string& s) {
    if (s == "learned") return HSource::learned;
    if (s == "inferred") return HSource::inferred;
    throw std::invalid_argument("unknown h source '" + s + "' (expected learned or inferred)");
}

void validate(const M2r2Config& c) {
    if (c.n_e == 0 || c.n_p == 0) throw std::invalid_argument("m2r2: n_e and n_p must be >= 1");
    if (c.max_iterations == 0) throw std::invalid_argument("m2r2: max_iterations must be >= 1");
    if (!(c.epsilon >= 0)) throw std::invalid_argument("m2r2: epsilon must be >= 0");
    if (c.window == 0) throw std::invalid_argument("m2r2: window must be >= 1");
    if (c.global_dim == 0 || c.party_dim == 0 || c.emotion_dim == 0)
        throw std::invalid_argument("m2r2: recurrent widths must be >= 1");
    if (!(c.panet_learning_rate > 0)) throw std::invalid_argument("m2r2: panet learning rate must be > 0");
    if (!(c.panet_l2 >= 0)) throw std::invalid_argument("m2r2: panet_l2 must be >= 0");
    crl::validate(c.crl);
}

AugmentedDataset extend_with(const data::Dataset& dataset, std::vector<Tensor> table, AttachmentKind kind) {
    if (table.size() != dataset.conversations.size())
        throw std::invalid_argument("extend_with: " + std::to_string(table.size()) + " tables for " +
                                    std::to_string(dataset.conversations.size()) + " conversations");
    AugmentedDataset out;
    out.base = &dataset;
    out.kind = kind;
    for (std::size_t n = 0; n < table.size(); ++n) {
        const auto& t = table[n];
        const auto& conv = dataset.conversations[n];
        if (t.rank() != 2 || t.shape()[0] != conv.length())
            throw std::invalid_argument("extend_with: table for '" + conv.id + "' has shape " + shape_string(t.shape()) +
                                        ", conversation has " + std::to_string(conv.length()) + " turns");
        if (n == 0) out.width = t.shape()[1];
        if (t.shape()[1] != out.width) throw std::invalid_argument("extend_with: attachment width varies");
    }
    out.table = std::move(table);
    return out;
}

std::vector<Tensor> zero_tables(const data::Dataset& dataset, std::size_t width) {
    std::vector<Tensor> out;
    for (const auto& c : dataset.conversations) out.emplace_back(Shape{c.length(), width});
    return out;
}

panet::PanetDims panet_dims(const data::Dataset& dataset, const M2r2Config& config, std::size_t extension) {
    panet::PanetDims d;
    d.modalities = dataset.dims;
    d.extension = extension;
    d.global = config.global_dim;
    d.party = config.party_dim;
    d.emotion = config.emotion_dim;
    d.classes = dataset.classes.size();
    d.max_parties = std::max<std::size_t>(1, dataset.max_parties());
    return d;
}

std::vector<panet::ModelInput> model_inputs(const AugmentedDataset& aug, const data::MaskSet& masks) {
    if (aug.kind != AttachmentKind::h) throw std::invalid_argument("model_inputs: PANet takes h attachments only");
    const auto& ds = *aug.base;
    data::validate_masks(ds, masks);
    std::vector<panet::ModelInput> out;
    for (std::size_t n = 0; n < ds.conversations.size(); ++n)
        out.push_back(panet::build_input(ds.conversations[n], masks[n], ds.dims, &aug.table[n], aug.width));
    return out;
}

std::vector<panet::ModelInput> model_inputs(const data::Dataset& ds, const data::MaskSet& masks) {
    data::validate_masks(ds, masks);
    std::vector<panet::ModelInput> out;
    for (std::size_t n = 0; n < ds.conversations.size(); ++n)
        out.push_back(panet::build_input(ds.conversations[n], masks[n], ds.dims, nullptr, 0));
    return out;
}

std::vector<Tensor> extract_features(const panet::PanetParams& params, std::span<const panet::ModelInput> inputs,
                                     BSource source) {
    std::vector<Tensor> out;
    for (const auto& in : inputs) {
        const auto trace = panet::forward_conversation(params, in);
        if (source == BSource::emotion) {
            out.push_back(panet::extract_b(trace));
            continue;
        }
        const std::size_t d = source == BSource::global ? params.dims.global : params.dims.party;
        Tensor t({trace.turns.size(), d});
        for (std::size_t i = 0; i < trace.turns.size(); ++i) {
            const auto& turn = trace.turns[i];
            const Tensor& v = source == BSource::global ? turn.global : turn.party[turn.speaker];
            for (std::size_t j = 0; j < d; ++j) t.at(i, j) = v[j];
        }
        out.push_back(std::move(t));
    }
    return out;
}

bool converged(const std::vector<IterationRecord>& history, double epsilon, std::size_t k) {
    if (history.empty()) throw std::invalid_argument("converged: empty history");
    if (k == 0 || history.size() <= k) return false;
    const std::size_t split = history.size() - k;
    double before = history[0].val_accuracy;
    for (std::size_t i = 1; i < split; ++i) before = std::max(before, history[i].val_accuracy);
    double recent = history[split].val_accuracy;
    for (std::size_t i = split + 1; i < history.size(); ++i) recent = std::max(recent, history[i].val_accuracy);
    return recent - before <= epsilon;
}

Inference infer(const TrainedModel& model, const data::Dataset& dataset, const data::MaskSet& masks,
                const M2r2Config& config) {
    const auto& dims = model.panet.dims;
    Inference out;
    const auto zero = zero_tables(dataset, dims.extension);
    const auto zero_inputs = model_inputs(extend_with(dataset, zero, AttachmentKind::h), masks);
    if (!model.crl) {
        out.h = zero;
        out.predictions = panet::predict(model.panet, zero_inputs);
        return out;
    }
    if (model.crl->config.h_dim != dims.extension)
        throw std::invalid_argument("infer: representation width " + std::to_string(model.crl->config.h_dim) +
                                    " does not match the PANet attachment width " + std::to_string(dims.extension));
    out.b = extract_features(model.panet, zero_inputs, config.b_source);
    const auto observed = crl::make_observed(dataset, masks, &out.b);
    out.h = crl::test_time_finetune(*model.crl, observed, model.inference_seed);
    const auto inputs = model_inputs(extend_with(dataset, out.h, AttachmentKind::h), masks);
    out.predictions = panet::predict(model.panet, inputs);
    return out;
}

TestResult test(const TrainedModel& model, const data::Dataset& test_set, const data::MaskSet& test_masks,
                const M2r2Config& config) {
    TestResult r;
    r.inference = infer(model, test_set, test_masks, config);
    // Labels are read only here.
    r.metrics = harness::evaluate(flatten(r.inference.predictions), data::labels_of(test_set),
                                  test_set.classes.size());
    return r;
}

TrainResult train(const data::Dataset& train_set, const data::MaskSet& train_masks, const data::Dataset& val_set,
                  const data::MaskSet& val_masks, const M2r2Config& config) {
    validate(config);
    data::validate_masks(train_set, train_masks);
    data::validate_masks(val_set, val_masks);
    if (train_set.dims != val_set.dims || train_set.classes != val_set.classes)
        throw std::invalid_argument("train: train and validation sets disagree on dims or classes");

    const auto dims = panet_dims(train_set, config, config.crl.h_dim);
    const auto labels = conversation_labels(train_set);
    std::vector<std::size_t> lengths;
    for (const auto& c : train_set.conversations) lengths.push_back(c.length());

    auto panet_params = panet::PanetParams::create(dims, config.panet_options, derive_seed(config.seed, kPanetInitStream));
    Adam panet_opt({config.panet_learning_rate, 0.5, 0.999, 1e-8});
    crl::CrlConfig crl_config = config.crl;
    crl_config.seed = derive_seed(config.seed, kCrlStream);
    std::optional<crl::CrlState> crl_state;
    std::vector<Tensor> h_train = zero_tables(train_set, dims.extension);

    TrainResult result;
    double best = -1;
    std::size_t panet_epoch = 0;
    for (std::size_t it = 1; it <= config.max_iterations; ++it) {
        IterationRecord rec;
        rec.iteration = it;
        try {
            const auto inputs = model_inputs(extend_with(train_set, h_train, AttachmentKind::h), train_masks);
            for (std::size_t e = 0; e < config.n_e; ++e) {
                const auto stats = panet::train_epoch(panet_params, panet_opt, inputs, labels, config.panet_l2,
                                                      derive_seed(config.seed, kPanetOrderStream + panet_epoch++));
                rec.panet_loss = stats.mean_loss;
                rec.panet_train_accuracy = stats.accuracy;
            }

            TrainedModel candidate{panet_params, crl_state, derive_seed(config.seed, kInferenceStream)};
            rec.val_accuracy = accuracy_of(infer(candidate, val_set, val_masks, config).predictions, val_set);
            if (rec.val_accuracy > best) {
                best = rec.val_accuracy;
                result.best_iteration = it;
                result.model = std::move(candidate);
            }

            const auto b = extract_features(panet_params, inputs, config.b_source);
            if (!crl_state) {
                crl_state = crl::CrlState::create(crl_config, train_set.dims, train_set.classes.size(), lengths);
                crl_state->add_modality("b", feature_width(dims, config.b_source));
            }
            const auto batches = crl::make_labeled(train_set, train_masks, &b);
            for (std::size_t p = 0; p < config.n_p; ++p) rec.crl = crl::crl_train_epoch(*crl_state, batches);

            if (config.h_source == HSource::learned) {
                h_train = crl_state->h_tables();
            } else {
                std::vector<crl::ObservedBatch> observed;
                for (const auto& lb : batches) observed.push_back(lb.observed);
                h_train = crl::test_time_finetune(*crl_state, observed,
                                                  derive_seed(config.seed, kTrainInferenceStream + it));
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("outer iteration " + std::to_string(it) + ": " + e.what());
        }
        result.history.push_back(rec);
        if (converged(result.history, config.epsilon, config.window)) break;
    }
    return result;
}

BaselineResult train_baseline(const data::Dataset& train_set, const data::MaskSet& train_masks,
                              const data::Dataset& val_set, const data::MaskSet& val_masks,
                              const M2r2Config& config, std::size_t epochs) {
    validate(config);
    if (epochs == 0) throw std::invalid_argument("train_baseline: epochs must be >= 1");
    const auto dims = panet_dims(train_set, config, 0);
    const auto inputs = model_inputs(train_set, train_masks);
    const auto val_inputs = model_inputs(val_set, val_masks);
    const auto labels = conversation_labels(train_set);
    auto params = panet::PanetParams::create(dims, config.panet_options, derive_seed(config.seed, kPanetInitStream));
    Adam opt({config.panet_learning_rate, 0.5, 0.999, 1e-8});
    BaselineResult r{params, {}, 0};
    double best = -1;
    for (std::size_t e = 0; e < epochs; ++e) {
        panet::train_epoch(params, opt, inputs, labels, config.panet_l2, derive_seed(config.seed, kPanetOrderStream + e));
        const double acc = accuracy_of(panet::predict(params, val_inputs), val_set);
        r.val_accuracy.push_back(acc);
        if (acc > best) {
            best = acc;
            r.best_epoch = e + 1;
            r.panet = params;
        }
    }
    return r;
}

const char* to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::full: return "full";
        case AblationMode::no_m2r2: return "no_m2r2";
        case AblationMode::no_party_attention: return "no_party_attention";
    }
    return "?";
}

AblationMode parse_ablation_mode(const std::string& s) {
    if (s == "full") return AblationMode::full;
    if (s == "no_m2r2") return AblationMode::no_m2r2;
    if (s == "no_party_attention") return AblationMode::no_party_attention;
    throw std::invalid_argument("unknown ablation mode '" + s + "' (expected full, no_m2r2 or no_party_attention)");
}

AblationResult ablation_run(AblationMode mode, const data::Dataset& train_set, const data::MaskSet& train_masks,
                            const data::Dataset& test_set, const data::MaskSet& test_masks,
                            const M2r2Config& config, double val_ratio) {
    const auto masked = data::apply_mask(train_set, train_masks);
    const auto [fit, val] = data::split_dataset(masked, val_ratio, derive_seed(config.seed, kSplitStream));
    const auto fit_masks = data::masks_of(fit);
    const auto val_masks = data::masks_of(val);

    AblationResult r;
    r.mode = mode;
    if (mode == AblationMode::full) {
        const auto trained = train(fit, fit_masks, val, val_masks, config);
        r.history = trained.history;
        r.metrics = test(trained.model, test_set, test_masks, config).metrics;
        return r;
    }
    M2r2Config cfg = config;
    if (mode == AblationMode::no_party_attention) cfg.panet_options.party_attention = false;
    const auto base = train_baseline(fit, fit_masks, val, val_masks, cfg, cfg.n_e * cfg.max_iterations);
    const auto preds = panet::predict(base.panet, model_inputs(test_set, test_masks));
    r.metrics = harness::evaluate(flatten(preds), data::labels_of(test_set), test_set.classes.size());
    return r;
}

}  // namespace m2r2::pipeline
