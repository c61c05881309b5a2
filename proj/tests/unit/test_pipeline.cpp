#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/pipeline/m2r2.hpp"

using namespace m2r2;
using namespace m2r2::pipeline;

namespace {

data::Dataset tiny(std::uint64_t seed, std::size_t n) {
    data::SynthSpec spec;
    spec.seed = seed;
    spec.dims = {3, 3, 2};
    spec.num_classes = 3;
    spec.min_turns = 4;
    spec.max_turns = 6;
    return data::generate_synthetic(spec, n);
}

M2r2Config tiny_config(std::uint64_t seed) {
    M2r2Config c;
    c.global_dim = 6;
    c.party_dim = 6;
    c.emotion_dim = 4;
    c.crl.h_dim = 3;
    c.crl.hidden_width = 8;
    c.crl.hidden_layers = 1;
    c.crl.finetune_epochs = 3;
    c.n_e = 1;
    c.n_p = 1;
    c.max_iterations = 3;
    c.window = 1;
    c.seed = seed;
    return c;
}

IterationRecord record(double acc) {
    IterationRecord r;
    r.val_accuracy = acc;
    return r;
}

}  // namespace

TEST_CASE("extension widths") {
    const auto ds = tiny(1, 3);
    const M2r2Config cfg = tiny_config(1);
    CHECK(panet_dims(ds, cfg, 0).input() == 8);
    CHECK(panet_dims(ds, cfg, cfg.crl.h_dim).input() == 8 + cfg.crl.h_dim);

    const auto aug = extend_with(ds, zero_tables(ds, 3), AttachmentKind::h);
    CHECK(aug.width == 3);
    const auto inputs = model_inputs(aug, data::full_masks(ds));
    for (const auto& in : inputs)
        for (const auto& u : in.utterances) CHECK(u.size() == 11);

    CHECK(extend_with(ds, zero_tables(ds, 4), AttachmentKind::b).width == 4);

    auto wrong = zero_tables(ds, 3);
    wrong[0] = Tensor({wrong[0].rows() + 1, 3});
    CHECK_THROWS(extend_with(ds, wrong, AttachmentKind::h));
    wrong.pop_back();
    CHECK_THROWS(extend_with(ds, wrong, AttachmentKind::h));
}

TEST_CASE("a zero attachment with zero weights matches the plain network") {
    const auto ds = tiny(2, 4);
    const M2r2Config cfg = tiny_config(2);
    const auto masks = data::generate_mask(ds, 0.3, 1);
    auto plain = panet::PanetParams::create(panet_dims(ds, cfg, 0), cfg.panet_options, 7);
    auto wide = panet::PanetParams::create(panet_dims(ds, cfg, 3), cfg.panet_options, 7);
    // Copy the shared weights and zero the columns that read the attachment.
    auto copy_prefix = [](const Parameter& from, Parameter& to, std::size_t skip_from, std::size_t skip_count) {
        const std::size_t rows = to.value.rows(), cols = to.value.cols();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0, k = 0; c < cols; ++c) {
                if (c >= skip_from && c < skip_from + skip_count) {
                    to.value.at(r, c) = 0;
                    continue;
                }
                to.value.at(r, c) = from.value.at(r, k++);
            }
    };
    const auto pp = plain.parameters();
    const auto wp = wide.parameters();
    REQUIRE(pp.size() == wp.size());
    for (std::size_t i = 0; i < pp.size(); ++i) {
        if (pp[i]->value.shape() == wp[i]->value.shape()) {
            wp[i]->value = pp[i]->value;
            continue;
        }
        REQUIRE(pp[i]->value.rank() == 2);
        const std::size_t extra = wp[i]->value.cols() - pp[i]->value.cols();
        if (wp[i]->name.find("attn_global") != std::string::npos) {
            // Bilinear form [D_u x D_G]: the attachment adds rows.
            const std::size_t extra_rows = wp[i]->value.rows() - pp[i]->value.rows();
            for (std::size_t r = 0; r < wp[i]->value.rows(); ++r)
                for (std::size_t c = 0; c < wp[i]->value.cols(); ++c)
                    wp[i]->value.at(r, c) = r < 8 ? pp[i]->value.at(r, c) : 0.0;
            CHECK(extra_rows == 3);
            continue;
        }
        // Input weights of the GRUs: utterance columns come first.
        copy_prefix(*pp[i], *wp[i], 8, extra);
    }
    const auto plain_in = model_inputs(ds, masks);
    const auto wide_in = model_inputs(extend_with(ds, zero_tables(ds, 3), AttachmentKind::h), masks);
    for (std::size_t n = 0; n < plain_in.size(); ++n) {
        const auto a = panet::forward_conversation(plain, plain_in[n]);
        const auto b = panet::forward_conversation(wide, wide_in[n]);
        for (std::size_t t = 0; t < a.turns.size(); ++t)
            for (std::size_t k = 0; k < a.turns[t].probs.size(); ++k)
                CHECK(a.turns[t].probs[k] == doctest::Approx(b.turns[t].probs[k]).epsilon(1e-12));
    }
}

TEST_CASE("convergence rule") {
    CHECK_THROWS(converged({}, 1e-3, 3));
    CHECK_FALSE(converged({record(0.5), record(0.6), record(0.6)}, 1e-3, 3));
    // Improvement of the last k over the best before them.
    CHECK(converged({record(0.5), record(0.6), record(0.6), record(0.6), record(0.6)}, 1e-3, 3));
    CHECK_FALSE(converged({record(0.5), record(0.6), record(0.6), record(0.6), record(0.7)}, 1e-3, 3));
    CHECK(converged({record(0.7), record(0.5), record(0.5), record(0.5)}, 1e-3, 3));
    CHECK_FALSE(converged({record(0.7), record(0.7)}, 1e-3, 0));
}

TEST_CASE("training loop contract") {
    const auto ds = tiny(3, 8);
    const auto masks = data::generate_mask(ds, 0.4, 2);
    const auto [fit, val] = data::split_dataset(data::apply_mask(ds, masks), 0.75, 1);
    M2r2Config cfg = tiny_config(3);

    SUBCASE("a single iteration keeps the zero-representation network") {
        cfg.max_iterations = 1;
        const auto r = train(fit, data::masks_of(fit), val, data::masks_of(val), cfg);
        CHECK(r.history.size() == 1);
        CHECK(r.best_iteration == 1);
        CHECK_FALSE(r.model.crl.has_value());
        CHECK(r.model.panet.dims.extension == cfg.crl.h_dim);
    }
    SUBCASE("one record per iteration until the limit or convergence") {
        cfg.max_iterations = 3;
        cfg.window = 5;
        const auto r = train(fit, data::masks_of(fit), val, data::masks_of(val), cfg);
        REQUIRE(r.history.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(r.history[i].iteration == i + 1);
        CHECK(r.history[0].crl.generator_updates == fit.conversations.size());
        CHECK(r.best_iteration >= 1);
        CHECK(r.best_iteration <= 3);
        if (r.best_iteration > 1) CHECK(r.model.crl.has_value());
    }
    SUBCASE("invalid settings are rejected") {
        cfg.n_e = 0;
        CHECK_THROWS(train(fit, data::masks_of(fit), val, data::masks_of(val), cfg));
    }
}

TEST_CASE("testing reads the model but does not change it") {
    const auto ds = tiny(4, 10);
    const auto [train_part, test_part] = data::split_dataset(ds, 0.7, 2);
    const auto train_masked = data::apply_mask(train_part, data::generate_mask(train_part, 0.4, 3));
    const auto test_masks = data::generate_mask(test_part, 0.4, 4);
    const auto [fit, val] = data::split_dataset(train_masked, 0.75, 1);
    M2r2Config cfg = tiny_config(4);
    cfg.window = 5;
    auto r = train(fit, data::masks_of(fit), val, data::masks_of(val), cfg);
    // Force a model with a representation learner for the check.
    if (!r.model.crl) {
        r.model.crl = crl::CrlState::create(cfg.crl, ds.dims, ds.classes.size(),
                                            std::vector<std::size_t>(fit.conversations.size(), 4));
        r.model.crl->add_modality("b", cfg.emotion_dim);
    }
    std::vector<Tensor> before;
    for (auto* p : r.model.panet.parameters()) before.push_back(p->value);
    const auto crl_before = r.model.crl->h_tables();

    const auto t1 = test(r.model, test_part, test_masks, cfg);
    const auto t2 = test(r.model, test_part, test_masks, cfg);
    CHECK(t1.metrics.samples == test_part.total_turns());
    std::size_t preds = 0;
    for (const auto& p : t1.inference.predictions) preds += p.size();
    CHECK(preds == test_part.total_turns());
    CHECK(t1.inference.predictions == t2.inference.predictions);
    CHECK(t1.inference.h == t2.inference.h);

    const auto after = r.model.panet.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value == before[i]);
    CHECK(r.model.crl->h_tables() == crl_before);
}

TEST_CASE("ablation modes report the same metric schema") {
    const auto ds = tiny(5, 10);
    const auto [train_part, test_part] = data::split_dataset(ds, 0.7, 2);
    const auto train_masks = data::generate_mask(train_part, 0.3, 1);
    const auto test_masks = data::generate_mask(test_part, 0.3, 2);
    M2r2Config cfg = tiny_config(5);
    cfg.max_iterations = 2;
    for (auto mode : {AblationMode::full, AblationMode::no_m2r2, AblationMode::no_party_attention}) {
        CAPTURE(to_string(mode));
        const auto r = ablation_run(mode, train_part, train_masks, test_part, test_masks, cfg);
        CHECK(r.mode == mode);
        CHECK(r.metrics.classes == 3);
        CHECK(r.metrics.samples == test_part.total_turns());
        CHECK(r.metrics.per_class_f1.size() == 3);
        CHECK(r.metrics.per_class_accuracy.size() == 3);
        CHECK(parse_ablation_mode(to_string(mode)) == mode);
    }
    CHECK_THROWS(parse_ablation_mode("nope"));
}

TEST_CASE("small runs are deterministic") {
    const auto ds = tiny(6, 8);
    const auto [train_part, test_part] = data::split_dataset(ds, 0.75, 2);
    const auto train_masks = data::generate_mask(train_part, 0.3, 1);
    const auto test_masks = data::generate_mask(test_part, 0.3, 2);
    const M2r2Config cfg = tiny_config(6);
    const auto a = ablation_run(AblationMode::full, train_part, train_masks, test_part, test_masks, cfg);
    const auto b = ablation_run(AblationMode::full, train_part, train_masks, test_part, test_masks, cfg);
    CHECK(a.metrics.weighted_accuracy == b.metrics.weighted_accuracy);
    CHECK(a.metrics.confusion == b.metrics.confusion);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
        CHECK(a.history[i].crl.total == b.history[i].crl.total);
    }
}

TEST_CASE("source names") {
    CHECK(parse_b_source(to_string(BSource::party)) == BSource::party);
    CHECK(parse_h_source(to_string(HSource::inferred)) == HSource::inferred);
    CHECK_THROWS(parse_b_source("x"));
}
