#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/numerics/grad_check.hpp"
#include "m2r2/panet/panet.hpp"
#include "m2r2/panet/panet_io.hpp"
#include "m2r2/random.hpp"

using namespace m2r2;
using namespace m2r2::panet;

namespace {

// Plain-vector reference implementation, written independently of the graph.
using Vec = std::vector<double>;

Vec matvec(const Tensor& w, const Vec& x) {
    Vec out(w.shape()[0], 0.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) out[i] += w.at(i, j) * x[j];
    return out;
}

Vec vadd(Vec a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

Vec join(std::initializer_list<Vec> parts) {
    Vec out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec gru_ref(const GruWeights& w, const Vec& x, const Vec& h) {
    const Vec az = vadd(vadd(matvec(w.w_z.value, x), matvec(w.u_z.value, h)), w.b_z.value.data());
    const Vec ar = vadd(vadd(matvec(w.w_r.value, x), matvec(w.u_r.value, h)), w.b_r.value.data());
    Vec rh(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) rh[i] = sig(ar[i]) * h[i];
    const Vec ac = vadd(vadd(matvec(w.w_h.value, x), matvec(w.u_h.value, rh)), w.b_h.value.data());
    Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double z = sig(az[i]);
        out[i] = (1 - z) * h[i] + z * std::tanh(ac[i]);
    }
    return out;
}

struct AttnRef {
    Vec weights;
    Vec context;
};

// weights_i = softmax_i(q^T W v_i)
AttnRef attn_ref(const std::vector<Vec>& memory, const Vec& q, const Tensor& w) {
    std::vector<double> scores;
    for (const auto& v : memory) {
        const Vec wv = matvec(w, v);
        double s = 0;
        for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * wv[i];
        scores.push_back(s);
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0;
    for (auto& s : scores) z += (s = std::exp(s - mx));
    AttnRef r;
    r.context.assign(memory[0].size(), 0.0);
    for (std::size_t i = 0; i < memory.size(); ++i) {
        r.weights.push_back(scores[i] / z);
        for (std::size_t j = 0; j < r.context.size(); ++j) r.context[j] += r.weights.back() * memory[i][j];
    }
    return r;
}

Vec head_ref(const PanetParams& p, const Vec& e) {
    Vec h = vadd(matvec(p.head_hidden.weight.value, e), p.head_hidden.bias.value.data());
    for (auto& v : h) v = std::max(0.0, v);
    Vec o = vadd(matvec(p.head_out.weight.value, h), p.head_out.bias.value.data());
    const double mx = *std::max_element(o.begin(), o.end());
    double z = 0;
    for (auto& v : o) z += (v = std::exp(v - mx));
    for (auto& v : o) v /= z;
    return o;
}

struct TurnRef {
    Vec g;
    std::vector<Vec> p, e;
    Vec probs;
};

std::vector<TurnRef> forward_ref(const PanetParams& prm, const ModelInput& in) {
    const auto& d = prm.dims;
    const std::size_t Q = in.num_parties;
    std::vector<Vec> p(Q, Vec(d.party, 0.0)), e(Q, Vec(d.emotion, 0.0));
    Vec g(d.global, 0.0);
    std::vector<Vec> g_hist;
    std::vector<std::vector<Vec>> p_hist(Q);
    std::vector<TurnRef> out;
    for (std::size_t t = 0; t < in.length(); ++t) {
        const Vec u = in.utterances[t].data();
        const Vec p_prev = t ? p[in.speakers[t - 1]] : Vec(d.party, 0.0);
        const Vec e_prev = t ? e[in.speakers[t - 1]] : Vec(d.emotion, 0.0);
        g = gru_ref(prm.global_gru, join({u, p_prev, e_prev}), g);
        g_hist.push_back(g);
        const Vec cg = attn_ref(g_hist, u, prm.attn_global.value).context;
        for (std::size_t q = 0; q < Q; ++q) {
            p[q] = gru_ref(prm.party_gru, join({u, cg, e[q]}), p[q]);
            p_hist[q].push_back(p[q]);
        }
        Vec emo_in;
        for (std::size_t q = 0; q < d.max_parties; ++q) {
            Vec c(d.party, 0.0);
            if (q < Q) c = prm.options.party_attention ? attn_ref(p_hist[q], g, prm.attn_party.value).context : p[q];
            emo_in.insert(emo_in.end(), c.begin(), c.end());
        }
        emo_in.insert(emo_in.end(), g.begin(), g.end());
        for (std::size_t q = 0; q < Q; ++q) e[q] = gru_ref(prm.emotion_gru, emo_in, e[q]);
        out.push_back({g, p, e, head_ref(prm, e[in.speakers[t]])});
    }
    return out;
}

PanetDims small_dims() {
    PanetDims d;
    d.modalities = {2, 2, 1};
    d.global = 4;
    d.party = 3;
    d.emotion = 4;
    d.classes = 3;
    d.max_parties = 3;
    return d;
}

ModelInput random_input(Rng& rng, std::size_t T, std::size_t Q, std::size_t width) {
    ModelInput in;
    in.id = "fixture";
    in.num_parties = Q;
    for (std::size_t t = 0; t < T; ++t) {
        in.speakers.push_back(uniform_index(rng, Q));
        in.utterances.push_back(normal_tensor(rng, {width}, 1.0));
    }
    return in;
}

void check_close(const Tensor& got, const Vec& want, double tol) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol).scale(1.0));
}

}  // namespace

TEST_CASE("GRU with all-zero weights halves the previous state") {
    Rng rng(1);
    GruWeights w = GruWeights::create("g", 3, 2, rng);
    std::vector<Parameter*> ps;
    w.collect(ps);
    for (auto* p : ps) p->value.fill(0.0);
    Graph g;
    const Var h = w.freeze(g).step(g.constant(Tensor::vector({1, 2, 3})), g.constant(Tensor::vector({0.8, -0.4})));
    CHECK(h.value()[0] == doctest::Approx(0.4));
    CHECK(h.value()[1] == doctest::Approx(-0.2));
}

TEST_CASE("GRU output is a convex combination of the previous state and a tanh") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        GruWeights w = GruWeights::create("g", 4, 3, rng);
        const Tensor x = normal_tensor(rng, {4}, 3.0);
        const Tensor h = normal_tensor(rng, {3}, 2.0);
        Graph g;
        const Tensor out = w.freeze(g).step(g.constant(x), g.constant(h)).value();
        for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(out[i]) <= std::max(std::abs(h[i]), 1.0) + 1e-12);
    }
}

TEST_CASE("GRU on a fixed two-dimensional fixture matches the scalar oracle") {
    Rng unused(0);
    GruWeights w = GruWeights::create("g", 2, 2, unused);
    auto set = [](Parameter& p, std::vector<double> v) { p.value = Tensor(p.value.shape(), std::move(v)); };
    set(w.w_z, {0.1, -0.2, 0.3, 0.4});
    set(w.u_z, {0.5, 0.1, -0.3, 0.2});
    set(w.b_z, {0.05, -0.05});
    set(w.w_r, {-0.4, 0.2, 0.1, 0.3});
    set(w.u_r, {0.2, 0.2, -0.1, 0.6});
    set(w.b_r, {0.0, 0.1});
    set(w.w_h, {0.7, -0.5, 0.2, 0.9});
    set(w.u_h, {-0.3, 0.4, 0.8, -0.1});
    set(w.b_h, {0.02, -0.03});
    const Vec x{1.5, -0.5}, h{0.25, -0.75};
    Graph g;
    const Tensor out = w.freeze(g).step(g.constant(Tensor::vector(x)), g.constant(Tensor::vector(h))).value();
    // Hand-expanded scalar oracle for the first unit.
    const double z0 = sig(0.1 * 1.5 - 0.2 * -0.5 + 0.5 * 0.25 + 0.1 * -0.75 + 0.05);
    const double r0 = sig(-0.4 * 1.5 + 0.2 * -0.5 + 0.2 * 0.25 + 0.2 * -0.75 + 0.0);
    const double r1 = sig(0.1 * 1.5 + 0.3 * -0.5 + -0.1 * 0.25 + 0.6 * -0.75 + 0.1);
    const double c0 = std::tanh(0.7 * 1.5 - 0.5 * -0.5 + -0.3 * r0 * 0.25 + 0.4 * r1 * -0.75 + 0.02);
    CHECK(std::abs(out[0] - ((1 - z0) * 0.25 + z0 * c0)) < 1e-12);
    const Vec ref = gru_ref(w, x, h);
    CHECK(std::abs(out[1] - ref[1]) < 1e-12);
}

TEST_CASE("attention basics") {
    Rng rng(3);
    Graph g;
    const Var w = g.constant(normal_tensor(rng, {3, 4}, 1.0));  // W^T for query dim 4, value dim 3
    const Var q = g.constant(normal_tensor(rng, {4}, 1.0));
    const Var v1 = g.constant(normal_tensor(rng, {3}, 1.0));
    const Var single[] = {v1};
    const Attention one = attend(single, q, w);
    CHECK(one.weights.value()[0] == doctest::Approx(1.0));
    CHECK(one.context.value() == v1.value());
    const Var same[] = {v1, v1, v1};
    const Attention sym = attend(same, q, w);
    for (double a : sym.weights.value().values()) CHECK(a == doctest::Approx(1.0 / 3));
    CHECK_THROWS(attend(std::span<const Var>{}, q, w));
}

TEST_CASE("positive rescaling of the bilinear form keeps the attention argmax") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor wt = normal_tensor(rng, {3, 4}, 1.0);
        const Tensor q = normal_tensor(rng, {4}, 1.0);
        std::vector<Tensor> mem;
        const std::size_t k = 2 + uniform_index(rng, 5);
        for (std::size_t i = 0; i < k; ++i) mem.push_back(normal_tensor(rng, {3}, 1.0));
        const double c = 0.1 + uniform(rng) * 10;
        Tensor scaled = wt;
        for (auto& v : scaled.values()) v *= c;
        Graph g;
        std::vector<Var> vars;
        for (const auto& m : mem) vars.push_back(g.constant(m));
        const Tensor a = attend(vars, g.constant(q), g.constant(wt)).weights.value();
        const Tensor b = attend(vars, g.constant(q), g.constant(scaled)).weights.value();
        CHECK(argmax(a) == argmax(b));
    }
}

TEST_CASE("zero-weight updates") {
    PanetParams p = PanetParams::create(small_dims(), {}, 5);
    p.set_all(0.0);
    Graph g;
    const BoundPanet net = freeze(g, p);
    const Var u = g.constant(Tensor({5}, 1.0));
    // t = 0: zero previous states and zero weights give a zero global state.
    const Var g0 = global_update(net, net.zero_global, u, net.zero_party, net.zero_emotion);
    CHECK(g0.value() == Tensor({4}));
    CHECK(g0.value().size() == 4);

    const Var pp[] = {g.constant(Tensor::vector({1, 2, 3})), g.constant(Tensor::vector({-2, 0, 4}))};
    const Var ee[] = {net.zero_emotion, net.zero_emotion};
    const auto parties = party_update(net, pp, u, g.constant(Tensor({4})), ee);
    REQUIRE(parties.size() == 2);
    CHECK(parties[0].value() == Tensor::vector({0.5, 1, 1.5}));
    CHECK(parties[1].value() == Tensor::vector({-1, 0, 2}));

    const Var e_prev[] = {g.constant(Tensor::vector({2, 4, 6, 8}))};
    const Attention ctx[] = {{Var{}, g.constant(Tensor({3}))}};
    const auto emo = emotion_update(net, e_prev, emotion_input(net, ctx, g.constant(Tensor({4}))));
    CHECK(emo[0].value() == Tensor::vector({1, 2, 3, 4}));

    const Tensor probs = classify(net, e_prev[0]).value();
    for (double v : probs.values()) CHECK(v == doctest::Approx(1.0 / 3));
    CHECK(argmax(probs) == 0);
}

TEST_CASE("party context over one state is that state") {
    PanetParams p = PanetParams::create(small_dims(), {}, 6);
    Graph g;
    const BoundPanet net = freeze(g, p);
    const std::vector<std::vector<Var>> hist{{g.constant(Tensor::vector({1, 2, 3}))},
                                             {g.constant(Tensor::vector({4, 5, 6}))}};
    const auto ctx = party_context(net, hist, g.constant(Tensor::vector({0.3, -0.1, 0.2, 0.5})));
    CHECK(ctx[0].context.value() == Tensor::vector({1, 2, 3}));
    CHECK(ctx[1].weights.value()[0] == doctest::Approx(1.0));
    CHECK_THROWS(party_context(net, {{}}, g.constant(Tensor({4}))));
}

TEST_CASE("emotion input rejects too many parties") {
    PanetDims d = small_dims();
    d.max_parties = 1;
    PanetParams p = PanetParams::create(d, {}, 6);
    Graph g;
    const BoundPanet net = freeze(g, p);
    const Attention two[] = {{Var{}, g.constant(Tensor({3}))}, {Var{}, g.constant(Tensor({3}))}};
    CHECK_THROWS(emotion_input(net, two, g.constant(Tensor({4}))));
}

TEST_CASE("forward trace matches the step-by-step oracle") {
    for (bool attention : {true, false}) {
        PanetOptions opt;
        opt.party_attention = attention;
        PanetParams p = PanetParams::create(small_dims(), opt, 7);
        Rng rng(8);
        for (auto* prm : p.parameters())
            if (prm->name.find(".b_") != std::string::npos || prm->name.ends_with(".bias"))
                prm->value = normal_tensor(rng, prm->value.shape(), 0.3);
        const ModelInput in = random_input(rng, 5, 3, 5);
        const PanetTrace trace = forward_conversation(p, in);
        const auto ref = forward_ref(p, in);
        REQUIRE(trace.turns.size() == 5);
        for (std::size_t t = 0; t < 5; ++t) {
            check_close(trace.turns[t].global, ref[t].g, 1e-12);
            for (std::size_t q = 0; q < 3; ++q) {
                check_close(trace.turns[t].party[q], ref[t].p[q], 1e-12);
                check_close(trace.turns[t].emotion[q], ref[t].e[q], 1e-12);
            }
            check_close(trace.turns[t].probs, ref[t].probs, 1e-12);
            CHECK(trace.turns[t].global_attention.size() == t + 1);
            CHECK(trace.turns[t].party_attention.size() == (attention ? 3u : 0u));
        }
    }
}

TEST_CASE("trace shapes and normalization") {
    PanetParams p = PanetParams::create(small_dims(), {}, 9);
    Rng rng(10);
    const ModelInput in = random_input(rng, 6, 2, 5);
    const PanetTrace trace = forward_conversation(p, in);
    for (std::size_t t = 0; t < 6; ++t) {
        const auto& tt = trace.turns[t];
        CHECK(tt.party.size() == 2);
        CHECK(tt.emotion.size() == 2);
        CHECK(tt.emotion[0].size() == 4);
        double s = 0;
        for (double v : tt.probs.values()) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        for (const auto& a : tt.party_attention) {
            CHECK(a.size() == t + 1);
            double sa = 0;
            for (double v : a.values()) {
                CHECK(v >= 0);
                sa += v;
            }
            CHECK(std::abs(sa - 1) < 1e-6);
        }
    }
    CHECK(trace.predictions().size() == 6);

    ModelInput one = random_input(rng, 1, 2, 5);
    CHECK(forward_conversation(p, one).predictions().size() == 1);

    ModelInput bad = random_input(rng, 2, 2, 4);
    CHECK_THROWS(forward_conversation(p, bad));
}

TEST_CASE("at T = 1 party attention is the identity") {
    PanetOptions off;
    off.party_attention = false;
    PanetParams with = PanetParams::create(small_dims(), {}, 11);
    PanetParams without = PanetParams::create(small_dims(), off, 11);
    Rng rng(12);
    const ModelInput in = random_input(rng, 1, 2, 5);
    CHECK(forward_conversation(with, in).turns[0].probs == forward_conversation(without, in).turns[0].probs);
}

TEST_CASE("masking changes only the zero-filled segment") {
    data::SynthSpec spec;
    spec.seed = 3;
    spec.dims = {2, 2, 1};
    const auto ds = data::generate_synthetic(spec, 1);
    const auto& conv = ds.conversations[0];
    const auto full = data::full_masks(ds)[0];
    auto masked = full;
    masked.observed[0][1] = false;
    const ModelInput a = build_input(conv, full, ds.dims, nullptr, 0);
    const ModelInput b = build_input(conv, masked, ds.dims, nullptr, 0);
    CHECK(b.utterances[0][2] == 0.0);
    CHECK(b.utterances[0][3] == 0.0);
    for (std::size_t i : {0, 1, 4}) CHECK(a.utterances[0][i] == b.utterances[0][i]);
    for (std::size_t t = 1; t < conv.length(); ++t) CHECK(a.utterances[t] == b.utterances[t]);

    PanetParams p = PanetParams::create(small_dims(), {}, 13);
    const auto ta = forward_conversation(p, a);
    const auto tb = forward_conversation(p, b);
    CHECK(ta.turns.size() == tb.turns.size());
    CHECK(ta.turns[2].emotion[0].shape() == tb.turns[2].emotion[0].shape());
}

TEST_CASE("erc loss oracles") {
    PanetParams p = PanetParams::create(small_dims(), {}, 14);
    Rng rng(15);
    const ModelInput in = random_input(rng, 4, 2, 5);
    {
        // Zero head gives uniform predictions, so the loss is ln C.
        p.head_out.weight.value.fill(0.0);
        p.head_out.bias.value.fill(0.0);
        Graph g;
        const BoundPanet net = freeze(g, p);
        const auto turns = forward_graph(net, in);
        const std::vector<std::size_t> labels{0, 1, 2, 1};
        CHECK(erc_loss(net, turns, labels, 0.0).value().item() == doctest::Approx(std::log(3.0)));
        CHECK_THROWS(erc_loss(net, turns, std::vector<std::size_t>{0}, 0.0));
    }
    {
        // A head that puts all mass on class 1 drives the loss to 0.
        p.head_out.bias.value = Tensor::vector({-1e3, 1e3, -1e3});
        Graph g;
        const BoundPanet net = freeze(g, p);
        const auto turns = forward_graph(net, in);
        CHECK(erc_loss(net, turns, std::vector<std::size_t>{1, 1, 1, 1}, 0.0).value().item() ==
              doctest::Approx(0.0).scale(1.0));
    }
}

TEST_CASE("erc loss gradient matches finite differences") {
    PanetDims d = small_dims();
    d.max_parties = 2;
    PanetParams p = PanetParams::create(d, {}, 16);
    Rng rng(17);
    const ModelInput in = random_input(rng, 3, 2, 5);
    const std::vector<std::size_t> labels{2, 0, 1};
    const auto report = grad_check(
        [&](Graph& g) {
            const BoundPanet net = bind(g, p);
            return erc_loss(net, forward_graph(net, in), labels, 1e-3);
        },
        p.parameters());
    CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("emotion feature table equals the trace states") {
    PanetParams p = PanetParams::create(small_dims(), {}, 18);
    Rng rng(19);
    const ModelInput in = random_input(rng, 5, 2, 5);
    const PanetTrace trace = forward_conversation(p, in);
    const Tensor b = extract_b(trace);
    CHECK(b.shape() == Shape{5, 4});
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t i = 0; i < 4; ++i) CHECK(b.at(t, i) == trace.turns[t].emotion[in.speakers[t]][i]);
}

TEST_CASE("training with zero learning rate leaves weights unchanged") {
    PanetParams p = PanetParams::create(small_dims(), {}, 20);
    const PanetParams before = p;
    Rng rng(21);
    const std::vector<ModelInput> inputs{random_input(rng, 3, 2, 5)};
    const std::vector<std::vector<std::size_t>> labels{{0, 1, 2}};
    Adam adam(AdamConfig{0.0});
    train_epoch(p, adam, inputs, labels, 0.0, 1);
    auto a = p.parameters();
    auto b = const_cast<PanetParams&>(before).parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("training reaches 95% on separable synthetic data within 30 epochs") {
    data::SynthSpec spec;
    spec.seed = 22;
    spec.noise = 0.05;
    spec.rho = 0.0;
    const auto ds = data::generate_synthetic(spec, 20);
    const auto masks = data::full_masks(ds);
    PanetDims d;
    PanetParams p = PanetParams::create(d, {}, 23);
    std::vector<ModelInput> inputs;
    std::vector<std::vector<std::size_t>> labels;
    for (std::size_t n = 0; n < ds.conversations.size(); ++n) {
        inputs.push_back(build_input(ds.conversations[n], masks[n], ds.dims, nullptr, 0));
        std::vector<std::size_t> y;
        for (const auto& u : ds.conversations[n].utterances) y.push_back(u.label);
        labels.push_back(y);
    }
    Adam adam(AdamConfig{1e-3});
    double acc = 0;
    for (int epoch = 0; epoch < 30 && acc < 0.95; ++epoch) acc = train_epoch(p, adam, inputs, labels, 0.0, epoch).accuracy;
    CHECK(acc >= 0.95);
}

TEST_CASE("checkpoint round trip") {
    PanetOptions opt;
    opt.bidirectional = true;
    PanetParams p = PanetParams::create(small_dims(), opt, 24);
    std::stringstream ss;
    write_checkpoint(to_checkpoint(p), ss);
    PanetParams q = from_checkpoint(read_checkpoint(ss, kCheckpointFormat));
    CHECK(q.dims == p.dims);
    CHECK(q.options == p.options);
    auto a = p.parameters();
    auto b = q.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK(a[i]->value == b[i]->value);
    }
    std::stringstream again;
    write_checkpoint(to_checkpoint(p), again);
    CHECK_THROWS_AS(read_checkpoint(again, "m2r2.crl"), CheckpointError);
}
