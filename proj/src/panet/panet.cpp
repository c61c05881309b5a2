#include "m2r2/panet/panet.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "m2r2/random.hpp"

namespace m2r2::panet {

PanetParams PanetParams::create(const PanetDims& dims, const PanetOptions& options, std::uint64_t seed) {
    if (dims.global == 0 || dims.party == 0 || dims.emotion == 0 || dims.classes == 0 || dims.max_parties == 0 ||
        dims.input() == 0)
        throw std::invalid_argument("panet: all dimensions must be positive");
    Rng rng(seed);
    PanetParams p;
    p.dims = dims;
    p.options = options;
    p.global_gru = GruWeights::create("global_gru", dims.input() + dims.party + dims.emotion, dims.global, rng);
    p.party_gru = GruWeights::create("party_gru", dims.input() + dims.global + dims.emotion, dims.party, rng);
    const std::size_t emo_in = dims.max_parties * dims.party + dims.global;
    p.emotion_gru = GruWeights::create("emotion_gru", emo_in, dims.emotion, rng);
    if (options.bidirectional) p.emotion_gru_reverse = GruWeights::create("emotion_gru_reverse", emo_in, dims.emotion, rng);
    p.attn_global = Parameter("attn_global", glorot_uniform(rng, dims.input(), dims.global));
    p.attn_party = Parameter("attn_party", glorot_uniform(rng, dims.global, dims.party));
    p.head_hidden = Linear::create("head_hidden", dims.emotion, dims.head_hidden(), rng);
    p.head_out = Linear::create("head_out", dims.head_hidden(), dims.classes, rng);
    return p;
}

std::vector<Parameter*> PanetParams::parameters() {
    std::vector<Parameter*> out;
    global_gru.collect(out);
    party_gru.collect(out);
    emotion_gru.collect(out);
    if (emotion_gru_reverse) emotion_gru_reverse->collect(out);
    out.push_back(&attn_global);
    out.push_back(&attn_party);
    head_hidden.collect(out);
    head_out.collect(out);
    return out;
}

void PanetParams::set_all(double value) {
    for (auto* p : parameters()) p->value.fill(value);
}

ModelInput build_input(const data::Conversation& conversation, const data::ModalityMask& mask,
                       const data::ModalityDims& dims, const Tensor* extension, std::size_t extension_width) {
    const std::size_t T = conversation.length();
    if (mask.turns() != T)
        throw std::invalid_argument("build_input: mask has " + std::to_string(mask.turns()) + " rows for " +
                                    std::to_string(T) + " turns");
    if (extension && (extension->rank() != 2 || extension->shape()[0] != T || extension->shape()[1] != extension_width))
        throw std::invalid_argument("build_input: attachment table " + shape_string(extension->shape()) +
                                    " does not match [" + std::to_string(T) + "x" + std::to_string(extension_width) +
                                    "]");
    ModelInput in;
    in.id = conversation.id;
    in.num_parties = conversation.num_parties;
    const std::size_t width = dims.total() + extension_width;
    for (std::size_t t = 0; t < T; ++t) {
        const auto& u = conversation.utterances[t];
        Tensor x({width});
        std::size_t offset = 0;
        for (std::size_t m = 0; m < data::kModalityCount; ++m) {
            if (mask.observed[t][m] && u.features[m]) {
                const auto& f = *u.features[m];
                if (f.size() != dims[m]) throw std::invalid_argument("build_input: feature dimension mismatch");
                for (std::size_t i = 0; i < f.size(); ++i) x[offset + i] = f[i];
            }
            offset += dims[m];
        }
        if (extension)
            for (std::size_t i = 0; i < extension_width; ++i) x[offset + i] = extension->at(t, i);
        in.speakers.push_back(u.speaker);
        in.utterances.push_back(std::move(x));
    }
    return in;
}

namespace {

template <typename Params, typename GruBind, typename LinearBind, typename ParamBind>
BoundPanet bind_impl(Graph& g, Params& params, GruBind&& gru, LinearBind&& linear, ParamBind&& param) {
    BoundPanet b;
    b.params = &params;
    b.global_gru = gru(params.global_gru);
    b.party_gru = gru(params.party_gru);
    b.emotion_gru = gru(params.emotion_gru);
    if (params.emotion_gru_reverse) b.emotion_gru_reverse = gru(*params.emotion_gru_reverse);
    const Var attn_global = param(params.attn_global);
    const Var attn_party = param(params.attn_party);
    b.attn_global_t = transpose(attn_global);
    b.attn_party_t = transpose(attn_party);
    b.head_hidden = linear(params.head_hidden);
    b.head_out = linear(params.head_out);
    b.zero_global = g.constant(Tensor({params.dims.global}));
    b.zero_party = g.constant(Tensor({params.dims.party}));
    b.zero_emotion = g.constant(Tensor({params.dims.emotion}));
    for (const auto* w : {&b.global_gru, &b.party_gru, &b.emotion_gru})
        for (Var v : {w->w_z, w->u_z, w->b_z, w->w_r, w->u_r, w->b_r, w->w_h, w->u_h, w->b_h}) b.all.push_back(v);
    if (b.emotion_gru_reverse) {
        const auto& r = *b.emotion_gru_reverse;
        for (Var v : {r.w_z, r.u_z, r.b_z, r.w_r, r.u_r, r.b_r, r.w_h, r.u_h, r.b_h}) b.all.push_back(v);
    }
    for (Var v : {attn_global, attn_party, b.head_hidden.weight, b.head_hidden.bias, b.head_out.weight,
                  b.head_out.bias})
        b.all.push_back(v);
    return b;
}

}  // namespace

BoundPanet bind(Graph& g, PanetParams& params, bool trainable) {
    return bind_impl(
        g, params, [&](GruWeights& w) { return w.bind(g, trainable); },
        [&](Linear& l) { return l.bind(g, trainable); }, [&](Parameter& p) { return m2r2::bind(g, p, trainable); });
}

BoundPanet freeze(Graph& g, const PanetParams& params) {
    return bind_impl(
        g, params, [&](const GruWeights& w) { return w.freeze(g); }, [&](const Linear& l) { return l.freeze(g); },
        [&](const Parameter& p) { return g.constant(p.value); });
}

Attention attend(std::span<const Var> memory, Var query, Var w_transposed) {
    if (memory.empty()) throw std::invalid_argument("attend: empty memory");
    const Var m = stack_rows(memory);
    const Var projected = matmul(w_transposed, query);
    const Var weights = softmax(matmul(m, projected));
    const Var context = matmul(transpose(m), weights);
    return {weights, context};
}

Var gru_cell(Var x, Var h_prev, const GruWeights::Bound& weights) { return weights.step(x, h_prev); }

Var global_update(const BoundPanet& net, Var g_prev, Var u, Var p_prev_speaker, Var e_prev_speaker) {
    const Var parts[] = {u, p_prev_speaker, e_prev_speaker};
    return gru_cell(concat(parts), g_prev, net.global_gru);
}

std::vector<Var> party_update(const BoundPanet& net, std::span<const Var> p_prev, Var u, Var global_context,
                              std::span<const Var> e_prev) {
    if (p_prev.size() != e_prev.size()) throw std::invalid_argument("party_update: state count mismatch");
    std::vector<Var> out;
    out.reserve(p_prev.size());
    for (std::size_t q = 0; q < p_prev.size(); ++q) {
        const Var parts[] = {u, global_context, e_prev[q]};
        out.push_back(gru_cell(concat(parts), p_prev[q], net.party_gru));
    }
    return out;
}

std::vector<Attention> party_context(const BoundPanet& net, const std::vector<std::vector<Var>>& history, Var g_t) {
    std::vector<Attention> out;
    for (const auto& h : history) {
        if (h.empty()) throw std::invalid_argument("party_context: empty party history");
        if (net.params->options.party_attention)
            out.push_back(attend(h, g_t, net.attn_party_t));
        else
            out.push_back(Attention{Var{}, h.back()});
    }
    return out;
}

Var emotion_input(const BoundPanet& net, std::span<const Attention> contexts, Var g_t) {
    const std::size_t q_max = net.params->dims.max_parties;
    if (contexts.size() > q_max)
        throw std::invalid_argument("emotion_update: " + std::to_string(contexts.size()) +
                                    " parties exceed max_parties " + std::to_string(q_max));
    std::vector<Var> parts;
    parts.reserve(q_max + 1);
    for (const auto& c : contexts) parts.push_back(c.context);
    for (std::size_t q = contexts.size(); q < q_max; ++q) parts.push_back(net.zero_party);
    parts.push_back(g_t);
    return concat(parts);
}

std::vector<Var> emotion_update(const BoundPanet& net, std::span<const Var> e_prev, Var input) {
    std::vector<Var> out;
    out.reserve(e_prev.size());
    for (const auto& e : e_prev) out.push_back(gru_cell(input, e, net.emotion_gru));
    return out;
}

Var classify(const BoundPanet& net, Var emotion_state) {
    return softmax(net.head_out.apply(relu(net.head_hidden.apply(emotion_state))));
}

std::vector<TurnVars> forward_graph(const BoundPanet& net, const ModelInput& input) {
    const auto& dims = net.params->dims;
    const std::size_t Q = input.num_parties;
    const std::size_t T = input.length();
    if (T == 0) throw std::invalid_argument("forward: empty conversation");
    if (Q > dims.max_parties)
        throw std::invalid_argument("forward: conversation '" + input.id + "' has " + std::to_string(Q) +
                                    " parties, max_parties is " + std::to_string(dims.max_parties));
    Graph& g = net.zero_global.graph();

    std::vector<Var> party(Q, net.zero_party);
    std::vector<Var> emotion(Q, net.zero_emotion);
    Var global = net.zero_global;
    std::vector<Var> global_history;
    std::vector<std::vector<Var>> party_history(Q);
    std::vector<Var> emotion_inputs;
    std::vector<TurnVars> turns(T);

    for (std::size_t t = 0; t < T; ++t) {
        const Tensor& ut = input.utterances[t];
        if (ut.shape() != Shape{dims.input()})
            throw std::invalid_argument("forward: utterance " + shape_string(ut.shape()) + " does not match input width " +
                                        std::to_string(dims.input()));
        if (input.speakers[t] >= Q) throw std::invalid_argument("forward: speaker index out of range");
        const Var u = g.constant(ut);
        Var p_prev_speaker = net.zero_party;
        Var e_prev_speaker = net.zero_emotion;
        if (t > 0) {
            p_prev_speaker = party[input.speakers[t - 1]];
            e_prev_speaker = emotion[input.speakers[t - 1]];
        }
        global = global_update(net, global, u, p_prev_speaker, e_prev_speaker);
        global_history.push_back(global);
        const Attention global_attention = attend(global_history, u, net.attn_global_t);

        party = party_update(net, party, u, global_attention.context, emotion);
        for (std::size_t q = 0; q < Q; ++q) party_history[q].push_back(party[q]);
        auto contexts = party_context(net, party_history, global);
        const Var emo_in = emotion_input(net, contexts, global);
        emotion_inputs.push_back(emo_in);
        emotion = emotion_update(net, emotion, emo_in);

        auto& tv = turns[t];
        tv.global = global;
        tv.party = party;
        tv.emotion = emotion;
        tv.global_attention = global_attention;
        tv.party_attention = std::move(contexts);
    }

    if (net.emotion_gru_reverse) {
        std::vector<Var> rev(Q, net.zero_emotion);
        for (std::size_t t = T; t-- > 0;) {
            for (std::size_t q = 0; q < Q; ++q) {
                rev[q] = gru_cell(emotion_inputs[t], rev[q], *net.emotion_gru_reverse);
                turns[t].emotion[q] = turns[t].emotion[q] + rev[q];
            }
        }
    }
    for (std::size_t t = 0; t < T; ++t) turns[t].probs = classify(net, turns[t].emotion[input.speakers[t]]);
    return turns;
}

std::vector<std::size_t> PanetTrace::predictions() const {
    std::vector<std::size_t> out;
    for (const auto& t : turns) out.push_back(argmax(t.probs));
    return out;
}

PanetTrace forward_conversation(const PanetParams& params, const ModelInput& input) {
    Graph g;
    const BoundPanet net = freeze(g, params);
    const auto turns = forward_graph(net, input);
    PanetTrace trace;
    for (std::size_t t = 0; t < turns.size(); ++t) {
        const auto& tv = turns[t];
        TurnTrace tt;
        tt.speaker = input.speakers[t];
        tt.global = tv.global.value();
        for (const auto& p : tv.party) tt.party.push_back(p.value());
        for (const auto& e : tv.emotion) tt.emotion.push_back(e.value());
        tt.global_attention = tv.global_attention.weights.value();
        if (params.options.party_attention)
            for (const auto& a : tv.party_attention) tt.party_attention.push_back(a.weights.value());
        tt.probs = tv.probs.value();
        trace.turns.push_back(std::move(tt));
    }
    return trace;
}

Var erc_loss(const BoundPanet& net, std::span<const TurnVars> turns, std::span<const std::size_t> labels, double l2) {
    if (turns.size() != labels.size())
        throw std::invalid_argument("erc_loss: " + std::to_string(turns.size()) + " turns but " +
                                    std::to_string(labels.size()) + " labels");
    if (turns.empty()) throw std::invalid_argument("erc_loss: empty conversation");
    Var nll;
    for (std::size_t t = 0; t < turns.size(); ++t) {
        const Var term = log_clamped(pick(turns[t].probs, labels[t]), 1e-12);
        nll = t == 0 ? term : add(nll, term);
    }
    Var loss = scale(nll, -1.0 / static_cast<double>(turns.size()));
    if (l2 != 0.0) {
        Var sq;
        for (std::size_t i = 0; i < net.all.size(); ++i) {
            const Var s = sum(square(net.all[i]));
            sq = i == 0 ? s : add(sq, s);
        }
        loss = add(loss, scale(m2r2::sqrt(sq), l2));
    }
    return loss;
}

std::size_t argmax(const Tensor& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

Tensor extract_b(const PanetTrace& trace) {
    if (trace.turns.empty()) throw std::invalid_argument("extract_b: empty trace");
    const std::size_t d = trace.turns[0].emotion[0].size();
    Tensor out({trace.turns.size(), d});
    for (std::size_t t = 0; t < trace.turns.size(); ++t) {
        const auto& e = trace.turns[t].emotion[trace.turns[t].speaker];
        for (std::size_t i = 0; i < d; ++i) out.at(t, i) = e[i];
    }
    return out;
}

EpochStats train_epoch(PanetParams& params, Adam& optimizer, std::span<const ModelInput> inputs,
                       std::span<const std::vector<std::size_t>> labels, double l2, std::uint64_t order_seed) {
    if (inputs.size() != labels.size()) throw std::invalid_argument("train_epoch: inputs/labels size mismatch");
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(order_seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    auto plist = params.parameters();
    EpochStats stats;
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto idx : order) {
        zero_grads(plist);
        Graph g;
        const BoundPanet net = bind(g, params);
        const auto turns = forward_graph(net, inputs[idx]);
        const Var loss = erc_loss(net, turns, labels[idx], l2);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv))
            throw std::runtime_error("panet: non-finite loss on conversation '" + inputs[idx].id + "'");
        g.backward(loss);
        optimizer.step(plist);
        stats.mean_loss += lv;
        for (std::size_t t = 0; t < turns.size(); ++t) correct += argmax(turns[t].probs.value()) == labels[idx][t];
        total += turns.size();
    }
    zero_grads(plist);
    if (!inputs.empty()) stats.mean_loss /= static_cast<double>(inputs.size());
    stats.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return stats;
}

std::vector<std::vector<std::size_t>> predict(const PanetParams& params, std::span<const ModelInput> inputs) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(forward_conversation(params, in).predictions());
    return out;
}

}  // namespace m2r2::panet
