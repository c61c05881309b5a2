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

namespace m2r2::panet {

struct PanetDims {
    data::ModalityDims modalities{8, 8, 8};
    /// Width of the per-turn attachment appended to the utterance (0 = none).
    std::size_t extension = 0;
    std::size_t global = 32;
    std::size_t party = 32;
    std::size_t emotion = 16;
    std::size_t classes = 4;
    std::size_t max_parties = 2;

    std::size_t input() const { return modalities.total() + extension; }
    std::size_t head_hidden() const { return emotion / 2 > 0 ? emotion / 2 : 1; }
    bool operator==(const PanetDims&) const = default;
};

struct PanetOptions {
    /// When false, the party context is the current party state itself.
    bool party_attention = true;
    /// Adds a reversed GRU_E pass whose states are summed with the forward ones.
    bool bidirectional = false;
    bool operator==(const PanetOptions&) const = default;
};

/// All weights of the party-attentive network.
struct PanetParams {
    PanetDims dims;
    PanetOptions options;
    GruWeights global_gru;
    GruWeights party_gru;
    GruWeights emotion_gru;
    std::optional<GruWeights> emotion_gru_reverse;
    /// Bilinear attention forms: utterance x global state, global x party state.
    Parameter attn_global;
    Parameter attn_party;
    Linear head_hidden;
    Linear head_out;

    static PanetParams create(const PanetDims& dims, const PanetOptions& options, std::uint64_t seed);
    std::vector<Parameter*> parameters();
    void set_all(double value);
};

/// Per-turn network input: utterance features with absent modalities
/// zero-filled, optionally extended by an attachment vector.
struct ModelInput {
    std::string id;
    std::size_t num_parties = 1;
    std::vector<std::size_t> speakers;
    std::vector<Tensor> utterances;

    std::size_t length() const { return utterances.size(); }
};

/// `extension` is a [T x width] table (or nullptr for no attachment).
ModelInput build_input(const data::Conversation& conversation, const data::ModalityMask& mask,
                       const data::ModalityDims& dims, const Tensor* extension, std::size_t extension_width);

struct BoundPanet {
    const PanetParams* params = nullptr;
    GruWeights::Bound global_gru, party_gru, emotion_gru;
    std::optional<GruWeights::Bound> emotion_gru_reverse;
    Var attn_global_t;  // transposed once per graph: [D_G x D_u]
    Var attn_party_t;   // [D_P x D_G]
    Linear::Bound head_hidden, head_out;
    Var zero_global, zero_party, zero_emotion;
    std::vector<Var> all;
};

BoundPanet bind(Graph& g, PanetParams& params, bool trainable = true);
/// Binds every weight as a constant; nothing is written back.
BoundPanet freeze(Graph& g, const PanetParams& params);

struct Attention {
    Var weights;
    Var context;
};

/// weights = softmax(query^T W [v_1 .. v_k]), context = sum_i weights_i v_i.
/// `w_transposed` holds W^T, i.e. [dim(v) x dim(query)].
Attention attend(std::span<const Var> memory, Var query, Var w_transposed);

Var gru_cell(Var x, Var h_prev, const GruWeights::Bound& weights);
Var global_update(const BoundPanet& net, Var g_prev, Var u, Var p_prev_speaker, Var e_prev_speaker);
std::vector<Var> party_update(const BoundPanet& net, std::span<const Var> p_prev, Var u, Var global_context,
                              std::span<const Var> e_prev);
/// history[q] = [p^q_1 .. p^q_t]. Without party attention the context is p^q_t.
std::vector<Attention> party_context(const BoundPanet& net, const std::vector<std::vector<Var>>& history, Var g_t);
Var emotion_input(const BoundPanet& net, std::span<const Attention> contexts, Var g_t);
std::vector<Var> emotion_update(const BoundPanet& net, std::span<const Var> e_prev, Var input);
/// Class distribution for the speaker's emotion state.
Var classify(const BoundPanet& net, Var emotion_state);

struct TurnVars {
    Var global;
    std::vector<Var> party;
    std::vector<Var> emotion;
    Attention global_attention;
    std::vector<Attention> party_attention;
    Var probs;
};

std::vector<TurnVars> forward_graph(const BoundPanet& net, const ModelInput& input);

struct TurnTrace {
    std::size_t speaker = 0;
    Tensor global;
    std::vector<Tensor> party;
    std::vector<Tensor> emotion;
    Tensor global_attention;
    std::vector<Tensor> party_attention;  // empty when party attention is off
    Tensor probs;
};

struct PanetTrace {
    std::vector<TurnTrace> turns;
    std::vector<std::size_t> predictions() const;
};

PanetTrace forward_conversation(const PanetParams& params, const ModelInput& input);

/// Mean negative log-likelihood (log clamped at 1e-12) plus l2 * ||theta||_2.
Var erc_loss(const BoundPanet& net, std::span<const TurnVars> turns, std::span<const std::size_t> labels,
             double l2);

std::size_t argmax(const Tensor& probs);

/// Speaker emotion state per turn, as a [T x D_E] table.
Tensor extract_b(const PanetTrace& trace);

struct EpochStats {
    double mean_loss = 0;
    double accuracy = 0;
};

/// One pass in seeded random order; one Adam step per conversation.
EpochStats train_epoch(PanetParams& params, Adam& optimizer, std::span<const ModelInput> inputs,
                       std::span<const std::vector<std::size_t>> labels, double l2, std::uint64_t order_seed);

std::vector<std::vector<std::size_t>> predict(const PanetParams& params, std::span<const ModelInput> inputs);

}  // namespace m2r2::panet
