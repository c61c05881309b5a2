#include "m2r2/crl/crl_io.hpp"

#include <fstream>
#include <ostream>
#include <set>

#include "m2r2/format.hpp"

namespace m2r2::crl {

using json = nlohmann::ordered_json;

json config_to_json(const CrlConfig& c) {
    json j{{"h_dim", c.h_dim},
           {"lambda_r", c.lambda_r},
           {"lambda_c", c.lambda_c},
           {"lambda_a", c.lambda_a},
           {"lambda_g", c.lambda_g},
           {"critic_steps", c.critic_steps},
           {"learning_rate", c.learning_rate},
           {"h_learning_rate", c.h_learning_rate},
           {"weight_decay", c.weight_decay},
           {"hidden_layers", c.hidden_layers},
           {"hidden_width", c.hidden_width},
           {"leaky_slope", c.leaky_slope},
           {"gp_step", c.gp_step},
           {"h_init_std", c.h_init_std},
           {"finetune_epochs", c.finetune_epochs},
           {"seed", c.seed}};
    j["critic_seed"] = c.critic_seed ? json(*c.critic_seed) : json(nullptr);
    return j;
}

CrlConfig config_from_json(const json& j, CrlConfig c) {
    if (!j.is_object()) throw std::invalid_argument("crl config must be a JSON object");
    static const std::set<std::string> known{"h_dim",         "lambda_r",      "lambda_c",    "lambda_a",
                                             "lambda_g",      "critic_steps",  "learning_rate", "h_learning_rate",
                                             "weight_decay",  "hidden_layers", "hidden_width", "leaky_slope",
                                             "gp_step",       "h_init_std",    "finetune_epochs", "seed",
                                             "critic_seed"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw std::invalid_argument("unknown crl config key '" + k + "'");
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("h_dim", c.h_dim);
    get("lambda_r", c.lambda_r);
    get("lambda_c", c.lambda_c);
    get("lambda_a", c.lambda_a);
    get("lambda_g", c.lambda_g);
    get("critic_steps", c.critic_steps);
    get("learning_rate", c.learning_rate);
    get("h_learning_rate", c.h_learning_rate);
    get("weight_decay", c.weight_decay);
    get("hidden_layers", c.hidden_layers);
    get("hidden_width", c.hidden_width);
    get("leaky_slope", c.leaky_slope);
    get("gp_step", c.gp_step);
    get("h_init_std", c.h_init_std);
    get("finetune_epochs", c.finetune_epochs);
    get("seed", c.seed);
    if (j.contains("critic_seed")) {
        const auto& v = j.at("critic_seed");
        c.critic_seed = v.is_null() ? std::nullopt : std::optional<std::uint64_t>(v.get<std::uint64_t>());
    }
    validate(c);
    return c;
}

std::vector<EmbeddingRow> embedding_rows(const data::Dataset& dataset, const std::vector<Tensor>& tables) {
    if (tables.size() != dataset.conversations.size())
        throw std::invalid_argument("embedding export: " + std::to_string(tables.size()) + " tables for " +
                                    std::to_string(dataset.conversations.size()) + " conversations");
    std::vector<EmbeddingRow> rows;
    for (std::size_t n = 0; n < tables.size(); ++n) {
        const auto& conv = dataset.conversations[n];
        if (tables[n].rank() != 2 || tables[n].shape()[0] != conv.length())
            throw std::invalid_argument("embedding export: table for '" + conv.id + "' has shape " +
                                        shape_string(tables[n].shape()));
        for (std::size_t t = 0; t < conv.length(); ++t)
            rows.push_back({conv.id, t, conv.utterances[t].label, tables[n].row(t)});
    }
    return rows;
}

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, std::ostream& out) {
    const std::size_t d = rows.empty() ? 0 : rows.front().h.size();
    out << "conversation_id,turn,label";
    for (std::size_t i = 0; i < d; ++i) out << ",h_" << i;
    out << '\n';
    for (const auto& r : rows) {
        if (r.h.size() != d) throw std::invalid_argument("embedding export: ragged rows");
        out << r.conversation_id << ',' << r.turn << ',' << r.label;
        for (double v : r.h) out << ',' << format_g6(v);
        out << '\n';
    }
}

void save_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write_embeddings_csv(rows, out);
}

namespace {

std::vector<Parameter*> network_parameters(CrlState& s) {
    auto out = s.generator_parameters();
    for (std::size_t m = 0; m < s.modalities.size(); ++m) {
        auto c = s.critic_parameters(m);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

}  // namespace

Checkpoint to_checkpoint(CrlState& state) {
    Checkpoint c;
    c.format = kCheckpointFormat;
    c.meta["config"] = config_to_json(state.config);
    c.meta["num_classes"] = state.num_classes;
    json mods = json::array();
    for (const auto& m : state.modalities) mods.push_back({{"name", m.name}, {"dim", m.dim}});
    c.meta["modalities"] = mods;
    std::vector<std::size_t> lengths;
    for (const auto& h : state.h) lengths.push_back(h.value.shape()[0]);
    c.meta["h_lengths"] = lengths;
    c.meta["epochs_trained"] = state.epochs_trained;
    c.add(network_parameters(state));
    for (const auto& m : state.modalities)
        for (std::size_t i = 0; i < m.generator.norms.size(); ++i) {
            const auto& bn = m.generator.norms[i];
            c.add(bn.gamma.name + ".running_mean", bn.running_mean);
            c.add(bn.gamma.name + ".running_var", bn.running_var);
        }
    for (const auto& h : state.h) c.add(h.name, h.value);
    for (std::size_t k = 0; k < state.centroids.size(); ++k)
        if (state.centroids[k]) c.add("centroid." + std::to_string(k), *state.centroids[k]);
    return c;
}

CrlState from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.format != kCheckpointFormat)
        throw CheckpointError("expected a CRL checkpoint, got format '" + ckpt.format + "'");
    CrlConfig config;
    std::size_t classes = 0;
    std::vector<std::pair<std::string, std::size_t>> mods;
    std::vector<std::size_t> lengths;
    std::size_t epochs = 0;
    try {
        config = config_from_json(ckpt.meta.at("config"));
        classes = ckpt.meta.at("num_classes").get<std::size_t>();
        for (const auto& m : ckpt.meta.at("modalities"))
            mods.emplace_back(m.at("name").get<std::string>(), m.at("dim").get<std::size_t>());
        lengths = ckpt.meta.at("h_lengths").get<std::vector<std::size_t>>();
        epochs = ckpt.meta.at("epochs_trained").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("CRL checkpoint metadata: ") + e.what());
    }
    if (mods.size() < data::kModalityCount) throw CheckpointError("CRL checkpoint lists too few modalities");
    data::ModalityDims dims{mods[0].second, mods[1].second, mods[2].second};
    auto state = CrlState::create(config, dims, classes, lengths);
    for (std::size_t m = data::kModalityCount; m < mods.size(); ++m) state.add_modality(mods[m].first, mods[m].second);
    ckpt.restore(network_parameters(state));
    for (auto& m : state.modalities)
        for (auto& bn : m.generator.norms) {
            bn.running_mean = ckpt.get(bn.gamma.name + ".running_mean");
            bn.running_var = ckpt.get(bn.gamma.name + ".running_var");
        }
    std::vector<Parameter*> hp;
    for (auto& h : state.h) hp.push_back(&h);
    ckpt.restore(hp);
    for (std::size_t k = 0; k < classes; ++k) {
        const auto name = "centroid." + std::to_string(k);
        if (ckpt.contains(name)) state.centroids[k] = ckpt.get(name);
    }
    state.epochs_trained = epochs;
    return state;
}

void save_crl(CrlState& state, const std::filesystem::path& path) { save_checkpoint(to_checkpoint(state), path); }

CrlState load_crl(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path, kCheckpointFormat)); }

}  // namespace m2r2::crl
