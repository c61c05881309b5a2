#include "m2r2/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "m2r2/crl/crl_io.hpp"
#include "m2r2/data/mask.hpp"

namespace m2r2::harness {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& field, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

double parse_number(const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
}

json synth_to_json(const data::SynthSpec& s) {
    return json{{"num_parties", s.num_parties},
                {"num_classes", s.num_classes},
                {"min_turns", s.min_turns},
                {"max_turns", s.max_turns},
                {"dims", {{"audio", s.dims.audio}, {"text", s.dims.text}, {"visual", s.dims.visual}}},
                {"noise", s.noise},
                {"rho", s.rho},
                {"switch_prob", s.switch_prob},
                {"persistence", s.persistence},
                {"mean_scale", s.mean_scale}};
}

void synth_from_json(const json& j, data::SynthSpec& s) {
    const std::string where = "'synth'";
    reject_unknown(j, {"num_parties", "num_classes", "min_turns", "max_turns", "dims", "noise", "rho", "switch_prob",
                       "persistence", "mean_scale"},
                   where);
    read(j, "num_parties", s.num_parties, where);
    read(j, "num_classes", s.num_classes, where);
    read(j, "min_turns", s.min_turns, where);
    read(j, "max_turns", s.max_turns, where);
    read(j, "noise", s.noise, where);
    read(j, "rho", s.rho, where);
    read(j, "switch_prob", s.switch_prob, where);
    read(j, "persistence", s.persistence, where);
    read(j, "mean_scale", s.mean_scale, where);
    if (j.contains("dims")) {
        const auto& d = j.at("dims");
        reject_unknown(d, {"audio", "text", "visual"}, "'synth.dims'");
        read(d, "audio", s.dims.audio, "'synth.dims'");
        read(d, "text", s.dims.text, "'synth.dims'");
        read(d, "visual", s.dims.visual, "'synth.dims'");
    }
}

json m2r2_to_json(const pipeline::M2r2Config& c) {
    json j{{"global_dim", c.global_dim},
           {"party_dim", c.party_dim},
           {"emotion_dim", c.emotion_dim},
           {"party_attention", c.panet_options.party_attention},
           {"bidirectional", c.panet_options.bidirectional},
           {"panet_learning_rate", c.panet_learning_rate},
           {"panet_l2", c.panet_l2},
           {"n_e", c.n_e},
           {"n_p", c.n_p},
           {"max_iterations", c.max_iterations},
           {"window", c.window},
           {"epsilon", c.epsilon},
           {"b_source", pipeline::to_string(c.b_source)},
           {"h_source", pipeline::to_string(c.h_source)}};
    json crl = crl::config_to_json(c.crl);
    crl.erase("seed");
    crl.erase("critic_seed");
    j["crl"] = std::move(crl);
    return j;
}

void m2r2_from_json(const json& j, pipeline::M2r2Config& c) {
    const std::string where = "'m2r2'";
    reject_unknown(j, {"global_dim", "party_dim", "emotion_dim", "party_attention", "bidirectional",
                       "panet_learning_rate", "panet_l2", "n_e", "n_p", "max_iterations", "window", "epsilon",
                       "b_source", "h_source", "crl"},
                   where);
    read(j, "global_dim", c.global_dim, where);
    read(j, "party_dim", c.party_dim, where);
    read(j, "emotion_dim", c.emotion_dim, where);
    read(j, "party_attention", c.panet_options.party_attention, where);
    read(j, "bidirectional", c.panet_options.bidirectional, where);
    read(j, "panet_learning_rate", c.panet_learning_rate, where);
    read(j, "panet_l2", c.panet_l2, where);
    read(j, "n_e", c.n_e, where);
    read(j, "n_p", c.n_p, where);
    read(j, "max_iterations", c.max_iterations, where);
    read(j, "window", c.window, where);
    read(j, "epsilon", c.epsilon, where);
    try {
        if (j.contains("b_source")) c.b_source = pipeline::parse_b_source(j.at("b_source").get<std::string>());
        if (j.contains("h_source")) c.h_source = pipeline::parse_h_source(j.at("h_source").get<std::string>());
        if (j.contains("crl")) {
            if (j.at("crl").contains("seed") || j.at("crl").contains("critic_seed"))
                throw ConfigError("'m2r2.crl' seeds derive from the master seed and cannot be set");
            c.crl = crl::config_from_json(j.at("crl"), c.crl);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value in 'm2r2': ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() != 3) throw ConfigError("grid must look like start:stop:step, got '" + text + "'");
        const double a = parse_number(parts[0]), b = parse_number(parts[1]), step = parse_number(parts[2]);
        if (!(step > 0) || b < a) throw ConfigError("grid '" + text + "' is empty or has a non-positive step");
        const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
        for (std::size_t i = 0; i < n; ++i) out.push_back(std::round((a + static_cast<double>(i) * step) * 1e9) / 1e9);
    } else {
        std::stringstream ss(text);
        for (std::string p; std::getline(ss, p, ',');) out.push_back(parse_number(p));
    }
    if (out.empty()) throw ConfigError("empty grid");
    return out;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["conversations"] = c.conversations;
    j["split"] = c.split;
    j["val_ratio"] = c.val_ratio;
    j["eta"] = c.eta;
    j["synth"] = synth_to_json(c.synth);
    j["m2r2"] = m2r2_to_json(c.m2r2);
    j["sweep"] = {{"grid", c.sweep.grid},
                  {"seeds", c.sweep.seeds},
                  {"mode", pipeline::to_string(c.sweep.mode)},
                  {"jobs", c.sweep.jobs}};
    return j;
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
    reject_unknown(j, {"seed", "conversations", "split", "val_ratio", "eta", "synth", "m2r2", "sweep"}, "config");
    read(j, "seed", c.seed, "config");
    read(j, "conversations", c.conversations, "config");
    read(j, "split", c.split, "config");
    read(j, "val_ratio", c.val_ratio, "config");
    read(j, "eta", c.eta, "config");
    if (j.contains("synth")) synth_from_json(j.at("synth"), c.synth);
    if (j.contains("m2r2")) m2r2_from_json(j.at("m2r2"), c.m2r2);
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        reject_unknown(s, {"grid", "seeds", "mode", "jobs"}, "'sweep'");
        if (s.contains("grid")) {
            const auto& g = s.at("grid");
            if (g.is_string())
                c.sweep.grid = parse_grid(g.get<std::string>());
            else
                read(s, "grid", c.sweep.grid, "'sweep'");
        }
        read(s, "seeds", c.sweep.seeds, "'sweep'");
        read(s, "jobs", c.sweep.jobs, "'sweep'");
        if (s.contains("mode")) {
            try {
                c.sweep.mode = pipeline::parse_ablation_mode(s.at("mode").get<std::string>());
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
        }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    auto c = from_json(j);
    validate(c);
    return c;
}

void validate(const ExperimentConfig& c) {
    try {
        data::validate(c.synth);
        pipeline::validate(c.m2r2);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.conversations < 2) throw ConfigError("conversations must be >= 2");
    if (!(c.split > 0 && c.split < 1)) throw ConfigError("split must lie in (0, 1)");
    if (!(c.val_ratio > 0 && c.val_ratio < 1)) throw ConfigError("val_ratio must lie in (0, 1)");
    if (!(c.eta >= 0 && c.eta <= data::kMaxMissingRate)) throw ConfigError("eta must lie in [0, 2/3]");
    for (double e : c.sweep.grid)
        if (!(e >= 0 && e <= data::kMaxMissingRate)) throw ConfigError("sweep grid value outside [0, 2/3]");
    if (c.sweep.seeds == 0) throw ConfigError("sweep.seeds must be >= 1");
    if (c.sweep.jobs == 0) throw ConfigError("sweep.jobs must be >= 1");
}

void propagate_seed(ExperimentConfig& c) {
    c.synth.seed = c.seed;
    c.m2r2.seed = c.seed;
}

}  // namespace m2r2::harness
