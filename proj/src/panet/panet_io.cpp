#include "m2r2/panet/panet_io.hpp"

namespace m2r2::panet {

using json = nlohmann::ordered_json;

json dims_to_json(const PanetDims& d) {
    return json{{"audio", d.modalities.audio}, {"text", d.modalities.text},     {"visual", d.modalities.visual},
                {"extension", d.extension},    {"global", d.global},            {"party", d.party},
                {"emotion", d.emotion},        {"classes", d.classes},          {"max_parties", d.max_parties}};
}

PanetDims dims_from_json(const json& j) {
    PanetDims d;
    d.modalities.audio = j.at("audio").get<std::size_t>();
    d.modalities.text = j.at("text").get<std::size_t>();
    d.modalities.visual = j.at("visual").get<std::size_t>();
    d.extension = j.at("extension").get<std::size_t>();
    d.global = j.at("global").get<std::size_t>();
    d.party = j.at("party").get<std::size_t>();
    d.emotion = j.at("emotion").get<std::size_t>();
    d.classes = j.at("classes").get<std::size_t>();
    d.max_parties = j.at("max_parties").get<std::size_t>();
    return d;
}

Checkpoint to_checkpoint(PanetParams& params) {
    Checkpoint c;
    c.format = kCheckpointFormat;
    c.meta["dims"] = dims_to_json(params.dims);
    c.meta["party_attention"] = params.options.party_attention;
    c.meta["bidirectional"] = params.options.bidirectional;
    c.add(params.parameters());
    return c;
}

PanetParams from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.format != kCheckpointFormat)
        throw CheckpointError("expected a PANet checkpoint, got format '" + ckpt.format + "'");
    PanetDims dims;
    PanetOptions options;
    try {
        dims = dims_from_json(ckpt.meta.at("dims"));
        options.party_attention = ckpt.meta.at("party_attention").get<bool>();
        options.bidirectional = ckpt.meta.at("bidirectional").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("PANet checkpoint metadata: ") + e.what());
    }
    auto params = PanetParams::create(dims, options, 0);
    ckpt.restore(params.parameters());
    return params;
}

void save_panet(PanetParams& params, const std::filesystem::path& path) { save_checkpoint(to_checkpoint(params), path); }

PanetParams load_panet(const std::filesystem::path& path) {
    return from_checkpoint(load_checkpoint(path, kCheckpointFormat));
}

}  // namespace m2r2::panet
