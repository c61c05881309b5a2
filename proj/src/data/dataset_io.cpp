#include "m2r2/data/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"

namespace m2r2::data {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
    throw DatasetError("line " + std::to_string(line) + ": " + what);
}

std::size_t read_count(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key)) fail(line, std::string("missing field '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        fail(line, std::string("field '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

std::optional<FeatureVector> read_features(const json& u, const char* key, std::size_t line) {
    if (!u.contains(key) || u.at(key).is_null()) return std::nullopt;
    const auto& arr = u.at(key);
    if (!arr.is_array()) fail(line, std::string("field '") + key + "' must be an array or null");
    FeatureVector out;
    out.reserve(arr.size());
    for (const auto& x : arr) {
        if (!x.is_number()) fail(line, std::string("field '") + key + "' contains a non-numeric value");
        out.push_back(x.get<double>());
    }
    return out;
}

json features_json(const std::optional<FeatureVector>& f) {
    if (!f) return nullptr;
    return json(*f);
}

}  // namespace

Dataset read_dataset(std::istream& in) {
    Dataset ds;
    std::string text;
    std::size_t line = 0;
    bool have_header = false;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.empty()) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            fail(line, std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) fail(line, "expected a JSON object");
        if (!have_header) {
            if (!j.contains("dims") || !j.at("dims").is_object()) fail(line, "header must carry a 'dims' object");
            const auto& dims = j.at("dims");
            ds.dims.audio = read_count(dims, "audio", line);
            ds.dims.text = read_count(dims, "text", line);
            ds.dims.visual = read_count(dims, "visual", line);
            if (!j.contains("classes") || !j.at("classes").is_array()) fail(line, "header must carry 'classes'");
            for (const auto& c : j.at("classes")) {
                if (!c.is_string()) fail(line, "class names must be strings");
                ds.classes.push_back(c.get<std::string>());
            }
            have_header = true;
            continue;
        }
        Conversation conv;
        if (!j.contains("id") || !j.at("id").is_string()) fail(line, "conversation needs a string 'id'");
        conv.id = j.at("id").get<std::string>();
        conv.num_parties = read_count(j, "num_parties", line);
        if (!j.contains("utterances") || !j.at("utterances").is_array()) fail(line, "missing 'utterances' array");
        for (const auto& u : j.at("utterances")) {
            if (!u.is_object()) fail(line, "utterance must be an object");
            Utterance utt;
            utt.turn = read_count(u, "t", line);
            utt.speaker = read_count(u, "speaker", line);
            utt.label = read_count(u, "label", line);
            for (std::size_t m = 0; m < kModalityCount; ++m) utt.features[m] = read_features(u, modality_name(m), line);
            if (!utt.features[0] && !utt.features[1] && !utt.features[2])
                fail(line, "turn " + std::to_string(utt.turn) + " has every modality absent");
            conv.utterances.push_back(std::move(utt));
        }
        ds.conversations.push_back(std::move(conv));
        try {
            validate(Dataset{ds.dims, ds.classes, {ds.conversations.back()}});
        } catch (const DatasetError& e) {
            fail(line, e.what());
        }
    }
    if (!have_header) throw DatasetError("dataset file is empty (no header line)");
    validate(ds);
    return ds;
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
    json header;
    header["dims"] = {{"audio", dataset.dims.audio}, {"text", dataset.dims.text}, {"visual", dataset.dims.visual}};
    header["classes"] = dataset.classes;
    out << header.dump() << '\n';
    for (const auto& conv : dataset.conversations) {
        json j;
        j["id"] = conv.id;
        j["num_parties"] = conv.num_parties;
        json utts = json::array();
        for (const auto& u : conv.utterances) {
            json ju;
            ju["t"] = u.turn;
            ju["speaker"] = u.speaker;
            ju["label"] = u.label;
            for (std::size_t m = 0; m < kModalityCount; ++m) ju[modality_name(m)] = features_json(u.features[m]);
            utts.push_back(std::move(ju));
        }
        j["utterances"] = std::move(utts);
        out << j.dump() << '\n';
    }
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open dataset file " + path.string());
    return read_dataset(in);
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write dataset file " + path.string());
    write_dataset(dataset, out);
}

}  // namespace m2r2::data
