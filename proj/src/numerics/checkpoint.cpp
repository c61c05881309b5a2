#include "m2r2/numerics/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>

namespace m2r2 {

using json = nlohmann::ordered_json;

void Checkpoint::add(const std::string& name, const Tensor& value) {
    if (contains(name)) throw CheckpointError("duplicate tensor '" + name + "'");
    tensors.push_back({name, value});
}

void Checkpoint::add(std::span<Parameter* const> params) {
    for (const auto* p : params) add(p->name, p->value);
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::restore(std::span<Parameter* const> params) const {
    for (auto* p : params) {
        const Tensor& v = get(p->name);
        if (v.shape() != p->value.shape())
            throw CheckpointError("tensor '" + p->name + "' has shape " + shape_string(v.shape()) + ", expected " +
                                  shape_string(p->value.shape()));
        p->value = v;
    }
}

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    json j;
    j["format"] = ckpt.format;
    j["version"] = ckpt.version;
    j["meta"] = ckpt.meta;
    json arr = json::array();
    for (const auto& t : ckpt.tensors) {
        json e;
        e["name"] = t.name;
        e["shape"] = t.value.shape();
        e["data"] = t.value.data();
        arr.push_back(std::move(e));
    }
    j["tensors"] = std::move(arr);
    out << j.dump() << '\n';
    if (!out) throw CheckpointError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in, const std::string& expected_format) {
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
    }
    Checkpoint c;
    try {
        c.format = j.at("format").get<std::string>();
        c.version = j.at("version").get<int>();
        c.meta = j.value("meta", json::object());
        if (!expected_format.empty() && c.format != expected_format)
            throw CheckpointError("checkpoint format is '" + c.format + "', expected '" + expected_format + "'");
        if (c.version != 1) throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
        for (const auto& e : j.at("tensors")) {
            auto shape = e.at("shape").get<Shape>();
            auto data = e.at("data").get<std::vector<double>>();
            const auto name = e.at("name").get<std::string>();
            if (shape.empty() || shape_size(shape) != data.size())
                throw CheckpointError("tensor '" + name + "' has inconsistent shape and data");
            c.add(name, Tensor(std::move(shape), std::move(data)));
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
    return read_checkpoint(in, expected_format);
}

}  // namespace m2r2
