#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "m2r2/numerics/graph.hpp"

namespace m2r2 {

// JSON document:
//   {"format": str, "version": int, "meta": {...},
//    "tensors": [{"name": str, "shape": [int], "data": [f64]}]}
// Doubles are written with round-trip precision.

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Checkpoint {
    std::string format;
    int version = 1;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    std::vector<NamedTensor> tensors;

    void add(const std::string& name, const Tensor& value);
    void add(std::span<Parameter* const> params);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    /// Copies stored values into the parameters, checking names and shapes.
    void restore(std::span<Parameter* const> params) const;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in, const std::string& expected_format);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_format);

}  // namespace m2r2
