#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace m2r2::harness {

// Layout:
//   <root>/config.json        resolved configuration
//   <root>/iterations.jsonl   one record per outer iteration
//   <root>/checkpoints/       panet.json, crl.json
//   <root>/metrics.json
//   <root>/embeddings.csv
//   <root>/run.log
class RunDir {
public:
    explicit RunDir(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path file(const std::string& name) const { return root_ / name; }
    std::filesystem::path checkpoint(const std::string& name) const { return root_ / "checkpoints" / name; }

    void write_json(const std::string& name, const nlohmann::ordered_json& j) const;
    void append_iteration(const nlohmann::ordered_json& record);
    void log(const std::string& line);

private:
    std::filesystem::path root_;
    std::ofstream log_;
};

nlohmann::ordered_json read_json(const std::filesystem::path& path);

}  // namespace m2r2::harness
