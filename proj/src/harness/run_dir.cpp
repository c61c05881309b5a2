#include "m2r2/harness/run_dir.hpp"

#include <stdexcept>

namespace m2r2::harness {

RunDir::RunDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "checkpoints");
    log_.open(root_ / "run.log", std::ios::binary | std::ios::trunc);
    if (!log_) throw std::runtime_error("cannot write to run directory '" + root_.string() + "'");
    // Start a fresh iteration log for this run.
    std::ofstream(root_ / "iterations.jsonl", std::ios::binary | std::ios::trunc);
}

void RunDir::write_json(const std::string& name, const nlohmann::ordered_json& j) const {
    std::ofstream out(file(name), std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + file(name).string() + "'");
    out << j.dump(2) << '\n';
}

void RunDir::append_iteration(const nlohmann::ordered_json& record) {
    std::ofstream out(file("iterations.jsonl"), std::ios::binary | std::ios::app);
    out << record.dump() << '\n';
}

void RunDir::log(const std::string& line) {
    log_ << line << '\n';
    log_.flush();
}

nlohmann::ordered_json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace m2r2::harness
