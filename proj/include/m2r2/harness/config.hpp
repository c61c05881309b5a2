#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/pipeline/m2r2.hpp"

namespace m2r2::harness {

struct SweepConfig {
    std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::size_t seeds = 5;
    pipeline::AblationMode mode = pipeline::AblationMode::full;
    std::size_t jobs = 1;
};

/// Everything a CLI run needs. The master seed drives every stream; the
/// per-module seeds inside `synth` and `m2r2` are overwritten from it.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    data::SynthSpec synth;
    std::size_t conversations = 80;
    /// Fraction of conversations in the training part of a train/test split.
    double split = 0.75;
    /// Fraction of training conversations used for fitting; the rest validate.
    double val_ratio = 0.8;
    double eta = 0.5;
    pipeline::M2r2Config m2r2;
    SweepConfig sweep;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parses "a:b:step" (inclusive) or a comma-separated list.
std::vector<double> parse_grid(const std::string& text);

nlohmann::ordered_json to_json(const ExperimentConfig& config);
/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
ExperimentConfig from_json(const nlohmann::ordered_json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

/// Copies the master seed into the module configs.
void propagate_seed(ExperimentConfig& config);

}  // namespace m2r2::harness
