#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "m2r2/numerics/grad_check.hpp"

namespace m2r2::harness {

struct GradCase {
    std::string name;
    /// "op" for single operations, "composite" for model-level losses.
    std::string group;
    double tolerance = 0;
    /// Worst report over all seeds.
    GradCheckReport worst;
    std::uint64_t worst_seed = 0;
    bool passed = false;
};

struct GradSuiteReport {
    std::vector<GradCase> cases;
    std::size_t seeds = 0;
    bool passed = false;
};

struct GradSuiteOptions {
    std::uint64_t seed = 0;
    std::size_t seeds = 20;
    double op_tolerance = 1e-4;
    double composite_tolerance = 1e-3;
    /// Adds a case built on an operation whose backward pass disagrees with
    /// its forward pass. Used to confirm that failures are reported.
    bool inject_fault = false;
};

/// Every differentiable operation, the GRU cell, one PANet turn, and the CRL
/// generator and critic objectives, each on `seeds` random draws.
GradSuiteReport run_grad_suite(const GradSuiteOptions& options);

nlohmann::ordered_json to_json(const GradSuiteReport& report);

}  // namespace m2r2::harness
