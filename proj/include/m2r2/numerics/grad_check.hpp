#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "m2r2/numerics/graph.hpp"

namespace m2r2 {

/// Builds a scalar loss on a fresh graph. Must bind the checked parameters
/// through Graph::parameter so their gradients are collected.
using ScalarBuilder = std::function<Var(Graph&)>;

struct GradCheckEntry {
    std::string parameter;
    double max_rel_error = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0;
    double tolerance = 0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
/// turning round-off into large relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares reverse-mode gradients with central differences for every entry
/// of every parameter. Throws if two evaluations of `f` disagree. `floor`
/// is the magnitude below which errors count as absolute rather than relative.
GradCheckReport grad_check(const ScalarBuilder& f, std::span<Parameter* const> params, double step = 1e-5,
                           double tolerance = 1e-4, double floor = 1e-6);

}  // namespace m2r2
