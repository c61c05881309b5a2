#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "m2r2/numerics/graph.hpp"

namespace m2r2 {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are bound to parameters by position in
/// the span handed to step(), so callers must pass the same list every time.
class Adam {
public:
    explicit Adam(AdamConfig config = {});

    void step(std::span<Parameter* const> params);

    const AdamConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    std::uint64_t steps() const { return steps_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

void zero_grads(std::span<Parameter* const> params);

}  // namespace m2r2
