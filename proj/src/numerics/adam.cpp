#include "m2r2/numerics/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace m2r2 {

Adam::Adam(AdamConfig config) : config_(config) {
    if (config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 || config_.beta2 >= 1)
        throw std::invalid_argument("adam: betas must lie in [0, 1)");
    if (config_.epsilon <= 0) throw std::invalid_argument("adam: epsilon must be positive");
}

void Adam::step(std::span<Parameter* const> params) {
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.emplace_back(Tensor::zeros_like(p->value));
            v_.emplace_back(Tensor::zeros_like(p->value));
        }
    }
    if (params.size() != m_.size())
        throw std::invalid_argument("adam: parameter list changed size (" + std::to_string(m_.size()) + " -> " +
                                    std::to_string(params.size()) + ")");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto* p = params[k];
        if (p->grad.shape() != p->value.shape() || m_[k].shape() != p->value.shape())
            throw std::invalid_argument("adam: shape mismatch for parameter " + p->name + ": value " +
                                        shape_string(p->value.shape()) + ", grad " + shape_string(p->grad.shape()) +
                                        ", moment " + shape_string(m_[k].shape()));
        if (!p->grad.all_finite())
            throw std::runtime_error("adam: non-finite gradient for parameter " + p->name + " at step " +
                                     std::to_string(steps_ + 1));
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto* p = params[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

void zero_grads(std::span<Parameter* const> params) {
    for (auto* p : params) p->zero_grad();
}

}  // namespace m2r2
