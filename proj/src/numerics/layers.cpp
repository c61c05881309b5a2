#include "m2r2/numerics/layers.hpp"

#include <stdexcept>

namespace m2r2 {

Var bind(Graph& g, Parameter& p, bool trainable) { return trainable ? g.parameter(p) : g.constant(p.value); }

Linear Linear::create(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return Linear{Parameter(name + ".weight", glorot_uniform(rng, out, in)), Parameter(name + ".bias", Tensor({out}))};
}

Linear::Bound Linear::bind(Graph& g, bool trainable) {
    return Bound{m2r2::bind(g, weight, trainable), m2r2::bind(g, bias, trainable)};
}

Linear::Bound Linear::freeze(Graph& g) const { return Bound{g.constant(weight.value), g.constant(bias.value)}; }

Var Linear::Bound::apply(Var x) const { return add(matmul(weight, x), bias); }

Var Linear::Bound::apply_rows(Var x) const { return add_rowwise(matmul(x, transpose(weight)), bias); }

GruWeights GruWeights::create(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng) {
    auto w = [&](const char* suffix, std::size_t fan_in) {
        return Parameter(name + "." + suffix, glorot_uniform(rng, hidden, fan_in));
    };
    auto b = [&](const char* suffix) { return Parameter(name + "." + suffix, Tensor({hidden})); };
    GruWeights gw;
    gw.w_z = w("w_z", input);
    gw.u_z = w("u_z", hidden);
    gw.b_z = b("b_z");
    gw.w_r = w("w_r", input);
    gw.u_r = w("u_r", hidden);
    gw.b_r = b("b_r");
    gw.w_h = w("w_h", input);
    gw.u_h = w("u_h", hidden);
    gw.b_h = b("b_h");
    return gw;
}

void GruWeights::collect(std::vector<Parameter*>& out) {
    for (auto* p : {&w_z, &u_z, &b_z, &w_r, &u_r, &b_r, &w_h, &u_h, &b_h}) out.push_back(p);
}

namespace {

template <typename Gru, typename Binder>
GruWeights::Bound bind_gru(Gru& w, Binder&& b) {
    return GruWeights::Bound{b(w.w_z), b(w.u_z), b(w.b_z), b(w.w_r),        b(w.u_r),
                             b(w.b_r), b(w.w_h), b(w.u_h), b(w.b_h), w.input_size(), w.hidden_size()};
}

}  // namespace

GruWeights::Bound GruWeights::bind(Graph& g, bool trainable) {
    return bind_gru(*this, [&](Parameter& p) { return m2r2::bind(g, p, trainable); });
}

GruWeights::Bound GruWeights::freeze(Graph& g) const {
    return bind_gru(*this, [&](const Parameter& p) { return g.constant(p.value); });
}

Var GruWeights::Bound::step(Var x, Var h_prev) const {
    if (x.shape() != Shape{input})
        throw std::invalid_argument("gru: input " + shape_string(x.shape()) + " does not match input size " +
                                    std::to_string(input));
    if (h_prev.shape() != Shape{hidden})
        throw std::invalid_argument("gru: state " + shape_string(h_prev.shape()) + " does not match hidden size " +
                                    std::to_string(hidden));
    const Var z = sigmoid(matmul(w_z, x) + matmul(u_z, h_prev) + b_z);
    const Var r = sigmoid(matmul(w_r, x) + matmul(u_r, h_prev) + b_r);
    const Var candidate = m2r2::tanh(matmul(w_h, x) + matmul(u_h, r * h_prev) + b_h);
    return h_prev + z * (candidate - h_prev);
}

BatchNormLayer BatchNormLayer::create(const std::string& name, std::size_t features) {
    BatchNormLayer bn;
    bn.gamma = Parameter(name + ".gamma", Tensor({features}, 1.0));
    bn.beta = Parameter(name + ".beta", Tensor({features}));
    bn.running_mean = Tensor({features});
    bn.running_var = Tensor({features}, 1.0);
    return bn;
}

Var BatchNormLayer::apply(Var x, Var gamma_v, Var beta_v, bool train, bool update_running) {
    if (!train) return batch_norm_eval(x, gamma_v, beta_v, running_mean, running_var, eps);
    Tensor mu, var;
    Var out = batch_norm_train(x, gamma_v, beta_v, eps, &mu, &var);
    if (update_running) {
        for (std::size_t j = 0; j < mu.size(); ++j) {
            running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mu[j];
            running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var[j];
        }
    }
    return out;
}

}  // namespace m2r2
