#pragma once

#include <string>
#include <vector>

#include "m2r2/numerics/graph.hpp"
#include "m2r2/random.hpp"

namespace m2r2 {

/// Binds a parameter as a trainable leaf, or as a constant when frozen.
Var bind(Graph& g, Parameter& p, bool trainable = true);

/// Affine map y = W x + b with W stored as [out x in].
struct Linear {
    Parameter weight;
    Parameter bias;

    static Linear create(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
    std::size_t in_features() const { return weight.value.shape()[1]; }
    std::size_t out_features() const { return weight.value.shape()[0]; }
    void collect(std::vector<Parameter*>& out) { out.push_back(&weight); out.push_back(&bias); }

    struct Bound {
        Var weight, bias;
        Var apply(Var x) const;        // x: [in] -> [out]
        Var apply_rows(Var x) const;   // X: [n x in] -> [n x out]
    };
    Bound bind(Graph& g, bool trainable = true);
    Bound freeze(Graph& g) const;
};

/// Gated recurrent unit: z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
/// c = tanh(W x + U (r o h) + b), h' = (1 - z) o h + z o c.
struct GruWeights {
    Parameter w_z, u_z, b_z;
    Parameter w_r, u_r, b_r;
    Parameter w_h, u_h, b_h;

    static GruWeights create(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);
    std::size_t input_size() const { return w_z.value.shape()[1]; }
    std::size_t hidden_size() const { return w_z.value.shape()[0]; }
    void collect(std::vector<Parameter*>& out);

    struct Bound {
        Var w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
        std::size_t input = 0, hidden = 0;
        Var step(Var x, Var h_prev) const;
    };
    Bound bind(Graph& g, bool trainable = true);
    Bound freeze(Graph& g) const;
};

/// Feature-wise batch normalization with running statistics (TF-style
/// momentum: running = momentum * running + (1 - momentum) * batch).
struct BatchNormLayer {
    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    static BatchNormLayer create(const std::string& name, std::size_t features);
    void collect(std::vector<Parameter*>& out) { out.push_back(&gamma); out.push_back(&beta); }

    /// Train mode normalizes with batch statistics and, when `update_running`,
    /// folds them into the running estimates. Eval mode uses the running ones.
    Var apply(Var x, Var gamma_v, Var beta_v, bool train, bool update_running);
};

}  // namespace m2r2
