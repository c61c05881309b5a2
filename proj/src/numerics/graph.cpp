#include "m2r2/numerics/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace m2r2 {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros_like(value)) {}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Relu: return "relu";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Neg: return "neg";
        case OpKind::Square: return "square";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Scale: return "scale";
        case OpKind::AddConstant: return "add_constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Reshape: return "reshape";
        case OpKind::Concat: return "concat";
        case OpKind::Stack: return "stack_rows";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::Softmax: return "softmax";
        case OpKind::Sum: return "sum";
        case OpKind::LogClamped: return "log_clamped";
        case OpKind::Pick: return "pick";
        case OpKind::AddRowwise: return "add_rowwise";
        case OpKind::BatchNormTrain: return "batch_norm_train";
        case OpKind::BatchNormEval: return "batch_norm_eval";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }
const Tensor& Var::grad() const { return graph_->node(id_).grad; }

Var Graph::record(ComputationNode node) {
    if (nodes_.size() >= UINT32_MAX) throw std::length_error("computation graph too large");
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::parameter(Parameter& p) {
    ComputationNode n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    return record(std::move(n));
}

Var Graph::constant(Tensor value) {
    ComputationNode n;
    n.value = std::move(value);
    return record(std::move(n));
}

Var Graph::input(Tensor value) {
    ComputationNode n;
    n.value = std::move(value);
    n.requires_grad = true;
    return record(std::move(n));
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                                shape_string(b));
}

Graph& graph_of(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw std::invalid_argument("operands belong to different graphs");
    return a.graph();
}

ComputationNode make_node(OpKind op, std::initializer_list<Var> parents) {
    ComputationNode n;
    n.op = op;
    for (const auto& p : parents) {
        n.parents.push_back(p.id());
        n.requires_grad = n.requires_grad || p.graph().node(p.id()).requires_grad;
    }
    return n;
}

template <typename F>
Var unary(OpKind op, Var x, F&& f, double scalar = 0.0) {
    auto n = make_node(op, {x});
    n.scalar = scalar;
    const auto& xv = x.value();
    n.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = f(xv[i]);
    return x.graph().record(std::move(n));
}

enum class Broadcast { None, Left, Right };

Broadcast broadcast_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::None;
    if (a.is_scalar()) return Broadcast::Left;
    if (b.is_scalar()) return Broadcast::Right;
    shape_error(op, a.shape(), b.shape());
}

template <typename F>
Var binary(OpKind op, const char* name, Var a, Var b, F&& f) {
    auto& g = graph_of(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    const auto mode = broadcast_mode(name, av, bv);
    auto n = make_node(op, {a, b});
    n.value = Tensor(mode == Broadcast::Left ? bv.shape() : av.shape());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = mode == Broadcast::Left ? av[0] : av[i];
        const double y = mode == Broadcast::Right ? bv[0] : bv[i];
        n.value[i] = f(x, y);
    }
    return g.record(std::move(n));
}

}  // namespace

Var sigmoid(Var x) {
    return unary(OpKind::Sigmoid, x, [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
}

Var tanh(Var x) { return unary(OpKind::Tanh, x, [](double v) { return std::tanh(v); }); }
Var relu(Var x) { return unary(OpKind::Relu, x, [](double v) { return v > 0 ? v : 0.0; }); }
Var leaky_relu(Var x, double slope) {
    return unary(OpKind::LeakyRelu, x, [slope](double v) { return v > 0 ? v : slope * v; }, slope);
}
Var neg(Var x) { return unary(OpKind::Neg, x, [](double v) { return -v; }); }
Var square(Var x) { return unary(OpKind::Square, x, [](double v) { return v * v; }); }
Var sqrt(Var x) {
    return unary(OpKind::Sqrt, x, [](double v) {
        if (v < 0) throw std::domain_error("sqrt of negative value");
        return std::sqrt(v);
    });
}
Var scale(Var x, double factor) {
    return unary(OpKind::Scale, x, [factor](double v) { return v * factor; }, factor);
}
Var add_constant(Var x, double c) {
    return unary(OpKind::AddConstant, x, [c](double v) { return v + c; }, c);
}

Var add(Var a, Var b) { return binary(OpKind::Add, "add", a, b, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, "sub", a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, "mul", a, b, [](double x, double y) { return x * y; }); }
Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var matmul(Var a, Var b) {
    auto& g = graph_of(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() > 2 || av.shape()[1] != bv.shape()[0]) shape_error("matmul", av.shape(), bv.shape());
    const std::size_t m = av.shape()[0];
    const std::size_t k = av.shape()[1];
    const std::size_t n = bv.rank() == 2 ? bv.shape()[1] : 1;
    auto node = make_node(OpKind::MatMul, {a, b});
    node.value = bv.rank() == 2 ? Tensor({m, n}) : Tensor({m});
    double* out = node.value.values().data();
    const double* A = av.values().data();
    const double* B = bv.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return g.record(std::move(node));
}

Var transpose(Var x) {
    const auto& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("transpose: expected a matrix, got " + shape_string(xv.shape()));
    const std::size_t r = xv.shape()[0];
    const std::size_t c = xv.shape()[1];
    auto n = make_node(OpKind::Transpose, {x});
    n.value = Tensor({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n.value[j * r + i] = xv[i * c + j];
    return x.graph().record(std::move(n));
}

Var reshape(Var x, Shape shape) {
    auto n = make_node(OpKind::Reshape, {x});
    n.value = x.value().reshaped(std::move(shape));
    return x.graph().record(std::move(n));
}

namespace {

// Splits a shape around `axis` into (outer, inner) extents for concat.
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    std::size_t inner = 1;
    for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}

}  // namespace

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    auto& g = parts[0].graph();
    const auto& first = parts[0].value().shape();
    if (axis >= first.size()) throw std::invalid_argument("concat: axis out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    ComputationNode n;
    n.op = OpKind::Concat;
    n.indices.push_back(axis);
    for (const auto& p : parts) {
        if (&p.graph() != &g) throw std::invalid_argument("concat: operands belong to different graphs");
        const auto& s = p.value().shape();
        if (s.size() != first.size()) shape_error("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != first[d]) shape_error("concat", first, s);
        out_shape[axis] += s[axis];
        n.parents.push_back(p.id());
        n.requires_grad = n.requires_grad || g.node(p.id()).requires_grad;
    }
    n.value = Tensor(out_shape);
    const auto outer = outer_inner(out_shape, axis).first;
    const auto out_inner = outer_inner(out_shape, axis).second;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        const auto inner = outer_inner(pv.shape(), axis).second;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) n.value[o * out_inner + offset + i] = pv[o * inner + i];
        offset += inner;
    }
    return g.record(std::move(n));
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    auto& g = rows[0].graph();
    const auto& s0 = rows[0].value().shape();
    if (s0.size() != 1) throw std::invalid_argument("stack_rows: expected vectors, got " + shape_string(s0));
    const std::size_t d = s0[0];
    ComputationNode n;
    n.op = OpKind::Stack;
    n.value = Tensor({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& v = rows[r].value();
        if (v.shape() != s0) shape_error("stack_rows", s0, v.shape());
        n.parents.push_back(rows[r].id());
        n.requires_grad = n.requires_grad || g.node(rows[r].id()).requires_grad;
        for (std::size_t j = 0; j < d; ++j) n.value[r * d + j] = v[j];
    }
    return g.record(std::move(n));
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
    const auto& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("gather_rows: expected a matrix, got " + shape_string(xv.shape()));
    if (rows.empty()) throw std::invalid_argument("gather_rows: empty row selection");
    const std::size_t c = xv.shape()[1];
    auto n = make_node(OpKind::GatherRows, {x});
    n.value = Tensor({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.shape()[0]) throw std::out_of_range("gather_rows: row index out of range");
        for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] = xv[rows[i] * c + j];
    }
    n.indices = std::move(rows);
    return x.graph().record(std::move(n));
}

Var row(Var x, std::size_t r) {
    const auto c = x.value().cols();
    return reshape(gather_rows(x, {r}), {c});
}

Var softmax(Var x) {
    const auto& xv = x.value();
    if (xv.empty()) throw std::invalid_argument("softmax: empty input");
    auto n = make_node(OpKind::Softmax, {x});
    n.value = Tensor(xv.shape());
    double mx = xv[0];
    for (std::size_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv[i]);
    double total = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        n.value[i] = std::exp(xv[i] - mx);
        total += n.value[i];
    }
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] /= total;
    return x.graph().record(std::move(n));
}

Var sum(Var x) {
    auto n = make_node(OpKind::Sum, {x});
    double s = 0;
    for (double v : x.value().values()) s += v;
    n.value = Tensor::scalar(s);
    return x.graph().record(std::move(n));
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var log_clamped(Var x, double floor) {
    return unary(OpKind::LogClamped, x, [floor](double v) { return std::log(std::max(v, floor)); }, floor);
}

Var pick(Var x, std::size_t index) {
    if (index >= x.size()) throw std::out_of_range("pick: index out of range");
    auto n = make_node(OpKind::Pick, {x});
    n.indices = {index};
    n.value = Tensor::scalar(x.value()[index]);
    return x.graph().record(std::move(n));
}

Var add_rowwise(Var x, Var bias) {
    auto& g = graph_of(x, bias);
    const auto& xv = x.value();
    const auto& bv = bias.value();
    if (xv.rank() != 2 || bv.rank() != 1 || xv.shape()[1] != bv.shape()[0])
        shape_error("add_rowwise", xv.shape(), bv.shape());
    auto n = make_node(OpKind::AddRowwise, {x, bias});
    n.value = xv;
    const std::size_t c = xv.shape()[1];
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] += bv[i % c];
    return g.record(std::move(n));
}

namespace {

Var batch_norm_common(OpKind op, Var x, Var gamma, Var beta, const Tensor& mu, const Tensor& var, double eps) {
    const auto& xv = x.value();
    const std::size_t r = xv.shape()[0];
    const std::size_t c = xv.shape()[1];
    auto n = make_node(op, {x, gamma, beta});
    n.scalar = eps;
    n.cache = Tensor(xv.shape());
    n.cache2 = Tensor({c});
    n.value = Tensor(xv.shape());
    for (std::size_t j = 0; j < c; ++j) n.cache2[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (xv[i * c + j] - mu[j]) * n.cache2[j];
            n.cache[i * c + j] = xhat;
            n.value[i * c + j] = gamma.value()[j] * xhat + beta.value()[j];
        }
    }
    return x.graph().record(std::move(n));
}

void check_bn_shapes(Var x, Var gamma, Var beta) {
    const auto& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("batch_norm: expected a matrix, got " + shape_string(xv.shape()));
    const Shape col{xv.shape()[1]};
    if (gamma.shape() != col) shape_error("batch_norm", xv.shape(), gamma.shape());
    if (beta.shape() != col) shape_error("batch_norm", xv.shape(), beta.shape());
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean, Tensor* batch_var) {
    check_bn_shapes(x, gamma, beta);
    const auto& xv = x.value();
    const std::size_t r = xv.shape()[0];
    const std::size_t c = xv.shape()[1];
    Tensor mu({c}), var({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) mu[j] += xv[i * c + j];
    for (std::size_t j = 0; j < c; ++j) mu[j] /= static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xv[i * c + j] - mu[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(r);
    auto out = batch_norm_common(OpKind::BatchNormTrain, x, gamma, beta, mu, var, eps);
    if (batch_mean) *batch_mean = std::move(mu);
    if (batch_var) *batch_var = std::move(var);
    return out;
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mu, const Tensor& var, double eps) {
    check_bn_shapes(x, gamma, beta);
    if (mu.size() != x.value().shape()[1] || var.size() != mu.size())
        shape_error("batch_norm_eval", x.value().shape(), mu.shape());
    return batch_norm_common(OpKind::BatchNormEval, x, gamma, beta, mu, var, eps);
}

void Graph::accumulate(std::uint32_t id, const Tensor& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    auto out = n.grad.values();
    auto in = g.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
}

void Graph::backward(Var root) {
    if (&root.graph() != this) throw std::invalid_argument("backward: root belongs to another graph");
    if (!root.value().is_scalar())
        throw std::invalid_argument("backward: root must be scalar, got " + shape_string(root.shape()));
    const auto rid = root.id();
    for (std::uint32_t i = 0; i <= rid; ++i) {
        auto& n = nodes_[i];
        if (n.requires_grad) n.grad = Tensor::zeros_like(n.value);
    }
    if (!nodes_[rid].requires_grad) return;
    nodes_[rid].grad[0] = 1.0;
    for (std::uint32_t i = rid + 1; i-- > 0;) {
        if (nodes_[i].requires_grad) backprop_node(i);
    }
}

void Graph::backprop_node(std::uint32_t id) {
    auto& n = nodes_[id];
    const Tensor& G = n.grad;
    const auto grad_needed = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };
    const auto parent_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };
    auto parent_grad = [&](std::size_t k) -> Tensor& { return nodes_[n.parents[k]].grad; };

    switch (n.op) {
        case OpKind::Leaf:
            if (n.param) {
                auto pg = n.param->grad.values();
                if (pg.size() != G.size()) throw std::logic_error("parameter gradient shape drifted: " + n.param->name);
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += G[i];
            }
            return;
        case OpKind::Sigmoid: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += G[i] * n.value[i] * (1.0 - n.value[i]);
            return;
        }
        case OpKind::Tanh: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += G[i] * (1.0 - n.value[i] * n.value[i]);
            return;
        }
        case OpKind::Relu: {
            auto& pg = parent_grad(0);
            const auto& x = parent_value(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += x[i] > 0 ? G[i] : 0.0;
            return;
        }
        case OpKind::LeakyRelu: {
            auto& pg = parent_grad(0);
            const auto& x = parent_value(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += x[i] > 0 ? G[i] : n.scalar * G[i];
            return;
        }
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul: {
            const auto& a = parent_value(0);
            const auto& b = parent_value(1);
            const bool a_bcast = a.size() != G.size();
            const bool b_bcast = b.size() != G.size();
            const double sign_b = n.op == OpKind::Sub ? -1.0 : 1.0;
            if (grad_needed(0)) {
                auto& pg = parent_grad(0);
                for (std::size_t i = 0; i < G.size(); ++i) {
                    const double d = n.op == OpKind::Mul ? G[i] * (b_bcast ? b[0] : b[i]) : G[i];
                    pg[a_bcast ? 0 : i] += d;
                }
            }
            if (grad_needed(1)) {
                auto& pg = parent_grad(1);
                for (std::size_t i = 0; i < G.size(); ++i) {
                    const double d = n.op == OpKind::Mul ? G[i] * (a_bcast ? a[0] : a[i]) : sign_b * G[i];
                    pg[b_bcast ? 0 : i] += d;
                }
            }
            return;
        }
        case OpKind::Neg: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] -= G[i];
            return;
        }
        case OpKind::Square: {
            auto& pg = parent_grad(0);
            const auto& x = parent_value(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += 2.0 * x[i] * G[i];
            return;
        }
        case OpKind::Sqrt: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i)
                if (n.value[i] > 0) pg[i] += 0.5 * G[i] / n.value[i];
            return;
        }
        case OpKind::Scale: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += n.scalar * G[i];
            return;
        }
        case OpKind::AddConstant:
        case OpKind::Reshape: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += G[i];
            return;
        }
        case OpKind::MatMul: {
            const auto& A = parent_value(0);
            const auto& B = parent_value(1);
            const std::size_t m = A.shape()[0];
            const std::size_t k = A.shape()[1];
            const std::size_t ncols = B.rank() == 2 ? B.shape()[1] : 1;
            const double* g = G.values().data();
            if (grad_needed(0)) {
                double* dA = parent_grad(0).values().data();
                const double* b = B.values().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0;
                        for (std::size_t j = 0; j < ncols; ++j) s += g[i * ncols + j] * b[p * ncols + j];
                        dA[i * k + p] += s;
                    }
            }
            if (grad_needed(1)) {
                double* dB = parent_grad(1).values().data();
                const double* a = A.values().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = a[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < ncols; ++j) dB[p * ncols + j] += aip * g[i * ncols + j];
                    }
            }
            return;
        }
        case OpKind::Transpose: {
            auto& pg = parent_grad(0);
            const std::size_t r = G.shape()[0];
            const std::size_t c = G.shape()[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pg[j * r + i] += G[i * c + j];
            return;
        }
        case OpKind::Concat: {
            const std::size_t axis = n.indices[0];
            const auto [outer, out_inner] = outer_inner(n.value.shape(), axis);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.parents.size(); ++k) {
                const auto inner = outer_inner(parent_value(k).shape(), axis).second;
                if (grad_needed(k)) {
                    auto& pg = parent_grad(k);
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < inner; ++i) pg[o * inner + i] += G[o * out_inner + offset + i];
                }
                offset += inner;
            }
            return;
        }
        case OpKind::Stack: {
            const std::size_t d = G.shape()[1];
            for (std::size_t r = 0; r < n.parents.size(); ++r) {
                if (!grad_needed(r)) continue;
                auto& pg = parent_grad(r);
                for (std::size_t j = 0; j < d; ++j) pg[j] += G[r * d + j];
            }
            return;
        }
        case OpKind::GatherRows: {
            auto& pg = parent_grad(0);
            const std::size_t c = G.shape()[1];
            for (std::size_t i = 0; i < n.indices.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) pg[n.indices[i] * c + j] += G[i * c + j];
            return;
        }
        case OpKind::Softmax: {
            auto& pg = parent_grad(0);
            double dot = 0;
            for (std::size_t i = 0; i < G.size(); ++i) dot += G[i] * n.value[i];
            for (std::size_t i = 0; i < G.size(); ++i) pg[i] += n.value[i] * (G[i] - dot);
            return;
        }
        case OpKind::Sum: {
            auto& pg = parent_grad(0);
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += G[0];
            return;
        }
        case OpKind::LogClamped: {
            auto& pg = parent_grad(0);
            const auto& x = parent_value(0);
            for (std::size_t i = 0; i < G.size(); ++i)
                if (x[i] > n.scalar) pg[i] += G[i] / x[i];
            return;
        }
        case OpKind::Pick: {
            parent_grad(0)[n.indices[0]] += G[0];
            return;
        }
        case OpKind::AddRowwise: {
            const std::size_t c = G.shape()[1];
            if (grad_needed(0)) accumulate(n.parents[0], G);
            if (grad_needed(1)) {
                auto& pg = parent_grad(1);
                for (std::size_t i = 0; i < G.size(); ++i) pg[i % c] += G[i];
            }
            return;
        }
        case OpKind::BatchNormTrain:
        case OpKind::BatchNormEval: {
            const std::size_t r = G.shape()[0];
            const std::size_t c = G.shape()[1];
            const auto& gamma = parent_value(1);
            const Tensor& xhat = n.cache;
            const Tensor& inv_std = n.cache2;
            if (grad_needed(1)) {
                auto& pg = parent_grad(1);
                for (std::size_t i = 0; i < G.size(); ++i) pg[i % c] += G[i] * xhat[i];
            }
            if (grad_needed(2)) {
                auto& pg = parent_grad(2);
                for (std::size_t i = 0; i < G.size(); ++i) pg[i % c] += G[i];
            }
            if (grad_needed(0)) {
                auto& pg = parent_grad(0);
                if (n.op == OpKind::BatchNormEval) {
                    for (std::size_t i = 0; i < G.size(); ++i) pg[i] += G[i] * gamma[i % c] * inv_std[i % c];
                    return;
                }
                const double inv_n = 1.0 / static_cast<double>(r);
                for (std::size_t j = 0; j < c; ++j) {
                    double sum_d = 0, sum_dx = 0;
                    for (std::size_t i = 0; i < r; ++i) {
                        const double d = G[i * c + j] * gamma[j];
                        sum_d += d;
                        sum_dx += d * xhat[i * c + j];
                    }
                    for (std::size_t i = 0; i < r; ++i) {
                        const double d = G[i * c + j] * gamma[j];
                        pg[i * c + j] += inv_std[j] * inv_n *
                                         (static_cast<double>(r) * d - sum_d - xhat[i * c + j] * sum_dx);
                    }
                }
            }
            return;
        }
    }
}

}  // namespace m2r2
