#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2r2/numerics/tensor.hpp"

namespace m2r2 {

/// A named trainable tensor together with its gradient accumulator.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad.fill(0.0); }
};

enum class OpKind : std::uint8_t {
    Leaf,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu,
    Add,
    Sub,
    Mul,
    Neg,
    Square,
    Sqrt,
    Scale,
    AddConstant,
    MatMul,
    Transpose,
    Reshape,
    Concat,
    Stack,
    GatherRows,
    Softmax,
    Sum,
    LogClamped,
    Pick,
    AddRowwise,
    BatchNormTrain,
    BatchNormEval,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::uint32_t id() const { return id_; }
    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool valid() const { return graph_ != nullptr; }

private:
    Graph* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

struct ComputationNode {
    OpKind op = OpKind::Leaf;
    std::vector<std::uint32_t> parents;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    double scalar = 0.0;
    std::vector<std::size_t> indices;
    Tensor cache;
    Tensor cache2;
};

/// Define-by-run tape. Every op appends a node; backward() walks the tape
/// in reverse. Parameter leaves add their gradient into Parameter::grad, so
/// repeated backward passes accumulate until the caller zeroes them.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var parameter(Parameter& p);
    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the node (see Var::grad) after backward.
    Var input(Tensor value);

    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }
    const ComputationNode& node(std::uint32_t id) const { return nodes_[id]; }

    Var record(ComputationNode node);

private:
    void backprop_node(std::uint32_t id);
    void accumulate(std::uint32_t id, const Tensor& g);

    std::vector<ComputationNode> nodes_;
};

// Elementwise ops. Binary ops need equal shapes, or one side of size 1.
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.01);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var x);
Var square(Var x);
Var sqrt(Var x);
Var scale(Var x, double factor);
Var add_constant(Var x, double c);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);

// A[m x k] * B[k x n] -> [m x n]; A[m x k] * b[k] -> [m].
Var matmul(Var a, Var b);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis = 0);
/// Stacks equal-length vectors as the rows of a matrix.
Var stack_rows(std::span<const Var> rows);
/// Selects rows of a matrix (or a single row as a vector when `as_vector`).
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var row(Var x, std::size_t r);

Var softmax(Var x);
Var sum(Var x);
Var mean(Var x);
/// log(max(x, floor)); gradient is zero where the clamp is active.
Var log_clamped(Var x, double floor = 1e-12);
Var pick(Var x, std::size_t index);
/// X[n x d] + b[d] added to every row.
Var add_rowwise(Var x, Var bias);

/// Batch normalization over the rows of X[n x d] using batch statistics.
/// Writes the biased batch mean/variance to the out-parameters.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean, Tensor* batch_var);
/// Batch normalization using fixed statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, double eps);

}  // namespace m2r2
