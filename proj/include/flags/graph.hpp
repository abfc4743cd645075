#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "flags/tensor.hpp"

namespace flags {

class Graph;

// Handle to a node recorded in a Graph. Cheap to copy; valid while the graph
// is alive.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

    Graph* graph() const { return graph_; }
    std::size_t id() const { return id_; }

private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended as ops run, so index order is a
// topological order and backward() is a single reverse sweep.
class Graph {
public:
    // Receives the gradient flowing into the node and pushes contributions to
    // its parents with add_grad().
    using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op result. The node requires grad iff any parent does; the
    // backward closure is dropped otherwise.
    Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

    // Populates grad() for every node. Nodes with no path to `output` end up
    // with zero gradient. Throws ContractError unless `output` holds exactly
    // one element.
    void backward(Var output);

    // Accumulates `g` into the gradient buffer of `target` (no-op for nodes
    // that do not require grad).
    void add_grad(Var target, const Tensor& g);
    // Element-wise accumulation without materializing a tensor.
    std::span<double> grad_buffer(Var target);

    const Tensor& value(Var v) const { return nodes_[v.id_].value; }
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var check(Var v) const;

    std::vector<Node> nodes_;
};

// --- differentiable ops -----------------------------------------------------
// All ops require their inputs to live in the same graph.

// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);
// [m x k] * [n x k]^T -> [m x n]
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// [n x m] + [m] broadcast over rows.
Var add_bias(Var a, Var bias);
Var relu(Var a);
// Throws OverflowError when any argument exceeds kExpLimit.
Var exp(Var a);
// Throws NumericError on non-positive input.
Var log(Var a);
// Rank-1 dot product -> [1].
Var dot(Var a, Var b);
// Row-wise dot of two [n x d] matrices -> [n x 1].
Var row_dot(Var a, Var b);
// Rank 1: joins along the only axis. Rank 2: axis 0 stacks rows, axis 1 joins
// columns.
Var concat(std::span<const Var> parts, std::size_t axis = 0);
// Sum of all elements -> [1].
Var sum(Var a);
// Rank 1 -> [1]; rank 2 -> [n x 1]. Max-shifted, never overflows.
Var logsumexp_rows(Var a);
// Rank 1: whole vector; rank 2: each row. Throws DegenerateVectorError when a
// norm is <= epsilon.
Var l2_normalize(Var a, double epsilon = 1e-12);

inline constexpr double kExpLimit = 700.0;
inline constexpr double kNormalizeEpsilon = 1e-12;

}  // namespace flags
