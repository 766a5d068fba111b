#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "streamline/tensor.hpp"

namespace streamline {

// Handle to a value recorded on a Graph.
struct Node {
    int id = -1;
    friend bool operator==(Node, Node) = default;
};

enum class OpKind {
    Leaf,
    MatMul,
    Transpose,
    Reshape,
    Add,
    Mul,
    Scale,
    Silu,
    Gelu,
    RmsNorm,
    Rope,
    CausalSoftmax,
    SliceCols,
    ConcatCols,
    ConcatRows,
    Gather,
    Sum,
    Mean,
    Mse,
    SoftmaxCe,
};

const char* op_name(OpKind kind);

// Reverse-mode tape over a fixed operation set. Nodes are appended in
// execution order, so the node list is already topologically sorted and
// backward() is a single reverse sweep. A Graph is confined to one thread.
//
// Reductions (matmul, norms, means, losses) accumulate in double and store
// float results.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf owning a copy of `value`.
    Node leaf(Tensor value, bool requires_grad = false);
    // Leaf borrowing `value`; it must outlive the graph.
    Node leaf_ref(const Tensor& value, bool requires_grad = false);

    Node matmul(Node a, Node b);
    Node transpose(Node a);
    Node reshape(Node a, Shape shape);
    // add/mul accept equal shapes, or one side holding a single element.
    Node add(Node a, Node b);
    Node mul(Node a, Node b);
    Node scale(Node a, float s);
    Node silu(Node a);
    // tanh approximation
    Node gelu(Node a);
    Node rmsnorm(Node x, Node gain, float eps);
    // Rotary position embedding applied independently to each head of a
    // [T x n_heads*head_dim] matrix, rotating adjacent pairs (2i, 2i+1).
    Node rope(Node x, std::size_t n_heads, float base = 10000.0f);
    // Row-wise softmax over columns j <= i of a square [T x T] matrix;
    // masked entries are exactly zero.
    Node causal_softmax(Node scores);
    Node slice_cols(Node a, std::size_t start, std::size_t width);
    Node concat_cols(std::span<const Node> parts);
    Node concat_rows(std::span<const Node> parts);
    // Rows of a [V x d] table selected by ids -> [len(ids) x d].
    Node gather(Node table, std::span<const int> ids);
    Node sum(Node a);
    Node mean(Node a);
    // Mean over every element of (a - b)^2.
    Node mse(Node a, Node b);
    // Mean over rows of -log softmax(logits[t])[targets[t]].
    Node softmax_ce(Node logits, std::span<const int> targets);

    const Tensor& value(Node n) const;
    bool requires_grad(Node n) const { return nodes_.at(n.id).requires_grad; }
    OpKind kind(Node n) const { return nodes_.at(n.id).kind; }
    std::size_t size() const { return nodes_.size(); }

    // Populates gradients for every node that requires them. `loss` must be
    // a single-element node. May be called once per graph.
    void backward(Node loss);
    // Gradient of the last backward() w.r.t. `n`. Nodes that received no
    // gradient contribution return zeros of the value's shape.
    const Tensor& grad(Node n);

private:
    struct Record {
        OpKind kind = OpKind::Leaf;
        std::vector<int> inputs;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        bool requires_grad = false;
        // Saved scalars/ints for backward (slice offsets, eps, scale, ...).
        double param = 0.0;
        std::size_t iparam = 0;
        std::vector<int> ids;
        // Saved per-row statistics (rms inverse, softmax logsumexp, ...).
        std::vector<double> saved;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    Node push(OpKind kind, std::vector<int> inputs, Tensor value);
    const Record& rec(Node n) const;
    Tensor& grad_slot(int id);
    void backprop(int id);

    std::vector<Record> nodes_;
    std::vector<std::optional<Tensor>> grads_;
    bool backward_done_ = false;
};

} // namespace streamline
