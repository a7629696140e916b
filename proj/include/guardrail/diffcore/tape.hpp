#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "guardrail/diffcore/tensor.hpp"

namespace guardrail::diff {

enum class OpKind {
    leaf,
    matmul,
    transpose,
    add,
    add_row,
    mul,
    scale,
    gelu,
    layernorm,
    softmax,
    l2_normalize,
    dot,
    embedding_gather,
    cross_entropy,
    select_rows,
    select_cols,
    slice_cols,
    concat_cols,
    reshape,
    sum,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives
/// and is not moved.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already a topological order of the graph.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(OpKind::leaf, {}, std::move(value), nullptr, requires_grad);
    }

    /// Appends a computed node. The node requires grad when any input does.
    Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward,
             bool force_requires_grad = false) {
        require(value.all_finite(), ErrorCode::non_finite,
                "tape: non-finite output from op " + std::to_string(static_cast<int>(kind)));
        bool needs = force_requires_grad;
        for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
        nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor{}, needs,
                              needs ? std::move(backward) : BackwardFn{}});
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }
    OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
    const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of the last backward() loss with respect to this node. Zero
    /// tensor of the node's shape when the node did not require grad.
    const Tensor& grad(Var v) const { return grad(v.id); }
    const Tensor& grad(std::size_t id) const {
        const Node& n = nodes_.at(id);
        require(!n.grad.empty(), ErrorCode::invalid_argument,
                "tape: gradient requested for a node that does not require grad");
        return n.grad;
    }

    // Mutable gradient slot; used by backward closures.
    Tensor& grad_slot(std::size_t id) { return nodes_[id].grad; }

    void backward(Var loss) {
        require(loss.tape == this, ErrorCode::invalid_argument, "backward: loss from another tape");
        const Node& root = nodes_.at(loss.id);
        require(root.value.size() == 1, ErrorCode::shape_mismatch,
                "backward: loss must be scalar, got " + shape_string(root.value.shape()));
        require(root.requires_grad, ErrorCode::invalid_argument,
                "backward: loss does not depend on any tracked leaf");
        for (Node& n : nodes_) {
            if (n.requires_grad) {
                n.grad = Tensor(n.value.shape(), 0.0);
            }
        }
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.requires_grad && n.backward) n.backward(*this, id);
        }
    }

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        bool requires_grad;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

}  // namespace guardrail::diff
