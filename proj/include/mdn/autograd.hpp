#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Var is a shared handle to a graph node. Leaves created with
// Var::parameter() accumulate gradients across backward() calls until
// zero_grad(); intermediate nodes are released with the last handle.
// Recording is disabled inside a NoGradGuard scope (thread-local).

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor(value.shape);
        return grad;
    }
};

class Var {
public:
    Var() = default;

    static Var constant(Tensor value) {
        Var v;
        v.node_ = std::make_shared<Node>();
        v.node_->value = std::move(value);
        return v;
    }

    static Var parameter(Tensor value) {
        Var v = constant(std::move(value));
        v.node_->requires_grad = true;
        v.node_->ensure_grad();
        return v;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->ensure_grad(); }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double item() const { return node_->value.data.at(0); }

    void zero_grad() {
        if (node_->requires_grad) node_->grad = Tensor(node_->value.shape);
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Builds a result node. The backward closure is kept only when recording is
/// enabled and at least one parent requires a gradient.
inline Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    Var out = Var::constant(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    Node* n = out.node();
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.shared());
    n->backward_fn = std::move(backward_fn);
    return out;
}

/// Gradient accumulator for parent i, or nullptr when that parent does not
/// need one.
inline Tensor* parent_grad(Node& n, std::size_t i) {
    Node* p = n.parents[i].get();
    return p->requires_grad ? &p->ensure_grad() : nullptr;
}

inline const Tensor& parent_value(const Node& n, std::size_t i) { return n.parents[i]->value; }

/// Runs reverse accumulation from a scalar root (seed gradient 1).
inline void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.size() != 1) throw DimensionError("backward: root must be a scalar");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward_fn) n->grad = Tensor(n->value.shape);
    }
    root.node()->ensure_grad().data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    // Interior gradients are only needed during the sweep.
    for (Node* n : order) {
        if (n->backward_fn) n->grad = Tensor();
    }
}

inline Var detach(const Var& v) { return Var::constant(v.value()); }

} // namespace mdn
