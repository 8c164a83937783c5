#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mae {

// Dense f64 tensor with an optional gradient slot, plus the tape node
// needed for reverse-mode differentiation. Shapes are CHW / flat vectors;
// there is no general broadcasting.

class Tensor;

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Propagates this->grad into inputs' grad buffers.
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return value.size(); }
    bool is_leaf() const { return inputs.empty(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline std::size_t shape_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node>();
        n->value.assign(detail::shape_count(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false) {
        if (detail::shape_count(shape) != values.size())
            throw std::invalid_argument("value count does not match shape");
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        Tensor t(std::move(n));
        t.check_finite();
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& op() const { return node_->op; }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
        return node_->value[0];
    }

    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
    void accumulate_grad(const std::vector<double>& g) {
        node_->ensure_grad();
        if (g.size() != node_->grad.size())
            throw std::invalid_argument("grad shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
    }

    void check_finite() const {
        for (double v : node_->value)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite value in op '" + node_->op + "'");
    }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }

    // Builds a non-leaf node. The backward function reads out.grad and
    // accumulates into the inputs' grad buffers.
    static Tensor make_op(std::string op, std::vector<int> shape,
                          std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward_fn) {
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->op = std::move(op);
        for (auto& in : inputs) {
            n->inputs.push_back(in.handle());
            if (in.requires_grad()) n->requires_grad = true;
        }
        n->backward_fn = std::move(backward_fn);
        Tensor t(std::move(n));
        t.check_finite();
        return t;
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Non-leaf grad buffers are reset per
// call; leaf grads accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            detail::Node* child = n->inputs[idx++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // order is children-before-parents; traverse reversed for backprop.
    for (detail::Node* n : order) {
        n->ensure_grad();
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->is_leaf() && n->requires_grad && n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace mae
