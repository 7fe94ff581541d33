#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "textovsr/tensor.hpp"

namespace tovsr {

// Reverse-mode autodiff over Tensor<S>. A Var wraps a graph node; ops in
// ops.hpp build the graph when gradients are enabled and plain values when
// they are not (NoGradGuard), so evaluation frees intermediates eagerly.

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }

private:
    bool prev_;
};

template <class S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on demand, same dims as value
    bool requires_grad = false;
    uint64_t access_count = 0;  // bumped when a module reads this as a parameter
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<S>(value.dims());
    }
};

template <class S>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

    static Var leaf(Tensor<S> value, bool requires_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return n_ != nullptr; }
    Tensor<S>& value() const { return n_->value; }
    Tensor<S>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    bool has_grad() const { return !n_->grad.empty(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    std::shared_ptr<Node<S>> node() const { return n_; }

    S item() const {
        if (n_->value.numel() != 1) throw ShapeError("item() on non-scalar");
        return n_->value[0];
    }

    // Leaf sharing the value, cut off from the graph.
    Var detach() const { return leaf(n_->value, false); }

private:
    std::shared_ptr<Node<S>> n_;
};

template <class S>
inline Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs,
                      std::function<void(Node<S>&)> backward) {
    bool need = false;
    if (grad_enabled())
        for (const auto& v : inputs)
            if (v.defined() && v.requires_grad()) need = true;
    if (!need) return Var<S>::leaf(std::move(value), false);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = true;
    for (auto& v : inputs)
        if (v.defined()) n->parents.push_back(v.node());
    n->backward = std::move(backward);
    return Var<S>(std::move(n));
}

// Accumulates 1 into root's grad and walks the graph in reverse topological
// order. The root must be scalar unless seed is supplied.
template <class S>
inline void backward(const Var<S>& root, const Tensor<S>* seed = nullptr) {
    auto r = root.node();
    if (!r || !r->requires_grad) return;
    if (!seed && r->value.numel() != 1)
        throw ShapeError("backward() without seed needs a scalar root");

    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.push_back({r.get(), 0});
    seen.insert(r.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<S>* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    r->ensure_grad();
    if (seed) {
        if (!seed->same_shape(r->value)) throw ShapeError("backward seed shape mismatch");
        for (long long i = 0; i < seed->numel(); ++i) r->grad[i] += (*seed)[i];
    } else {
        r->grad[0] += S(1);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

using Varf = Var<float>;
using Vard = Var<double>;

}  // namespace tovsr
