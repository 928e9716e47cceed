#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "nnvc/tensor.hpp"

namespace nnvc {

template <typename S>
class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename S>
struct Val {
    Graph<S>* g = nullptr;
    int id = -1;

    const Tensor<S>& value() const { return g->node(id).value; }
    const Tensor<S>& grad() const { return g->node(id).grad; }
    int dim(int i) const { return value().dim(i); }
    int rank() const { return value().rank(); }
};

// Define-by-run reverse-mode tape. One graph per forward/backward pass.
// Ops append nodes whose `back` closure scatters the node's grad into its
// parents' grads; backward() walks the tape in reverse creation order.
template <typename S>
class Graph {
public:
    // back(graph, self_id): reads node(self_id).grad, accumulates into parents.
    using BackFn = std::function<void(Graph&, int)>;

    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool needs_grad = false;
        BackFn back; // empty for leaves
    };

    Val<S> leaf(Tensor<S> value, bool needs_grad = false) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Val<S> constant(Tensor<S> value) { return leaf(std::move(value), false); }

    Val<S> make(Tensor<S> value, bool needs_grad, BackFn back) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    // Gradient buffer of a node, allocated on first touch.
    Tensor<S>& grad_of(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.dims);
        return n.grad;
    }

    void backward(Val<S> loss) {
        check_config(loss.value().numel() == 1, "backward expects a scalar loss");
        for (auto& n : nodes_) n.grad = Tensor<S>();
        grad_of(loss.id)[0] = S(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.needs_grad || !n.back || n.grad.numel() == 0) continue;
            n.back(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

} // namespace nnvc
