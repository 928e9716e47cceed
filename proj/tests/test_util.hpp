#pragma once

#include <functional>
#include <random>
#include <vector>

#include "nnvc/graph.hpp"
#include "nnvc/params.hpp"

namespace nnvc_test {

using nnvc::Graph;
using nnvc::Tensor;
using nnvc::Val;

// Central finite-difference check. `build` must be a pure function of the
// leaf tensors: it receives a fresh graph plus leaves and returns the scalar
// loss node. Returns the worst relative error over sampled coordinates of
// every leaf marked differentiable.
inline double max_fd_rel_err(
    std::vector<Tensor<double>> inputs,
    const std::function<Val<double>(Graph<double>&, std::vector<Val<double>>&)>& build,
    std::mt19937& rng, int samples_per_input = 6, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor<double>>& ins) {
        Graph<double> g;
        std::vector<Val<double>> leaves;
        for (const auto& t : ins) leaves.push_back(g.leaf(t, true));
        return build(g, leaves).value()[0];
    };

    // analytic gradients
    Graph<double> g;
    std::vector<Val<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    Val<double> loss = build(g, leaves);
    g.backward(loss);
    std::vector<Tensor<double>> grads;
    for (auto& l : leaves) {
        if (l.grad().numel() == 0)
            grads.push_back(Tensor<double>::zeros(l.value().dims));
        else
            grads.push_back(l.grad());
    }

    double worst = 0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        int64_t n = inputs[k].numel();
        int samples = int(std::min<int64_t>(samples_per_input, n));
        for (int s = 0; s < samples; ++s) {
            int64_t idx = std::uniform_int_distribution<int64_t>(0, n - 1)(rng);
            double orig = inputs[k][idx];
            inputs[k][idx] = orig + h;
            double fp = eval(inputs);
            inputs[k][idx] = orig - h;
            double fm = eval(inputs);
            inputs[k][idx] = orig;
            double fd = (fp - fm) / (2 * h);
            double an = grads[k][idx];
            double err = std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// FD check against every parameter in a store. `build` must construct the
// scalar loss from the given graph and binder and be pure given the store.
inline double max_fd_store_err(
    nnvc::ParamStore<double>& store,
    const std::function<Val<double>(Graph<double>&, nnvc::ParamBinder<double>&)>& build,
    std::mt19937& rng, int samples_per_param = 2, double h = 1e-5) {
    auto eval = [&]() {
        Graph<double> g;
        nnvc::ParamBinder<double> binder(store);
        binder.set_trainable(false);
        return build(g, binder).value()[0];
    };

    store.zero_grad();
    Graph<double> g;
    nnvc::ParamBinder<double> binder(store);
    Val<double> loss = build(g, binder);
    g.backward(loss);
    binder.collect(g);

    double worst = 0;
    for (auto& [name, p] : store.params) {
        int64_t n = p.value.numel();
        int samples = int(std::min<int64_t>(samples_per_param, n));
        for (int s = 0; s < samples; ++s) {
            int64_t idx = std::uniform_int_distribution<int64_t>(0, n - 1)(rng);
            double orig = p.value[idx];
            p.value[idx] = orig + h;
            double fp = eval();
            p.value[idx] = orig - h;
            double fm = eval();
            p.value[idx] = orig;
            double fd = (fp - fm) / (2 * h);
            double an = p.grad[idx];
            double err = std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline Tensor<double> random_tensor(std::vector<int> dims, std::mt19937& rng, double lo = -1.0,
                                    double hi = 1.0) {
    Tensor<double> t(std::move(dims));
    nnvc::fill_uniform(t, rng, lo, hi);
    return t;
}

inline Tensor<float> random_tensor_f(std::vector<int> dims, std::mt19937& rng, double lo = -1.0,
                                     double hi = 1.0) {
    Tensor<float> t(std::move(dims));
    nnvc::fill_uniform(t, rng, lo, hi);
    return t;
}

} // namespace nnvc_test
