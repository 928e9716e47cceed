#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

#include "nnvc/common.hpp"

namespace nnvc {

// Dense row-major tensor. Rank 1 for vectors/scalars, rank 3 for feature
// maps laid out (C, H, W), rank 4 for conv weights (OC, IC, KH, KW).
template <typename S>
struct Tensor {
    std::vector<int> dims;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(static_cast<size_t>(numel_of(dims)), S(0));
    }
    Tensor(std::vector<int> d, std::vector<S> data) : dims(std::move(d)), v(std::move(data)) {
        check_config(static_cast<int64_t>(v.size()) == numel_of(dims), "tensor data does not match dims");
    }

    static int64_t numel_of(const std::vector<int>& d) {
        int64_t n = 1;
        for (int x : d) {
            check_config(x >= 1, "tensor dims must be >= 1");
            n *= x;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
    static Tensor full(std::vector<int> d, S value) {
        Tensor t(std::move(d));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }
    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    int rank() const { return static_cast<int>(dims.size()); }
    int dim(int i) const { return dims[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    S& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // rank-3 access (C, H, W)
    S& at(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
    }
    S at(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
    }
    // rank-4 access (OC, IC, KH, KW)
    S& at4(int a, int b, int c, int d) {
        return v[((static_cast<size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
    }
    S at4(int a, int b, int c, int d) const {
        return v[((static_cast<size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
    }

    void fill(S value) { std::fill(v.begin(), v.end(), value); }

    bool all_finite() const {
        for (S x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.dims = dims;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// round half away from zero, the codec's scalar quantizer
template <typename S>
inline S round_half_away(S x) {
    return x >= S(0) ? std::floor(x + S(0.5)) : std::ceil(x - S(0.5));
}

template <typename S>
inline void fill_normal(Tensor<S>& t, std::mt19937& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> d(mean, stddev);
    for (auto& x : t.v) x = static_cast<S>(d(rng));
}

template <typename S>
inline void fill_uniform(Tensor<S>& t, std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& x : t.v) x = static_cast<S>(d(rng));
}

} // namespace nnvc
