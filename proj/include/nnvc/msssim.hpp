#pragma once

#include "nnvc/ops.hpp"

namespace nnvc {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
template <typename S>
Tensor<S> msssim_window() {
    const int K = 11;
    const double sigma = 1.5;
    Tensor<S> w({K, K});
    double total = 0;
    for (int y = 0; y < K; ++y)
        for (int x = 0; x < K; ++x) {
            double dy = y - (K - 1) / 2.0, dx = x - (K - 1) / 2.0;
            double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            w[y * K + x] = S(g);
            total += g;
        }
    for (auto& v : w.v) v = S(double(v) / total);
    return w;
}

inline const double kMsssimWeights5[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

inline int max_msssim_scales(int h, int w) {
    int s = 0;
    int m = std::min(h, w);
    while (m >= 11 && s < 5) {
        ++s;
        m /= 2;
    }
    return std::max(s, 1);
}

// Multi-scale structural similarity on (C,H,W) maps in [0,1]. Differentiable;
// per-scale means are floored at 1e-4 before exponentiation so the weighted
// product stays defined on adversarial inputs.
template <typename S>
Val<S> ms_ssim(Val<S> x, Val<S> y, int scales) {
    Graph<S>& g = *x.g;
    check_config(x.value().same_shape(y.value()), "ms_ssim: shape mismatch");
    check_config(scales >= 1 && scales <= 5, "ms_ssim: scales must be 1..5");
    int need = 11 << (scales - 1);
    check_config(x.dim(1) >= need && x.dim(2) >= need,
                 "ms_ssim: input too small for requested scale count");

    static thread_local Tensor<S> win = msssim_window<S>();
    const S C1 = S(0.01 * 0.01); // (k1 L)^2, L = 1
    const S C2 = S(0.03 * 0.03);

    double wsum = 0;
    for (int i = 0; i < scales; ++i) wsum += kMsssimWeights5[i];

    Val<S> result = g.constant(Tensor<S>::scalar(S(1)));
    for (int s = 0; s < scales; ++s) {
        Val<S> mu1 = window_filter_valid(x, win);
        Val<S> mu2 = window_filter_valid(y, win);
        Val<S> mu1_sq = mul(mu1, mu1);
        Val<S> mu2_sq = mul(mu2, mu2);
        Val<S> mu1_mu2 = mul(mu1, mu2);
        Val<S> sigma1_sq = sub(window_filter_valid(mul(x, x), win), mu1_sq);
        Val<S> sigma2_sq = sub(window_filter_valid(mul(y, y), win), mu2_sq);
        Val<S> sigma12 = sub(window_filter_valid(mul(x, y), win), mu1_mu2);

        Val<S> cs_map = div(add_const(mul_const(sigma12, S(2)), C2),
                            add_const(add(sigma1_sq, sigma2_sq), C2));
        S weight = S(kMsssimWeights5[s] / wsum);
        if (s + 1 < scales) {
            Val<S> mcs = clamp_min(mean(cs_map), S(1e-4));
            result = mul(result, pow_const(mcs, weight));
            x = avg_pool2(x, /*ceil_mode=*/false);
            y = avg_pool2(y, /*ceil_mode=*/false);
        } else {
            Val<S> lum_map = div(add_const(mul_const(mu1_mu2, S(2)), C1),
                                 add_const(add(mu1_sq, mu2_sq), C1));
            Val<S> ssim_map = mul(lum_map, cs_map);
            Val<S> mssim = clamp_min(mean(ssim_map), S(1e-4));
            result = mul(result, pow_const(mssim, weight));
        }
    }
    return result;
}

// Convenience non-graph entry point.
template <typename S>
S ms_ssim_value(const Tensor<S>& x, const Tensor<S>& y, int scales) {
    Graph<S> g;
    Val<S> a = g.constant(x);
    Val<S> b = g.constant(y);
    return ms_ssim(a, b, scales).value()[0];
}

} // namespace nnvc
