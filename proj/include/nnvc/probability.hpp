#pragma once

#include <functional>
#include <optional>

#include "nnvc/blocks.hpp"
#include "nnvc/range_coder.hpp"

namespace nnvc {

// Multi-resolution autoregressive probability model: the latent is downscaled
// into a pyramid; the lowest level is coded i.i.d. with a learned categorical,
// every other level with conditional Gaussians driven by the level below,
// the already-coded checkerboard groups of the same level, and (inter codec)
// features extracted from the reconstructed reference frames.

struct ProbModelConfig {
    int latent_channels = 32;
    int num_levels = 3;
    int hidden = 32;
    int feature_channels = 0; // reference-conditioning channels, 0 = intra
    int vmin = -127;
    int vmax = 128;
    float sigma_min = 0.01f;

    int alphabet() const { return vmax - vmin + 1; }
    int ctx_in_channels() const { return 2 * latent_channels + 1 + feature_channels; }
};

// network inputs are scaled symbols; fixed constant, identical on both sides
constexpr double kLatentInputScale = 0.1;

inline int effective_levels(int h, int w, int num_levels) {
    int m = std::min(h, w);
    int k = 1;
    while (k < num_levels && (m >> k) >= 1) ++k;
    return k;
}

inline std::pair<int, int> level_dims(int h, int w, int level, int levels) {
    int shift = levels - 1 - level;
    auto up = [](int v, int s) {
        for (int i = 0; i < s; ++i) v = (v + 1) / 2;
        return v;
    };
    return {up(h, shift), up(w, shift)};
}

// ----------------------------------------------------------------- pyramid

// 2x2 average-then-round cascade on integer symbols; border cells average
// their clipped window. Level 0 is the lowest resolution.
template <typename S>
std::vector<Tensor<S>> build_pyramid(const Tensor<S>& latent, int num_levels) {
    check_config(num_levels >= 1, "build_pyramid: need at least one level");
    check_config(latent.rank() == 3, "build_pyramid: rank-3 latent expected");
    int levels = effective_levels(latent.dim(1), latent.dim(2), num_levels);
    std::vector<Tensor<S>> pyr(static_cast<size_t>(levels));
    pyr[size_t(levels) - 1] = latent;
    for (int i = levels - 2; i >= 0; --i) {
        const Tensor<S>& src = pyr[size_t(i) + 1];
        int oh = (src.dim(1) + 1) / 2, ow = (src.dim(2) + 1) / 2;
        Tensor<S> dst({src.dim(0), oh, ow});
        for (int c = 0; c < src.dim(0); ++c)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    int y1 = std::min(2 * y + 2, src.dim(1)), x1 = std::min(2 * x + 2, src.dim(2));
                    double acc = 0;
                    int cnt = 0;
                    for (int yy = 2 * y; yy < y1; ++yy)
                        for (int xx = 2 * x; xx < x1; ++xx) {
                            acc += double(src.at(c, yy, xx));
                            ++cnt;
                        }
                    dst.at(c, y, x) = S(round_half_away(acc / cnt));
                }
        pyr[size_t(i)] = std::move(dst);
    }
    return pyr;
}

// ---------------------------------------------------------------- group plan

// Checkerboard phases in fixed order; empty phases are dropped so a 1x1
// level is a single group. Identical at encode and decode by construction.
struct GroupPlan {
    int h = 0, w = 0;
    std::vector<std::vector<std::pair<int, int>>> groups; // (y, x) positions
};

inline GroupPlan make_group_plan(int h, int w) {
    check_config(h >= 1 && w >= 1, "make_group_plan: bad dims");
    static const int phase[4][2] = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
    GroupPlan plan;
    plan.h = h;
    plan.w = w;
    for (auto& ph : phase) {
        std::vector<std::pair<int, int>> g;
        for (int y = ph[0]; y < h; y += 2)
            for (int x = ph[1]; x < w; x += 2) g.push_back({y, x});
        if (!g.empty()) plan.groups.push_back(std::move(g));
    }
    return plan;
}

// ----------------------------------------------------------- discretization

// Discretized Gaussian PMF over [vmin, vmax] with the tail mass folded into
// the range extremes; sums to 1 exactly (up to fp rounding). The 2^-16
// probability floor the arithmetic coder needs is enforced when the PMF is
// quantized to a CdfTable (every interval keeps at least one count).
inline std::vector<double> discretize_gaussian(double mu, double sigma, int vmin, int vmax) {
    check(sigma > 0, "discretize_gaussian: sigma must be positive");
    int A = vmax - vmin + 1;
    std::vector<double> pmf(size_t(A), 0.0);
    auto Phi = [](double x) { return 0.5 * std::erfc(-x * 0.7071067811865476); };
    for (int k = vmin; k <= vmax; ++k) {
        double p;
        if (k == vmin)
            p = Phi((k + 0.5 - mu) / sigma);
        else if (k == vmax)
            p = 1.0 - Phi((k - 0.5 - mu) / sigma);
        else
            p = Phi((k + 0.5 - mu) / sigma) - Phi((k - 0.5 - mu) / sigma);
        pmf[size_t(k - vmin)] = std::max(p, 0.0);
    }
    return pmf;
}

// ------------------------------------------------------------------- model

template <typename S>
void init_prob_model(ParamStore<S>& store, const std::string& prefix, const ProbModelConfig& cfg,
                     std::mt19937& rng) {
    store.create(prefix + ".base.logits", {cfg.alphabet()}); // zero init = uniform
    init_conv(store, prefix + ".ctx.conv0", cfg.hidden, cfg.ctx_in_channels(), 3, rng);
    init_conv(store, prefix + ".ctx.conv1", cfg.hidden, cfg.hidden, 3, rng);
    init_conv(store, prefix + ".ctx.conv2", 2 * cfg.latent_channels, cfg.hidden, 1, rng);
}

// Conditional Gaussian parameters for one level state. Inputs are the
// upsampled lower level, the current level masked to already-coded groups,
// the coded mask plane, and optional reference features.
template <typename S>
std::pair<Val<S>, Val<S>> conditional_params(Graph<S>& g, ParamBinder<S>& p,
                                             const std::string& prefix,
                                             const ProbModelConfig& cfg, Val<S> prev_up,
                                             Val<S> masked_cur, Val<S> mask,
                                             std::optional<Val<S>> ref_feats) {
    check_config(!ref_feats == (cfg.feature_channels == 0),
                 "conditional_params: feature conditioning mismatch");
    // causality guard: masked values must be zero wherever the mask is clear
    {
        const Tensor<S>& mv = masked_cur.value();
        const Tensor<S>& mk = mask.value();
        int h = mv.dim(1), w = mv.dim(2);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mk.at(0, y, x) == S(0))
                    for (int c = 0; c < mv.dim(0); ++c)
                        check_config(mv.at(c, y, x) == S(0),
                                     "conditional_params: causality violation, uncoded "
                                     "elements present in context");
    }
    std::vector<Val<S>> in = {mul_const(prev_up, S(kLatentInputScale)),
                              mul_const(masked_cur, S(kLatentInputScale)), mask};
    if (ref_feats) in.push_back(*ref_feats);
    Val<S> h = concat_channels(in);
    h = leaky_relu(conv3(g, p, prefix + ".ctx.conv0", h), S(0.2));
    h = leaky_relu(conv3(g, p, prefix + ".ctx.conv1", h), S(0.2));
    h = conv2d(h, p(g, prefix + ".ctx.conv2.w"), p(g, prefix + ".ctx.conv2.b"), 1, 0);
    int C = cfg.latent_channels;
    Val<S> mu = slice_channels(h, 0, C);
    Val<S> sigma = add_const(softplus(slice_channels(h, C, C)), S(cfg.sigma_min));
    return {mu, sigma};
}

// Base-level PMF: softmax of the shared learned logit table. As with the
// Gaussian PMFs, the coder-safety floor lives in the CDF quantization.
template <typename S>
std::vector<double> base_pmf(const ParamStore<S>& store, const std::string& prefix,
                             const ProbModelConfig& cfg) {
    const Tensor<S>& logits = store.at(prefix + ".base.logits").value;
    double mx = double(logits[0]);
    for (int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, double(logits[i]));
    std::vector<double> pmf(size_t(cfg.alphabet()), 0.0);
    double denom = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        pmf[size_t(i)] = std::exp(double(logits[i]) - mx);
        denom += pmf[size_t(i)];
    }
    for (auto& p : pmf) p /= denom;
    return pmf;
}

// -------------------------------------------------------------- latent coding

struct CodingTrace {
    std::vector<std::pair<int, int>> visits; // (level, group)
};

using CdfInspector = std::function<void(const CdfTable&)>;

namespace detail {

// Walks levels and groups in the canonical order shared by encoder and
// decoder. `cur` must hold decoded symbols for all earlier groups (encoder:
// masked copy of the truth; decoder: filled in as it goes). The visitor is
// called once per group with the Gaussian params of the whole level.
template <typename S, typename GroupFn>
void walk_conditional_levels(ParamStore<S>& store, const std::string& prefix,
                             const ProbModelConfig& cfg, std::vector<Tensor<S>>& levels,
                             const std::vector<Tensor<S>>& ref_feats, CodingTrace* trace,
                             GroupFn&& per_group) {
    int L = int(levels.size());
    for (int li = 1; li < L; ++li) {
        Tensor<S>& cur = levels[size_t(li)];
        int h = cur.dim(1), w = cur.dim(2);
        GroupPlan plan = make_group_plan(h, w);
        Tensor<S> mask = Tensor<S>::zeros({1, h, w});
        Tensor<S> masked = Tensor<S>::zeros(cur.dims);
        for (int gi = 0; gi < int(plan.groups.size()); ++gi) {
            Graph<S> g;
            ParamBinder<S> binder(store);
            binder.set_trainable(false);
            Val<S> prev_up = upsample_nearest2(g.constant(levels[size_t(li) - 1]), h, w);
            std::optional<Val<S>> feats;
            if (cfg.feature_channels > 0) {
                check_config(size_t(li) < ref_feats.size() && ref_feats[size_t(li)].numel() > 0,
                             "walk_conditional_levels: missing reference features");
                feats = g.constant(ref_feats[size_t(li)]);
            }
            auto [mu, sigma] = conditional_params(g, binder, prefix, cfg, prev_up,
                                                  g.constant(masked), g.constant(mask), feats);
            if (trace) trace->visits.push_back({li, gi});
            per_group(li, gi, plan.groups[size_t(gi)], mu.value(), sigma.value(), cur);
            // mark the group coded; decoder has filled `cur` by now
            for (auto& [y, x] : plan.groups[size_t(gi)]) {
                mask.at(0, y, x) = S(1);
                for (int c = 0; c < cur.dim(0); ++c) masked.at(c, y, x) = cur.at(c, y, x);
            }
        }
    }
}

} // namespace detail

// Entropy-codes an integer latent. `ref_feats[level]` supplies reference
// conditioning for levels >= 1 when cfg.feature_channels > 0.
template <typename S>
std::string code_latent(ParamStore<S>& store, const std::string& prefix,
                        const ProbModelConfig& cfg, const Tensor<S>& latent,
                        const std::vector<Tensor<S>>& ref_feats = {},
                        CodingTrace* trace = nullptr, const CdfInspector& inspect = nullptr) {
    check_config(latent.dim(0) == cfg.latent_channels, "code_latent: channel mismatch");
    std::vector<Tensor<S>> pyr = build_pyramid(latent, cfg.num_levels);
    RangeEncoder enc;

    // lowest level: shared categorical, raster order
    CdfTable base = pmf_to_cdf(base_pmf(store, prefix, cfg));
    if (inspect) inspect(base);
    if (trace) trace->visits.push_back({0, 0});
    const Tensor<S>& lvl0 = pyr[0];
    for (int64_t i = 0; i < lvl0.numel(); ++i) {
        int sym = int(round_half_away(double(lvl0[i]))) - cfg.vmin;
        check(sym >= 0 && sym < cfg.alphabet(), "code_latent: symbol out of range");
        enc.encode(base, sym);
    }

    // conditional levels: encoder masks the truth as it walks
    std::vector<Tensor<S>> levels = pyr;
    detail::walk_conditional_levels(
        store, prefix, cfg, levels, ref_feats, trace,
        [&](int, int, const std::vector<std::pair<int, int>>& group, const Tensor<S>& mu,
            const Tensor<S>& sigma, Tensor<S>& cur) {
            for (auto& [y, x] : group)
                for (int c = 0; c < cur.dim(0); ++c) {
                    auto pmf = discretize_gaussian(double(mu.at(c, y, x)),
                                                   double(sigma.at(c, y, x)), cfg.vmin, cfg.vmax);
                    CdfTable cdf = pmf_to_cdf(pmf);
                    if (inspect) inspect(cdf);
                    int sym = int(round_half_away(double(cur.at(c, y, x)))) - cfg.vmin;
                    check(sym >= 0 && sym < cfg.alphabet(), "code_latent: symbol out of range");
                    enc.encode(cdf, sym);
                }
        });
    return enc.finish();
}

template <typename S>
Tensor<S> decode_latent(ParamStore<S>& store, const std::string& prefix,
                        const ProbModelConfig& cfg, const std::string& bytes, int h, int w,
                        const std::vector<Tensor<S>>& ref_feats = {},
                        CodingTrace* trace = nullptr) {
    RangeDecoder dec(bytes);
    int levels_n = effective_levels(h, w, cfg.num_levels);

    std::vector<Tensor<S>> levels(static_cast<size_t>(levels_n));
    for (int li = 0; li < levels_n; ++li) {
        auto [lh, lw] = level_dims(h, w, li, levels_n);
        levels[size_t(li)] = Tensor<S>::zeros({cfg.latent_channels, lh, lw});
    }

    CdfTable base = pmf_to_cdf(base_pmf(store, prefix, cfg));
    if (trace) trace->visits.push_back({0, 0});
    Tensor<S>& lvl0 = levels[0];
    for (int64_t i = 0; i < lvl0.numel(); ++i) lvl0[i] = S(dec.decode(base) + cfg.vmin);

    detail::walk_conditional_levels(
        store, prefix, cfg, levels, ref_feats, trace,
        [&](int, int, const std::vector<std::pair<int, int>>& group, const Tensor<S>& mu,
            const Tensor<S>& sigma, Tensor<S>& cur) {
            for (auto& [y, x] : group)
                for (int c = 0; c < cur.dim(0); ++c) {
                    auto pmf = discretize_gaussian(double(mu.at(c, y, x)),
                                                   double(sigma.at(c, y, x)), cfg.vmin, cfg.vmax);
                    CdfTable cdf = pmf_to_cdf(pmf);
                    cur.at(c, y, x) = S(dec.decode(cdf) + cfg.vmin);
                }
        });
    return levels.back();
}

// Plain eval-time rate estimate: sum of -log2 P(symbol) over every coded
// element, under the same pyramid, PMFs and walk order as code_latent.
template <typename S>
double estimate_latent_bits(ParamStore<S>& store, const std::string& prefix,
                            const ProbModelConfig& cfg, const Tensor<S>& latent,
                            const std::vector<Tensor<S>>& ref_feats = {}) {
    std::vector<Tensor<S>> pyr = build_pyramid(latent, cfg.num_levels);
    double bits = 0;
    auto pmf0 = base_pmf(store, prefix, cfg);
    const Tensor<S>& lvl0 = pyr[0];
    for (int64_t i = 0; i < lvl0.numel(); ++i) {
        int sym = int(round_half_away(double(lvl0[i]))) - cfg.vmin;
        check(sym >= 0 && sym < cfg.alphabet(), "estimate_latent_bits: symbol out of range");
        bits += -std::log2(std::max(pmf0[size_t(sym)], 1.0 / 65536.0));
    }
    std::vector<Tensor<S>> levels = pyr;
    detail::walk_conditional_levels(
        store, prefix, cfg, levels, ref_feats, nullptr,
        [&](int, int, const std::vector<std::pair<int, int>>& group, const Tensor<S>& mu,
            const Tensor<S>& sigma, Tensor<S>& cur) {
            for (auto& [y, x] : group)
                for (int c = 0; c < cur.dim(0); ++c) {
                    auto pmf = discretize_gaussian(double(mu.at(c, y, x)),
                                                   double(sigma.at(c, y, x)), cfg.vmin, cfg.vmax);
                    int sym = int(round_half_away(double(cur.at(c, y, x)))) - cfg.vmin;
                    check(sym >= 0 && sym < cfg.alphabet(),
                          "estimate_latent_bits: symbol out of range");
                    bits += -std::log2(std::max(pmf[size_t(sym)], 1.0 / 65536.0));
                }
        });
    return bits;
}

// ------------------------------------------------------------ training rate

// Differentiable total-bits surrogate over the level pyramid. The pyramid is
// built with continuous ceil-mode average pooling (no rounding); the lowest
// level contributes through the categorical at rounded values, conditional
// levels through the Gaussian rate with the same masking structure as coding.
template <typename S>
Val<S> pyramid_rate_bits(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix,
                         const ProbModelConfig& cfg, Val<S> latent,
                         const std::vector<Val<S>>* ref_feats = nullptr) {
    check_config(latent.dim(0) == cfg.latent_channels, "pyramid_rate_bits: channel mismatch");
    int levels_n = effective_levels(latent.dim(1), latent.dim(2), cfg.num_levels);
    std::vector<Val<S>> levels(static_cast<size_t>(levels_n));
    levels[size_t(levels_n) - 1] = latent;
    for (int li = levels_n - 2; li >= 0; --li)
        levels[size_t(li)] = avg_pool2(levels[size_t(li) + 1], /*ceil_mode=*/true);

    Val<S> total = categorical_rate_bits(levels[0].value(), p(g, prefix + ".base.logits"), cfg.vmin);
    for (int li = 1; li < levels_n; ++li) {
        Val<S> cur = levels[size_t(li)];
        int h = cur.dim(1), w = cur.dim(2);
        GroupPlan plan = make_group_plan(h, w);
        Tensor<S> mask_t = Tensor<S>::zeros({1, h, w});
        Tensor<S> group_sel = Tensor<S>::zeros(cur.value().dims); // 1 on current group
        Val<S> prev_up = upsample_nearest2(levels[size_t(li) - 1], h, w);
        for (int gi = 0; gi < int(plan.groups.size()); ++gi) {
            group_sel.fill(S(0));
            for (auto& [y, x] : plan.groups[size_t(gi)])
                for (int c = 0; c < cur.dim(0); ++c) group_sel.at(c, y, x) = S(1);
            Val<S> mask = g.constant(mask_t);
            Val<S> coded_sel = g.constant([&] {
                Tensor<S> t = Tensor<S>::zeros(cur.value().dims);
                for (int c = 0; c < cur.dim(0); ++c)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) t.at(c, y, x) = mask_t.at(0, y, x);
                return t;
            }());
            Val<S> masked = mul(cur, coded_sel);
            std::optional<Val<S>> feats;
            if (cfg.feature_channels > 0) {
                check_config(ref_feats && size_t(li) < ref_feats->size(),
                             "pyramid_rate_bits: missing reference features");
                feats = (*ref_feats)[size_t(li)];
            }
            auto [mu, sigma] =
                conditional_params(g, p, prefix, cfg, prev_up, masked, mask, feats);
            // select the current group's elements: zero out everything else
            Val<S> sel = g.constant(group_sel);
            Val<S> bits = gaussian_rate_bits(mul(cur, sel), mul(mu, sel),
                                             add(mul(sigma, sel),
                                                 add_const(neg(sel), S(1))), // sigma 1 off-group
                                             cfg.vmin, cfg.vmax);
            // off-group elements contribute a constant -log2 P(0 | N(0,1)) each;
            // subtract that constant so `bits` is the group's true rate
            int64_t off = cur.value().numel() - int64_t(plan.groups[size_t(gi)].size()) * cur.dim(0);
            double p0 = std::erf(0.5 / std::sqrt(2.0));
            bits = add_const(bits, S(double(off) * std::log2(p0)));
            total = add(total, bits);
            for (auto& [y, x] : plan.groups[size_t(gi)]) mask_t.at(0, y, x) = S(1);
        }
    }
    return total;
}

} // namespace nnvc
