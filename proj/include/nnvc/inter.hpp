#pragma once

#include "nnvc/intra.hpp"

namespace nnvc {

// Bidirectional inter-frame codec: encoder-side feature pyramids aggregated
// into one latent; decoder-side motion features, coarse-to-fine motion
// estimation over reference-frame pyramids, resolution-adaptive motion
// scaling, bilinear warping, and the Combiner's learned linear combination.

struct InterConfig {
    int channels = 48;          // trunk width
    int latent_channels = 32;   // C_l
    int pyramid_channels = 16;  // per-scale feature width (encoder/decoder pyramids)
    int motion_channels = 32;   // motion estimator width
    int embed_dim = 16;         // resolution embedding size
    int entropy_channels = 8;   // entropy pyramid feature width
    int combiner_channels = 32; // Combiner ConvStack width
    ProbModelConfig prob;       // latent_channels + feature conditioning forced

    static constexpr int kDownscale = 16;
    static constexpr int kScales = 3; // feature pyramids at /1, /2, /4

    void finalize() {
        prob.latent_channels = latent_channels;
        prob.feature_channels = entropy_channels;
        check_config(channels >= 1 && pyramid_channels >= 1, "InterConfig: bad widths");
    }

    DsaConfig combiner_res_cfg() const {
        DsaConfig d;
        d.channels = combiner_channels;
        d.resblock_convs = 2;
        d.num_resblocks = 1;
        return d;
    }
};

struct CombinerScalars {
    float s_tmp = 1.f;
    float s_bwd = 0.f;
    float s_fwd = 0.f;
    float s_e = 1.f;

    std::array<float, 4> to_array() const { return {s_tmp, s_bwd, s_fwd, s_e}; }
    static CombinerScalars from_array(const std::array<float, 4>& a) {
        return {a[0], a[1], a[2], a[3]};
    }
};

template <typename S>
struct InterModel {
    InterConfig cfg;
    ParamStore<S> params;
};

template <typename S>
InterModel<S> make_inter_model(InterConfig cfg, uint32_t seed) {
    cfg.finalize();
    InterModel<S> m;
    m.cfg = cfg;
    std::mt19937 rng(seed);
    int f = cfg.pyramid_channels, c = cfg.channels;

    // encoder / decoder feature pyramids (each shared across its frames)
    for (const char* net : {"efp", "dfp"}) {
        init_conv(m.params, std::string(net) + ".c0", f, 3, 3, rng);
        init_conv(m.params, std::string(net) + ".c1", f, f, 3, rng);
        init_conv(m.params, std::string(net) + ".c2", f, f, 3, rng);
    }

    // feature encoder net: aggregate 3 frames' pyramids down to the latent
    init_conv(m.params, "fen.d0", c, 3 * f, 3, rng);
    init_conv(m.params, "fen.d1", c, c + 3 * f, 3, rng);
    init_conv(m.params, "fen.d2", c, c + 3 * f, 3, rng);
    init_conv(m.params, "fen.d3", c, c, 3, rng);
    init_conv(m.params, "fen.out", cfg.latent_channels, c, 3, rng);

    // feature decoder net: latent -> multi-scale motion features + residual
    init_conv(m.params, "fdn.in", c, cfg.latent_channels, 3, rng);
    for (int i = 0; i < 4; ++i) init_conv4t(m.params, "fdn.up" + std::to_string(i), c, c, 5, rng);
    for (int s = 0; s < InterConfig::kScales; ++s)
        init_conv(m.params, "fdn.m" + std::to_string(s), f, c, 3, rng);
    init_conv(m.params, "fdn.e", 3, c, 3, rng);

    // motion estimation, one refinement stage per scale (FlowNet-style)
    for (int s = 0; s < InterConfig::kScales; ++s) {
        std::string pre = "me.s" + std::to_string(s);
        init_conv(m.params, pre + ".c0", cfg.motion_channels, 3 * f + 4, 3, rng);
        init_conv(m.params, pre + ".c1", cfg.motion_channels, cfg.motion_channels, 3, rng);
        init_conv(m.params, pre + ".flow", 4, cfg.motion_channels, 3, rng);
        // start near zero flow
        m.params.at(pre + ".flow.w").value.fill(S(0));
    }

    // resolution embedding + motion scale head (neutral at init)
    init_dense(m.params, "re.fc0", cfg.embed_dim, 2, rng);
    init_dense(m.params, "re.fc1", cfg.embed_dim, cfg.embed_dim, rng);
    init_dense(m.params, "re.scale", 2, cfg.embed_dim, rng);
    m.params.at("re.scale.w").value.fill(S(0));
    m.params.at("re.scale.b").value.fill(S(1));

    // combiner
    int cc = cfg.combiner_channels;
    init_conv(m.params, "comb.c0", cc, 12, 3, rng);
    init_conv(m.params, "comb.c1", cc, cc, 3, rng);
    init_res_block(m.params, "comb.res0", cfg.combiner_res_cfg(), rng);
    init_res_block(m.params, "comb.res1", cfg.combiner_res_cfg(), rng);
    init_conv(m.params, "comb.out", 3, cc, 3, rng);
    auto& sc = m.params.create("comb.scalars", {4});
    sc.value[0] = S(1);
    sc.value[1] = S(0);
    sc.value[2] = S(0);
    sc.value[3] = S(1);

    // entropy feature pyramid: refs -> conditioning at latent-pyramid levels
    {
        int e = cfg.entropy_channels;
        int stages = std::max(cfg.prob.num_levels, 2) + 2;
        init_conv(m.params, "epn.c0", e, 6, 3, rng);
        for (int i = 1; i < stages; ++i)
            init_conv(m.params, "epn.c" + std::to_string(i), e, e, 3, rng);
    }

    init_prob_model(m.params, "pm", cfg.prob, rng);
    return m;
}

// ------------------------------------------------------------- components

template <typename S>
std::vector<Val<S>> feature_pyramid(Graph<S>& g, ParamBinder<S>& p, const std::string& net,
                                    Val<S> frame) {
    std::vector<Val<S>> feats;
    Val<S> h = leaky_relu(conv3(g, p, net + ".c0", frame), S(0.2));
    feats.push_back(h); // /1
    h = leaky_relu(conv2d(h, p(g, net + ".c1.w"), p(g, net + ".c1.b"), 2, 1), S(0.2));
    feats.push_back(h); // /2
    h = leaky_relu(conv2d(h, p(g, net + ".c2.w"), p(g, net + ".c2.b"), 2, 1), S(0.2));
    feats.push_back(h); // /4
    return feats;
}

// Deterministic embedding of the frame resolution; inputs are scaled to O(1).
template <typename S>
Val<S> embed_resolution(Graph<S>& g, ParamBinder<S>& p, int h, int w) {
    check_config(h >= 1 && w >= 1, "embed_resolution: bad dims");
    Tensor<S> in({2}, {S(h) / S(1000), S(w) / S(1000)});
    Val<S> x = g.constant(in);
    x = leaky_relu(dense(x, p(g, "re.fc0.w"), p(g, "re.fc0.b")), S(0.2));
    x = leaky_relu(dense(x, p(g, "re.fc1.w"), p(g, "re.fc1.b")), S(0.2));
    return x;
}

// Per-direction multiplicative motion scale derived from the embedding; the
// head is initialized to output exactly 1 (neutral).
template <typename S>
Val<S> motion_scale_head(Graph<S>& g, ParamBinder<S>& p, Val<S> embedding) {
    return dense(embedding, p(g, "re.scale.w"), p(g, "re.scale.b"));
}

template <typename S>
std::pair<Val<S>, Val<S>> scale_motion(Val<S> flow_fwd, Val<S> flow_bwd, Val<S> scales) {
    check_config(scales.value().numel() == 2, "scale_motion: two per-direction scales expected");
    Val<S> fwd = scale_by(flow_fwd, slice_vec(scales, 0, 1));
    Val<S> bwd = scale_by(flow_bwd, slice_vec(scales, 1, 1));
    return {fwd, bwd};
}

// Coarse-to-fine bidirectional flow from decoded motion features and the two
// reference pyramids. Returns full-resolution (2,H,W) forward and backward
// fields (forward maps ref_prev to the target, backward maps ref_next).
template <typename S>
std::pair<Val<S>, Val<S>> estimate_motion(Graph<S>& g, ParamBinder<S>& p,
                                          const std::vector<Val<S>>& motion_feats,
                                          const std::vector<Val<S>>& prev_feats,
                                          const std::vector<Val<S>>& next_feats) {
    check_config(motion_feats.size() == prev_feats.size() &&
                     motion_feats.size() == next_feats.size() && !motion_feats.empty(),
                 "estimate_motion: pyramid depth mismatch");
    int scales = int(motion_feats.size());
    Val<S> flow; // (4, h, w), fwd dx dy + bwd dx dy
    for (int s = scales - 1; s >= 0; --s) {
        int h = motion_feats[size_t(s)].dim(1), w = motion_feats[size_t(s)].dim(2);
        Val<S> up;
        if (s == scales - 1) {
            up = g.constant(Tensor<S>::zeros({4, h, w}));
        } else {
            up = mul_const(upsample_nearest2(flow, h, w), S(2)); // displacements double
        }
        std::string pre = "me.s" + std::to_string(s);
        Val<S> in = concat_channels<S>(
            {motion_feats[size_t(s)], prev_feats[size_t(s)], next_feats[size_t(s)], up});
        Val<S> hfeat = leaky_relu(conv3(g, p, pre + ".c0", in), S(0.2));
        hfeat = leaky_relu(conv3(g, p, pre + ".c1", hfeat), S(0.2));
        Val<S> delta = conv3(g, p, pre + ".flow", hfeat);
        flow = add(up, delta);
    }
    return {slice_channels(flow, 0, 2), slice_channels(flow, 2, 2)};
}

// x_tilde = ConvStack(concat(f_fwd, f_bwd, intra1, intra2));
// x_hat = clamp(s_tmp*x_tilde + s_bwd*f_bwd + s_fwd*f_fwd + s_e*e_t)
template <typename S>
struct CombineResult {
    Val<S> x_hat;
    Val<S> x_tilde; // pre-clamp ConvStack output
};

template <typename S>
CombineResult<S> combine(Graph<S>& g, ParamBinder<S>& p, const InterConfig& cfg, Val<S> f_fwd,
                         Val<S> f_bwd, Val<S> intra1, Val<S> intra2, Val<S> e_t, Val<S> scalars) {
    check_config(scalars.value().numel() == 4, "combine: four scalars expected");
    check_config(f_fwd.value().same_shape(f_bwd.value()) &&
                     f_fwd.value().same_shape(intra1.value()) &&
                     f_fwd.value().same_shape(intra2.value()) &&
                     f_fwd.value().same_shape(e_t.value()),
                 "combine: frame shape mismatch");
    Val<S> h = concat_channels<S>({f_fwd, f_bwd, intra1, intra2});
    h = leaky_relu(conv3(g, p, "comb.c0", h), S(0.2));
    h = leaky_relu(conv3(g, p, "comb.c1", h), S(0.2));
    h = res_block(g, p, "comb.res0", h, cfg.combiner_res_cfg());
    h = res_block(g, p, "comb.res1", h, cfg.combiner_res_cfg());
    Val<S> x_tilde = conv3(g, p, "comb.out", h);

    Val<S> acc = scale_by(x_tilde, slice_vec(scalars, 0, 1));
    acc = add(acc, scale_by(f_bwd, slice_vec(scalars, 1, 1)));
    acc = add(acc, scale_by(f_fwd, slice_vec(scalars, 2, 1)));
    acc = add(acc, scale_by(e_t, slice_vec(scalars, 3, 1)));
    return {clamp(acc, S(0), S(1)), x_tilde};
}

// Reference conditioning for the probability model: one feature map per
// latent-pyramid level (levels >= 1), derived only from reconstructions.
template <typename S>
std::vector<Val<S>> inter_context_features(Graph<S>& g, ParamBinder<S>& p, const InterConfig& cfg,
                                           Val<S> ref_prev, Val<S> ref_next) {
    int levels = effective_levels(ref_prev.dim(1) / InterConfig::kDownscale,
                                  ref_prev.dim(2) / InterConfig::kDownscale, cfg.prob.num_levels);
    std::vector<Val<S>> feats(static_cast<size_t>(levels));
    if (levels < 2) return feats; // only the i.i.d. level: no conditioning
    Val<S> h = concat_channels<S>({ref_prev, ref_next});
    std::vector<Val<S>> by_stage;
    // stage 3 sits at /16 (latent resolution) = top level; each deeper stage
    // matches the next lower pyramid level
    int stages = levels + 2;
    for (int i = 0; i < stages; ++i) {
        h = leaky_relu(conv2d(h, p(g, "epn.c" + std::to_string(i) + ".w"),
                              p(g, "epn.c" + std::to_string(i) + ".b"), 2, 1),
                       S(0.2));
        by_stage.push_back(h);
    }
    for (int li = 1; li < levels; ++li) feats[size_t(li)] = by_stage[size_t(3 + (levels - 1 - li))];
    return feats;
}

// --------------------------------------------------------------- transforms

template <typename S>
Val<S> inter_analysis(Graph<S>& g, ParamBinder<S>& p, const InterConfig& cfg, Val<S> x_t,
                      Val<S> ref_prev, Val<S> ref_next) {
    check_config(x_t.value().same_shape(ref_prev.value()) &&
                     x_t.value().same_shape(ref_next.value()),
                 "inter_analysis: dimension mismatch");
    check_config(x_t.dim(1) % InterConfig::kDownscale == 0 &&
                     x_t.dim(2) % InterConfig::kDownscale == 0,
                 "inter_analysis: frames must be padded to a multiple of 16");
    auto ft = feature_pyramid(g, p, "efp", x_t);
    auto fp = feature_pyramid(g, p, "efp", ref_prev);
    auto fn = feature_pyramid(g, p, "efp", ref_next);
    Val<S> h = conv2d(concat_channels<S>({ft[0], fp[0], fn[0]}), p(g, "fen.d0.w"),
                      p(g, "fen.d0.b"), 2, 1);
    h = leaky_relu(h, S(0.2));
    h = conv2d(concat_channels<S>({h, ft[1], fp[1], fn[1]}), p(g, "fen.d1.w"), p(g, "fen.d1.b"), 2,
               1);
    h = leaky_relu(h, S(0.2));
    h = conv2d(concat_channels<S>({h, ft[2], fp[2], fn[2]}), p(g, "fen.d2.w"), p(g, "fen.d2.b"), 2,
               1);
    h = leaky_relu(h, S(0.2));
    h = leaky_relu(conv2d(h, p(g, "fen.d3.w"), p(g, "fen.d3.b"), 2, 1), S(0.2));
    return conv3(g, p, "fen.out", h);
}

template <typename S>
struct InterDecodePieces {
    Val<S> x_hat;
    Val<S> x_tilde;
    Val<S> e_t;
    Val<S> flow_fwd; // after resolution-adaptive scaling
    Val<S> flow_bwd;
    Val<S> f_fwd;
    Val<S> f_bwd;
};

// Full decoder-side pipeline from a (de)quantized latent. `scalars` are the
// four Combiner scalars, `display_h/w` the true (unpadded) resolution driving
// the embedding. `motion_scaling` off forces the neutral scale 1.
template <typename S>
InterDecodePieces<S> inter_synthesis(Graph<S>& g, ParamBinder<S>& p, const InterConfig& cfg,
                                     Val<S> latent, Val<S> ref_prev, Val<S> ref_next,
                                     Val<S> intra1, Val<S> intra2, int display_h, int display_w,
                                     Val<S> scalars, bool motion_scaling = true) {
    // motion features + residual from the latent
    Val<S> h = leaky_relu(conv3(g, p, "fdn.in", latent), S(0.2));
    std::vector<Val<S>> motion_feats(InterConfig::kScales);
    for (int i = 0; i < 4; ++i) {
        h = leaky_relu(up5(g, p, "fdn.up" + std::to_string(i), h), S(0.2));
        int scale_index = 3 - i; // /8 after up0, /4 after up1, /2, /1
        if (scale_index < InterConfig::kScales)
            motion_feats[size_t(scale_index)] = conv3(g, p, "fdn.m" + std::to_string(scale_index), h);
    }
    Val<S> e_t = conv3(g, p, "fdn.e", h);

    auto prev_feats = feature_pyramid(g, p, "dfp", ref_prev);
    auto next_feats = feature_pyramid(g, p, "dfp", ref_next);
    auto [raw_fwd, raw_bwd] = estimate_motion(g, p, motion_feats, prev_feats, next_feats);

    Val<S> flow_fwd = raw_fwd, flow_bwd = raw_bwd;
    if (motion_scaling) {
        Val<S> emb = embed_resolution(g, p, display_h, display_w);
        Val<S> scales = motion_scale_head(g, p, emb);
        std::tie(flow_fwd, flow_bwd) = scale_motion(raw_fwd, raw_bwd, scales);
    }
    Val<S> f_fwd = bilinear_warp(ref_prev, flow_fwd);
    Val<S> f_bwd = bilinear_warp(ref_next, flow_bwd);

    auto comb = combine(g, p, cfg, f_fwd, f_bwd, intra1, intra2, e_t, scalars);
    return {comb.x_hat, comb.x_tilde, e_t, flow_fwd, flow_bwd, f_fwd, f_bwd};
}

// --------------------------------------------------------------- inference

template <typename S>
Tensor<S> inter_encode(InterModel<S>& model, const Tensor<S>& x_t, const Tensor<S>& ref_prev,
                       const Tensor<S>& ref_next) {
    check(x_t.all_finite(), "inter_encode: non-finite input");
    Graph<S> g;
    ParamBinder<S> p(model.params);
    p.set_trainable(false);
    Val<S> y = inter_analysis(g, p, model.cfg, g.constant(x_t), g.constant(ref_prev),
                              g.constant(ref_next));
    Tensor<S> latent = y.value();
    for (auto& v : latent.v)
        v = S(std::min<double>(std::max<double>(round_half_away(double(v)), model.cfg.prob.vmin),
                               model.cfg.prob.vmax));
    return latent;
}

template <typename S>
Tensor<S> inter_decode(InterModel<S>& model, const Tensor<S>& latent, const Tensor<S>& ref_prev,
                       const Tensor<S>& ref_next, const Tensor<S>& intra1, const Tensor<S>& intra2,
                       int display_h, int display_w, const CombinerScalars& scalars,
                       bool motion_scaling = true) {
    Graph<S> g;
    ParamBinder<S> p(model.params);
    p.set_trainable(false);
    Tensor<S> sc({4});
    auto arr = scalars.to_array();
    for (int i = 0; i < 4; ++i) sc[i] = S(arr[size_t(i)]);
    auto pieces = inter_synthesis(g, p, model.cfg, g.constant(latent), g.constant(ref_prev),
                                  g.constant(ref_next), g.constant(intra1), g.constant(intra2),
                                  display_h, display_w, g.constant(sc), motion_scaling);
    return pieces.x_hat.value();
}

} // namespace nnvc
