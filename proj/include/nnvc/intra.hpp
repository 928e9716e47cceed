#pragma once

#include "nnvc/blocks.hpp"
#include "nnvc/probability.hpp"

namespace nnvc {

// Intra-frame autoencoder: four stride-2 stages with DSA blocks in between,
// a mirrored transposed-conv decoder whose last DSA block hosts the OMPs,
// and the multi-resolution probability model on the quantized latent.

struct IntraConfig {
    int channels = 64;        // conv width
    int latent_channels = 32; // C_l
    int num_dsa = 3;          // DSA blocks per side
    DsaConfig dsa;            // channels forced to `channels`
    ProbModelConfig prob;     // latent_channels forced, no features

    static constexpr int kDownscale = 16; // four stride-2 stages

    void finalize() {
        dsa.channels = channels;
        prob.latent_channels = latent_channels;
        prob.feature_channels = 0;
        dsa.validate();
        check_config(num_dsa >= 1, "IntraConfig: need at least one DSA block");
    }

    // OMP block ids inside the decoder: 0..num_dsa-1 are the DSA blocks in
    // order, num_dsa addresses the final output conv (single layer 0).
    int last_dsa_block_id() const { return num_dsa - 1; }
    int final_conv_block_id() const { return num_dsa; }
};

// The paper's c1 placement: inside the last decoder DSA block, every output
// kernel of the initial conv, the first conv of ResBlock 0 and the second
// conv of ResBlocks 1 and 3.
inline std::vector<OmpAddress> default_omp_placement(const IntraConfig& cfg) {
    check_config(cfg.dsa.num_resblocks >= 4 && cfg.dsa.resblock_convs >= 2,
                 "default_omp_placement: needs >= 4 ResBlocks with >= 2 convs");
    int block = cfg.last_dsa_block_id();
    std::vector<int> layers = {0, cfg.dsa.resblock_layer(0, 0), cfg.dsa.resblock_layer(1, 1),
                               cfg.dsa.resblock_layer(3, 1)};
    std::vector<OmpAddress> out;
    for (int layer : layers)
        for (int k = 0; k < cfg.channels; ++k) out.push_back({block, layer, k});
    return out;
}

// Every conv layer of the last DSA block plus the decoder's final conv
// (strategy c2).
inline std::vector<OmpAddress> all_layers_omp_placement(const IntraConfig& cfg) {
    std::vector<OmpAddress> out;
    int block = cfg.last_dsa_block_id();
    for (int layer = 0; layer < cfg.dsa.conv_layer_count(); ++layer)
        for (int k = 0; k < cfg.channels; ++k) out.push_back({block, layer, k});
    for (int k = 0; k < 3; ++k) out.push_back({cfg.final_conv_block_id(), 0, k});
    return out;
}

template <typename S>
struct IntraModel {
    IntraConfig cfg;
    ParamStore<S> params;
    std::vector<OmpAddress> omp_placement;
};

template <typename S>
IntraModel<S> make_intra_model(IntraConfig cfg, uint32_t seed) {
    cfg.finalize();
    IntraModel<S> m;
    m.cfg = cfg;
    std::mt19937 rng(seed);
    int c = cfg.channels;
    init_conv(m.params, "enc.down0", c, 3, 5, rng);
    for (int i = 0; i < cfg.num_dsa; ++i) {
        init_dsa_block(m.params, "enc.dsa" + std::to_string(i), cfg.dsa, rng);
        init_conv(m.params, "enc.down" + std::to_string(i + 1),
                  i + 1 == cfg.num_dsa ? cfg.latent_channels : c, c, 5, rng);
    }
    init_conv4t(m.params, "dec.up0", cfg.latent_channels, c, 5, rng);
    for (int i = 0; i < cfg.num_dsa; ++i) {
        init_dsa_block(m.params, "dec.dsa" + std::to_string(i), cfg.dsa, rng);
        init_conv4t(m.params, "dec.up" + std::to_string(i + 1), c,
                    i + 1 == cfg.num_dsa ? 3 : c, 5, rng);
    }
    init_prob_model(m.params, "pm", cfg.prob, rng);
    m.omp_placement = default_omp_placement(cfg);
    return m;
}

// transposed-conv weights live as (IC, OC, KH, KW)
template <typename S>
void init_conv4t(ParamStore<S>& store, const std::string& prefix, int ic, int oc, int k,
                 std::mt19937& rng) {
    auto& w = store.create(prefix + ".w", {ic, oc, k, k});
    fill_normal(w.value, rng, std::sqrt(2.0 / (double(ic) * k * k)));
    store.create(prefix + ".b", {oc});
}

// ---------------------------------------------------------------- padding

// Symmetric reflection pad on the bottom/right to a multiple of `mult`.
template <typename S>
Tensor<S> pad_to_multiple(const Tensor<S>& x, int mult) {
    int H = x.dim(1), W = x.dim(2);
    int ph = (mult - H % mult) % mult, pw = (mult - W % mult) % mult;
    if (ph == 0 && pw == 0) return x;
    Tensor<S> out({x.dim(0), H + ph, W + pw});
    auto fold = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -1 - i;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    for (int c = 0; c < x.dim(0); ++c)
        for (int y = 0; y < H + ph; ++y)
            for (int xx = 0; xx < W + pw; ++xx)
                out.at(c, y, xx) = x.at(c, fold(y, H), fold(xx, W));
    return out;
}

template <typename S>
Tensor<S> crop(const Tensor<S>& x, int h, int w) {
    check_config(h <= x.dim(1) && w <= x.dim(2), "crop: target larger than input");
    Tensor<S> out({x.dim(0), h, w});
    for (int c = 0; c < x.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y, xx);
    return out;
}

// ------------------------------------------------------------------ forward

template <typename S>
Val<S> up5(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x) {
    return conv2d_transpose(x, p(g, prefix + ".w"), p(g, prefix + ".b"), 2, 2, 1);
}
template <typename S>
Val<S> down5(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x) {
    return conv2d(x, p(g, prefix + ".w"), p(g, prefix + ".b"), 2, 2);
}

// Encoder transform to the continuous (pre-quantization) latent.
template <typename S>
Val<S> intra_analysis(Graph<S>& g, ParamBinder<S>& p, const IntraConfig& cfg, Val<S> frame) {
    check_config(frame.rank() == 3 && frame.dim(0) == 3, "intra_analysis: (3,H,W) expected");
    check_config(frame.dim(1) % IntraConfig::kDownscale == 0 &&
                     frame.dim(2) % IntraConfig::kDownscale == 0,
                 "intra_analysis: frame must be padded to a multiple of 16");
    Val<S> h = leaky_relu(down5(g, p, "enc.down0", frame), S(0.2));
    for (int i = 0; i < cfg.num_dsa; ++i) {
        h = dsa_block(g, p, "enc.dsa" + std::to_string(i), h, cfg.dsa);
        h = down5(g, p, "enc.down" + std::to_string(i + 1), h);
        if (i + 1 < cfg.num_dsa) h = leaky_relu(h, S(0.2));
    }
    return h;
}

// Mirrored decoder transform; OMP scales (if any) act inside the last DSA
// block and on the final conv, post-convolution pre-activation.
template <typename S>
Val<S> intra_synthesis(Graph<S>& g, ParamBinder<S>& p, const IntraConfig& cfg, Val<S> latent,
                       const OmpBinding<S>* omps = nullptr) {
    Val<S> h = leaky_relu(up5(g, p, "dec.up0", latent), S(0.2));
    for (int i = 0; i < cfg.num_dsa; ++i) {
        const OmpLayerScales<S>* scales = omps ? omps->block(i) : nullptr;
        h = dsa_block(g, p, "dec.dsa" + std::to_string(i), h, cfg.dsa, scales);
        h = up5(g, p, "dec.up" + std::to_string(i + 1), h);
        if (i + 1 < cfg.num_dsa) {
            h = leaky_relu(h, S(0.2));
        } else if (omps) {
            if (const OmpLayerScales<S>* fin = omps->block(cfg.final_conv_block_id())) {
                auto it = fin->find(0);
                if (it != fin->end()) h = channel_scale(h, it->second);
            }
        }
    }
    return clamp(h, S(0), S(1));
}

// --------------------------------------------------------------- inference

// Deterministic encode: analysis transform, then uniform scalar quantization
// (round half away from zero) clamped to the symbol range.
template <typename S>
Tensor<S> intra_encode(IntraModel<S>& model, const Tensor<S>& frame) {
    check(frame.all_finite(), "intra_encode: non-finite input");
    Graph<S> g;
    ParamBinder<S> p(model.params);
    p.set_trainable(false);
    Val<S> y = intra_analysis(g, p, model.cfg, g.constant(frame));
    Tensor<S> latent = y.value();
    for (auto& v : latent.v)
        v = S(std::min<double>(std::max<double>(round_half_away(double(v)), model.cfg.prob.vmin),
                               model.cfg.prob.vmax));
    return latent;
}

// Deterministic decode of an integer latent; this exact path also produces
// the encoder-side reconstruction so both ends agree bit for bit.
template <typename S>
Tensor<S> intra_decode(IntraModel<S>& model, const Tensor<S>& latent,
                       const OmpSet* omps = nullptr) {
    Graph<S> g;
    ParamBinder<S> p(model.params);
    p.set_trainable(false);
    if (omps && !omps->placement.empty()) {
        OmpBinding<S> binding =
            bind_omp_scales<S>(g, *omps, model.cfg.dsa, model.cfg.last_dsa_block_id(),
                               model.cfg.final_conv_block_id(), 3);
        return intra_synthesis(g, p, model.cfg, g.constant(latent), &binding).value();
    }
    return intra_synthesis(g, p, model.cfg, g.constant(latent)).value();
}

} // namespace nnvc
