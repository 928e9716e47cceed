#pragma once

#include "nnvc/inter.hpp"
#include "nnvc/msssim.hpp"

namespace nnvc {

// Inference-time content adaptation: gradient overfitting of the signaled
// quantities (latent tensors, decoder OMPs, Combiner scalars), always under a
// keep-best rule so no operation returns something worse than its
// initialization on its own objective.

enum class OmpStrategy {
    C1FewFirst, // few selected layers, first intra frame, reused for the video
    C2AllEvery, // all layers of the last DSA block + final conv, per frame
    C3None,
};

inline OmpStrategy omp_strategy_from_string(const std::string& s) {
    if (s == "c1") return OmpStrategy::C1FewFirst;
    if (s == "c2") return OmpStrategy::C2AllEvery;
    if (s == "c3") return OmpStrategy::C3None;
    throw ConfigError("unknown omp strategy: " + s);
}

struct OverfitConfig {
    int steps = 100;
    double lr = 1e-2;
    double lambda_rd = 0.1;
};

struct GateDecision {
    bool included = false;
    double loss_with = 0;
    double loss_without = 0;
};

// Adam over a single flat value vector (latent copy, OMP values, scalars).
template <typename S>
struct FlatAdam {
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<double> m, v;

    explicit FlatAdam(double lr_, size_t n) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

    void step(Tensor<S>& values, const Tensor<S>& grad) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, double(t));
        double c2 = 1.0 - std::pow(beta2, double(t));
        for (int64_t i = 0; i < values.numel(); ++i) {
            double g = double(grad[i]);
            m[size_t(i)] = beta1 * m[size_t(i)] + (1 - beta1) * g;
            v[size_t(i)] = beta2 * v[size_t(i)] + (1 - beta2) * g * g;
            values[i] -= S(lr * (m[size_t(i)] / c1) / (std::sqrt(v[size_t(i)] / c2) + eps));
        }
    }
};

// --------------------------------------------------------- latent overfitting

// Optimizes a continuous copy of the latent against the RD loss, re-quantizing
// per evaluation. Keep-best on the true objective (deterministic decode +
// eval rate estimate), so the result never ranks worse than the initial
// latent. Aborts to the best-so-far on a non-finite loss.
template <typename S>
Tensor<S> overfit_latent(IntraModel<S>& model, const Tensor<S>& latent0,
                         const Tensor<S>& target_padded, int orig_h, int orig_w,
                         const OverfitConfig& cfg) {
    if (cfg.steps <= 0) return latent0;
    const int scales = max_msssim_scales(orig_h, orig_w);
    const double px = double(orig_h) * orig_w;

    auto quantize_candidate = [&](const Tensor<S>& z) {
        Tensor<S> q = z;
        for (auto& v : q.v)
            v = S(std::min<double>(
                std::max<double>(round_half_away(double(v)), model.cfg.prob.vmin),
                model.cfg.prob.vmax));
        return q;
    };
    auto true_loss = [&](const Tensor<S>& q) {
        Tensor<S> rec = crop(intra_decode(model, q), orig_h, orig_w);
        double d = -double(ms_ssim_value(rec, crop(target_padded, orig_h, orig_w), scales));
        double r = estimate_latent_bits(model.params, "pm", model.cfg.prob, q) / px;
        return d + cfg.lambda_rd * r;
    };

    Tensor<S> z = latent0;
    Tensor<S> best = quantize_candidate(latent0);
    double best_loss = true_loss(best);

    FlatAdam<S> opt(cfg.lr, size_t(z.numel()));
    for (int step = 0; step < cfg.steps; ++step) {
        Graph<S> g;
        ParamBinder<S> p(model.params);
        p.set_trainable(false);
        Val<S> zv = g.leaf(z, true);
        Val<S> q = clamp(round_ste(zv), S(model.cfg.prob.vmin), S(model.cfg.prob.vmax));
        Val<S> rec = crop_spatial(intra_synthesis(g, p, model.cfg, q), orig_h, orig_w);
        Val<S> target = crop_spatial(g.constant(target_padded), orig_h, orig_w);
        Val<S> dist = neg(ms_ssim(rec, target, scales));
        Val<S> rate = mul_const(pyramid_rate_bits(g, p, "pm", model.cfg.prob, q),
                                S(cfg.lambda_rd / px));
        Val<S> loss = add(dist, rate);
        if (!std::isfinite(double(loss.value()[0]))) break;
        g.backward(loss);
        if (zv.grad().numel() == 0) break;
        opt.step(z, zv.grad());

        Tensor<S> cand = quantize_candidate(z);
        double cand_loss = true_loss(cand);
        if (std::isfinite(cand_loss) && cand_loss < best_loss) {
            best_loss = cand_loss;
            best = cand;
        }
    }
    return best;
}

// ----------------------------------------------------------- OMP overfitting

// Optimizes the OMP values (decoder weights frozen) to minimize distortion of
// the decoded first-frame latent against the first frame. Returns the raw
// (unquantized) values; quantization and gating come after.
template <typename S>
OmpSet overfit_omps(IntraModel<S>& model, const Tensor<S>& first_frame_padded,
                    const Tensor<S>& its_latent, int orig_h, int orig_w, const OverfitConfig& cfg,
                    const std::vector<OmpAddress>& placement) {
    OmpSet omps = OmpSet::ones(placement);
    if (cfg.steps <= 0 || placement.empty()) return omps;
    const int scales = max_msssim_scales(orig_h, orig_w);

    auto distortion = [&](const OmpSet& o) {
        Tensor<S> rec = crop(intra_decode(model, its_latent, &o), orig_h, orig_w);
        return -double(
            ms_ssim_value(rec, crop(first_frame_padded, orig_h, orig_w), scales));
    };

    Tensor<S> values({int(placement.size())});
    for (int64_t i = 0; i < values.numel(); ++i) values[i] = S(1);
    OmpSet best = omps;
    double best_loss = distortion(omps);

    FlatAdam<S> opt(cfg.lr, size_t(values.numel()));
    for (int step = 0; step < cfg.steps; ++step) {
        OmpSet cur = omps;
        for (size_t i = 0; i < cur.values.size(); ++i) cur.values[i] = float(values[int64_t(i)]);

        Graph<S> g;
        ParamBinder<S> p(model.params);
        p.set_trainable(false);
        OmpBinding<S> binding =
            bind_omp_scales<S>(g, cur, model.cfg.dsa, model.cfg.last_dsa_block_id(),
                               model.cfg.final_conv_block_id(), 3, /*trainable=*/true);
        Val<S> rec =
            crop_spatial(intra_synthesis(g, p, model.cfg, g.constant(its_latent), &binding),
                         orig_h, orig_w);
        Val<S> target = crop_spatial(g.constant(first_frame_padded), orig_h, orig_w);
        Val<S> loss = neg(ms_ssim(rec, target, scales));
        if (!std::isfinite(double(loss.value()[0]))) break;
        g.backward(loss);

        Tensor<S> grad = Tensor<S>::zeros(values.dims);
        for (const auto& slot : binding.slots)
            if (slot.leaf.grad().numel() > 0)
                grad[int64_t(slot.value_index)] = slot.leaf.grad()[slot.kernel];
        opt.step(values, grad);

        OmpSet cand = omps;
        for (size_t i = 0; i < cand.values.size(); ++i) cand.values[i] = float(values[int64_t(i)]);
        double cand_loss = distortion(cand);
        if (std::isfinite(cand_loss) && cand_loss < best_loss) {
            best_loss = cand_loss;
            best = cand;
        }
    }
    return best;
}

// ------------------------------------------------------------- quantization

// Uniform 8-bit quantizer over [min(values), max(values)]. Degenerate ranges
// reconstruct exactly.
inline void quantize_omps(OmpSet& omps) {
    if (omps.values.empty()) {
        omps.quant_step = 0.f;
        return;
    }
    float lo = omps.values[0], hi = omps.values[0];
    for (float v : omps.values) {
        check(std::isfinite(v), "quantize_omps: non-finite value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    omps.quant_step = (hi - lo) / float(omps.quant_levels - 1);
    omps.quant_offset = lo;
}

// codes for transmission; reconstruction applies the same f32 arithmetic the
// decoder will use, so both sides see identical values
inline std::vector<uint8_t> omp_codes(const OmpSet& omps) {
    std::vector<uint8_t> codes;
    codes.reserve(omps.values.size());
    for (float v : omps.values) {
        long code = 0;
        if (omps.quant_step > 0)
            code = std::lround(double(v - omps.quant_offset) / double(omps.quant_step));
        codes.push_back(uint8_t(std::min(std::max(code, 0l), long(omps.quant_levels - 1))));
    }
    return codes;
}

inline std::vector<float> reconstruct_omp_values(const std::vector<uint8_t>& codes,
                                                 float quant_step, float quant_offset) {
    std::vector<float> out;
    out.reserve(codes.size());
    for (uint8_t c : codes) out.push_back(quant_offset + float(c) * quant_step);
    return out;
}

// --------------------------------------------------------------------- gate

// Video-level RD gate: include the quantized OMPs only when the overall loss
// over the video's intra frames, with the OMP side-channel bits counted in
// the rate, strictly improves.
template <typename S>
GateDecision gate_omps(IntraModel<S>& model, const std::vector<Tensor<S>>& latents,
                       const std::vector<Tensor<S>>& frames_padded, int orig_h, int orig_w,
                       const OmpSet& omps_quantized, double omp_side_bits, double lambda_rd) {
    check(latents.size() == frames_padded.size() && !latents.empty(),
          "gate_omps: latents/frames mismatch");
    const int scales = max_msssim_scales(orig_h, orig_w);
    const double px = double(orig_h) * orig_w * double(latents.size());

    double dist_with = 0, dist_without = 0, latent_bits = 0;
    for (size_t i = 0; i < latents.size(); ++i) {
        Tensor<S> target = crop(frames_padded[i], orig_h, orig_w);
        Tensor<S> rec_plain = crop(intra_decode(model, latents[i]), orig_h, orig_w);
        Tensor<S> rec_omp = crop(intra_decode(model, latents[i], &omps_quantized), orig_h, orig_w);
        dist_without += -double(ms_ssim_value(rec_plain, target, scales));
        dist_with += -double(ms_ssim_value(rec_omp, target, scales));
        latent_bits += estimate_latent_bits(model.params, "pm", model.cfg.prob, latents[i]);
    }
    double n = double(latents.size());
    GateDecision d;
    d.loss_without = dist_without / n + lambda_rd * (latent_bits / px);
    d.loss_with = dist_with / n + lambda_rd * ((latent_bits + omp_side_bits) / px);
    d.included = d.loss_with < d.loss_without;
    return d;
}

// ------------------------------------------------- Combiner scalar overfitting

// Distortion-only optimization of the four Combiner scalars for one inter
// frame. The decode pieces (x_tilde, predictions, residual) are fixed by the
// latent, so they are computed once and the per-step graph is tiny. Keep-best
// is evaluated on quantized candidates against the quantized trained
// defaults, which is exactly what the decoder will apply.
template <typename S>
CombinerScalars overfit_combiner_scalars(InterModel<S>& model, const Tensor<S>& latent,
                                         const Tensor<S>& ref_prev, const Tensor<S>& ref_next,
                                         const Tensor<S>& intra1, const Tensor<S>& intra2,
                                         const Tensor<S>& target_padded, int orig_h, int orig_w,
                                         bool motion_scaling, const OverfitConfig& cfg) {
    CombinerScalars defaults;
    {
        const auto& sc = model.params.at("comb.scalars").value;
        defaults = {float(sc[0]), float(sc[1]), float(sc[2]), float(sc[3])};
    }
    if (cfg.steps <= 0) return defaults;
    const int scales = max_msssim_scales(orig_h, orig_w);

    // fixed decode pieces
    Tensor<S> x_tilde, e_t, f_fwd, f_bwd;
    {
        Graph<S> g;
        ParamBinder<S> p(model.params);
        p.set_trainable(false);
        auto pieces = inter_synthesis(g, p, model.cfg, g.constant(latent), g.constant(ref_prev),
                                      g.constant(ref_next), g.constant(intra1),
                                      g.constant(intra2), orig_h, orig_w,
                                      p(g, "comb.scalars"), motion_scaling);
        x_tilde = pieces.x_tilde.value();
        e_t = pieces.e_t.value();
        f_fwd = pieces.f_fwd.value();
        f_bwd = pieces.f_bwd.value();
    }
    Tensor<S> target = crop(target_padded, orig_h, orig_w);

    auto quantize_scalars = [](const CombinerScalars& s) {
        auto a = s.to_array();
        for (auto& v : a) v = scalar_from_q16(scalar_to_q16(v));
        return CombinerScalars::from_array(a);
    };
    auto recombine = [&](const CombinerScalars& s) {
        Graph<S> g;
        Tensor<S> sc({4}, {S(s.s_tmp), S(s.s_bwd), S(s.s_fwd), S(s.s_e)});
        Val<S> scv = g.constant(sc);
        Val<S> acc = scale_by(g.constant(x_tilde), slice_vec(scv, 0, 1));
        acc = add(acc, scale_by(g.constant(f_bwd), slice_vec(scv, 1, 1)));
        acc = add(acc, scale_by(g.constant(f_fwd), slice_vec(scv, 2, 1)));
        acc = add(acc, scale_by(g.constant(e_t), slice_vec(scv, 3, 1)));
        Val<S> rec = crop_spatial(clamp(acc, S(0), S(1)), orig_h, orig_w);
        return -double(ms_ssim(rec, g.constant(target), scales).value()[0]);
    };

    CombinerScalars best = quantize_scalars(defaults);
    double best_loss = recombine(best);

    Tensor<S> values({4}, {S(defaults.s_tmp), S(defaults.s_bwd), S(defaults.s_fwd),
                           S(defaults.s_e)});
    FlatAdam<S> opt(cfg.lr, 4);
    for (int step = 0; step < cfg.steps; ++step) {
        Graph<S> g;
        Val<S> scv = g.leaf(values, true);
        Val<S> acc = scale_by(g.constant(x_tilde), slice_vec(scv, 0, 1));
        acc = add(acc, scale_by(g.constant(f_bwd), slice_vec(scv, 1, 1)));
        acc = add(acc, scale_by(g.constant(f_fwd), slice_vec(scv, 2, 1)));
        acc = add(acc, scale_by(g.constant(e_t), slice_vec(scv, 3, 1)));
        Val<S> rec = crop_spatial(clamp(acc, S(0), S(1)), orig_h, orig_w);
        Val<S> loss = neg(ms_ssim(rec, g.constant(target), scales));
        if (!std::isfinite(double(loss.value()[0]))) break;
        g.backward(loss);
        if (scv.grad().numel() == 0) break;
        opt.step(values, scv.grad());

        CombinerScalars cand = quantize_scalars(
            {float(values[0]), float(values[1]), float(values[2]), float(values[3])});
        double cand_loss = recombine(cand);
        if (std::isfinite(cand_loss) && cand_loss < best_loss) {
            best_loss = cand_loss;
            best = cand;
        }
    }
    return best;
}

} // namespace nnvc
