#pragma once

#include <map>
#include <random>

#include "nnvc/ops.hpp"
#include "nnvc/params.hpp"

namespace nnvc {

struct DsaConfig {
    int channels = 64;
    int resblock_convs = 2; // 2 or 3
    int num_resblocks = 4;
    int attention_groups = 1; // k
    int attention_splits = 2; // r

    void validate() const {
        check_config(channels >= 1, "DsaConfig: channels >= 1");
        check_config(resblock_convs == 2 || resblock_convs == 3,
                     "DsaConfig: resblock_convs must be 2 or 3");
        check_config(num_resblocks >= 1, "DsaConfig: need at least one ResBlock");
        check_config(attention_groups >= 1 && attention_splits >= 2,
                     "DsaConfig: k >= 1, r >= 2");
        check_config(channels % (attention_groups * attention_splits) == 0,
                     "DsaConfig: channels must divide by k*r");
    }

    int bottleneck() const { return std::max(channels / 4, 8); }

    // conv layer ids inside one DSA block:
    //   0                          initial conv
    //   1 + i*resblock_convs + j   ResBlock i, conv j
    //   1 + R                      attention projection conv
    //   2 + R                      final (fuse) conv
    // with R = num_resblocks * resblock_convs
    int resblock_layer(int block, int conv) const { return 1 + block * resblock_convs + conv; }
    int attention_proj_layer() const { return 1 + num_resblocks * resblock_convs; }
    int final_layer() const { return 2 + num_resblocks * resblock_convs; }
    int conv_layer_count() const { return final_layer() + 1; }
};

// Overfittable multiplicative parameters: one scalar per output kernel of an
// addressed conv layer, multiplied onto that kernel's map post-convolution,
// pre-activation.
struct OmpAddress {
    int block_id = 0;
    int layer_id = 0;
    int kernel_index = 0;

    bool operator==(const OmpAddress&) const = default;
};

struct OmpSet {
    std::vector<OmpAddress> placement;
    std::vector<float> values; // initialized to exactly 1.0
    float quant_step = 0.f;
    float quant_offset = 0.f;
    int quant_levels = 256;
    bool included = false;

    static OmpSet ones(std::vector<OmpAddress> addrs) {
        OmpSet s;
        s.placement = std::move(addrs);
        s.values.assign(s.placement.size(), 1.0f);
        return s;
    }
};

// map (layer_id -> per-kernel scale vector) for one block
template <typename S>
using OmpLayerScales = std::map<int, Val<S>>;

// Scales one output kernel of a feature map, other channels untouched.
template <typename S>
Tensor<S> apply_omp(const Tensor<S>& map, int kernel_index, S value) {
    check_config(map.rank() == 3, "apply_omp: rank-3 map expected");
    check_config(kernel_index >= 0 && kernel_index < map.dim(0), "apply_omp: kernel index out of range");
    Tensor<S> out = map;
    int64_t HW = int64_t(map.dim(1)) * map.dim(2);
    for (int64_t i = 0; i < HW; ++i) out[kernel_index * HW + i] *= value;
    return out;
}

namespace detail {

template <typename S>
Val<S> maybe_omp(Val<S> x, const OmpLayerScales<S>* omps, int layer_id) {
    if (!omps) return x;
    auto it = omps->find(layer_id);
    if (it == omps->end()) return x;
    return channel_scale(x, it->second);
}

} // namespace detail

// ------------------------------------------------------------ initialization

template <typename S>
void init_conv(ParamStore<S>& store, const std::string& prefix, int oc, int ic, int k,
               std::mt19937& rng) {
    auto& w = store.create(prefix + ".w", {oc, ic, k, k});
    fill_normal(w.value, rng, std::sqrt(2.0 / (double(ic) * k * k)));
    store.create(prefix + ".b", {oc});
}

template <typename S>
void init_dense(ParamStore<S>& store, const std::string& prefix, int out, int in,
                std::mt19937& rng) {
    auto& w = store.create(prefix + ".w", {out, in});
    fill_normal(w.value, rng, std::sqrt(2.0 / double(in)));
    store.create(prefix + ".b", {out});
}

template <typename S>
Val<S> conv3(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x) {
    return conv2d(x, p(g, prefix + ".w"), p(g, prefix + ".b"), 1, 1);
}

// --------------------------------------------------------------------- blocks

template <typename S>
void init_res_block(ParamStore<S>& store, const std::string& prefix, const DsaConfig& cfg,
                    std::mt19937& rng) {
    for (int j = 0; j < cfg.resblock_convs; ++j)
        init_conv(store, prefix + ".conv" + std::to_string(j), cfg.channels, cfg.channels, 3, rng);
}

// y = x + F(x); F is the conv stack with Leaky ReLU between convs.
template <typename S>
Val<S> res_block(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x,
                 const DsaConfig& cfg, const OmpLayerScales<S>* omps = nullptr,
                 int first_layer_id = -1, std::vector<std::pair<int, Val<S>>>* trace = nullptr) {
    check_config(x.rank() == 3 && x.dim(0) == cfg.channels, "res_block: channel mismatch");
    Val<S> h = x;
    for (int j = 0; j < cfg.resblock_convs; ++j) {
        h = conv3(g, p, prefix + ".conv" + std::to_string(j), h);
        if (first_layer_id >= 0) h = detail::maybe_omp(h, omps, first_layer_id + j);
        if (trace) trace->push_back({first_layer_id + j, h});
        if (j + 1 < cfg.resblock_convs) h = leaky_relu(h, S(0.2));
    }
    return add(x, h);
}

template <typename S>
void init_split_attention(ParamStore<S>& store, const std::string& prefix, const DsaConfig& cfg,
                          std::mt19937& rng) {
    int k = cfg.attention_groups, r = cfg.attention_splits;
    int split_c = cfg.channels / (k * r);
    init_dense(store, prefix + ".fc1", cfg.bottleneck(), split_c, rng);
    init_dense(store, prefix + ".fc2", r * split_c, cfg.bottleneck(), rng);
    init_conv(store, prefix + ".proj", cfg.channels, cfg.channels / r, 1, rng);
}

// Split attention core (ResNeSt style): the channels form k cardinal groups
// of r splits each; per cardinal group, a squeeze (global pool of the split
// sum) drives two dense layers whose logits pass through a radix softmax over
// the r splits, and the weighted split sum is kept. A 1x1 projection restores
// the block width. Dense weights are shared across cardinal groups.
template <typename S>
Val<S> split_attention(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x,
                       const DsaConfig& cfg, const OmpLayerScales<S>* omps = nullptr,
                       int proj_layer_id = -1) {
    cfg.validate();
    check_config(x.rank() == 3 && x.dim(0) == cfg.channels, "split_attention: channel mismatch");
    int k = cfg.attention_groups, r = cfg.attention_splits;
    int split_c = cfg.channels / (k * r);

    std::vector<Val<S>> fused;
    for (int gi = 0; gi < k; ++gi) {
        std::vector<Val<S>> splits;
        for (int ri = 0; ri < r; ++ri)
            splits.push_back(slice_channels(x, (gi * r + ri) * split_c, split_c));
        Val<S> acc = splits[0];
        for (int ri = 1; ri < r; ++ri) acc = add(acc, splits[size_t(ri)]);
        Val<S> pooled = global_avg_pool(acc);
        Val<S> z = leaky_relu(dense(pooled, p(g, prefix + ".fc1.w"), p(g, prefix + ".fc1.b")), S(0.2));
        Val<S> logits = dense(z, p(g, prefix + ".fc2.w"), p(g, prefix + ".fc2.b"));
        Val<S> attn = radix_softmax(logits, r); // [split][channel]
        Val<S> out = channel_scale(splits[0], slice_vec(attn, 0, split_c));
        for (int ri = 1; ri < r; ++ri)
            out = add(out, channel_scale(splits[size_t(ri)], slice_vec(attn, ri * split_c, split_c)));
        fused.push_back(out);
    }
    Val<S> v = fused.size() == 1 ? fused[0] : concat_channels(fused);
    Val<S> y = conv2d(v, p(g, prefix + ".proj.w"), p(g, prefix + ".proj.b"), 1, 0);
    return detail::maybe_omp(y, omps, proj_layer_id);
}

template <typename S>
void init_dsa_block(ParamStore<S>& store, const std::string& prefix, const DsaConfig& cfg,
                    std::mt19937& rng) {
    cfg.validate();
    init_conv(store, prefix + ".init", cfg.channels, cfg.channels, 3, rng);
    for (int i = 0; i < cfg.num_resblocks; ++i)
        init_res_block(store, prefix + ".res" + std::to_string(i), cfg, rng);
    init_split_attention(store, prefix + ".att", cfg, rng);
    init_conv(store, prefix + ".final", cfg.channels, (cfg.num_resblocks + 2) * cfg.channels, 1,
              rng);
}

// records post-OMP conv outputs keyed by layer id
template <typename S>
using DsaTrace = std::vector<std::pair<int, Val<S>>>;

// Dense Split Attention block: initial conv, a chain of ResBlocks, the split
// attention core, then the attention output concatenated with the dense skips
// (initial conv output and every ResBlock output) and fused by a 1x1 conv
// back to cfg.channels.
template <typename S>
Val<S> dsa_block(Graph<S>& g, ParamBinder<S>& p, const std::string& prefix, Val<S> x,
                 const DsaConfig& cfg, const OmpLayerScales<S>* omps = nullptr,
                 DsaTrace<S>* trace = nullptr) {
    cfg.validate();
    check_config(x.rank() == 3 && x.dim(0) == cfg.channels, "dsa_block: channel mismatch");
    if (omps)
        for (const auto& [layer, scales] : *omps)
            check_config(layer >= 0 && layer < cfg.conv_layer_count(),
                         "dsa_block: OMP layer id not resolvable");

    Val<S> h = conv3(g, p, prefix + ".init", x);
    h = detail::maybe_omp(h, omps, 0);
    if (trace) trace->push_back({0, h});
    Val<S> a0 = leaky_relu(h, S(0.2));

    std::vector<Val<S>> skips;
    skips.push_back(a0);
    Val<S> cur = a0;
    for (int i = 0; i < cfg.num_resblocks; ++i) {
        cur = res_block(g, p, prefix + ".res" + std::to_string(i), cur, cfg, omps,
                        cfg.resblock_layer(i, 0), trace);
        skips.push_back(cur);
    }
    Val<S> att = split_attention(g, p, prefix + ".att", cur, cfg, omps, cfg.attention_proj_layer());
    if (trace) trace->push_back({cfg.attention_proj_layer(), att});

    std::vector<Val<S>> cat;
    cat.push_back(att);
    for (auto& s : skips) cat.push_back(s);
    Val<S> fused = concat_channels(cat);
    Val<S> y = conv2d(fused, p(g, prefix + ".final.w"), p(g, prefix + ".final.b"), 1, 0);
    y = detail::maybe_omp(y, omps, cfg.final_layer());
    if (trace) trace->push_back({cfg.final_layer(), y});
    return y;
}

// Graph binding of an OmpSet: per-block scale vectors (all-ones base with
// the addressed kernels overwritten) plus, for overfitting, the leaf/kernel
// slot backing each OmpSet value.
template <typename S>
struct OmpBinding {
    std::map<int, OmpLayerScales<S>> per_block; // block_id -> layer_id -> scales
    struct Slot {
        size_t value_index;
        Val<S> leaf;
        int kernel;
    };
    std::vector<Slot> slots;

    const OmpLayerScales<S>* block(int block_id) const {
        auto it = per_block.find(block_id);
        return it == per_block.end() ? nullptr : &it->second;
    }
};

// Throws on unresolvable addresses. `final_block_id` addresses the single
// conv layer after the last DSA block (layer id 0 there).
template <typename S>
OmpBinding<S> bind_omp_scales(Graph<S>& g, const OmpSet& omps, const DsaConfig& cfg,
                              int dsa_block_id, int final_block_id, int final_block_channels,
                              bool trainable = false) {
    check_config(omps.values.size() == omps.placement.size(), "OmpSet: values/placement mismatch");
    std::map<std::pair<int, int>, Tensor<S>> scales;
    std::map<std::pair<int, int>, std::vector<std::pair<size_t, int>>> hits;
    for (size_t i = 0; i < omps.placement.size(); ++i) {
        const OmpAddress& a = omps.placement[i];
        int channels;
        if (a.block_id == dsa_block_id) {
            check_config(a.layer_id >= 0 && a.layer_id < cfg.conv_layer_count(),
                         "OMP address: layer not resolvable");
            channels = cfg.channels;
        } else if (a.block_id == final_block_id) {
            check_config(a.layer_id == 0, "OMP address: final block has a single layer");
            channels = final_block_channels;
        } else {
            throw ConfigError("OMP address: block not resolvable");
        }
        check_config(a.kernel_index >= 0 && a.kernel_index < channels,
                     "OMP address: kernel index out of range");
        auto key = std::make_pair(a.block_id, a.layer_id);
        if (!scales.count(key)) scales[key] = Tensor<S>::full({channels}, S(1));
        scales[key][a.kernel_index] = S(omps.values[i]);
        hits[key].push_back({i, a.kernel_index});
    }
    OmpBinding<S> out;
    for (auto& [key, tensor] : scales) {
        Val<S> v = g.leaf(tensor, trainable);
        out.per_block[key.first][key.second] = v;
        for (auto& [value_index, kernel] : hits[key])
            out.slots.push_back({value_index, v, kernel});
    }
    return out;
}

} // namespace nnvc
