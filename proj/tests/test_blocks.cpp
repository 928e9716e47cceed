#include <catch2/catch_amalgamated.hpp>

#include "nnvc/blocks.hpp"
#include "test_util.hpp"

using namespace nnvc;
using nnvc_test::max_fd_store_err;
using nnvc_test::random_tensor;
using nnvc_test::random_tensor_f;

namespace {
std::mt19937 rng(4242);

DsaConfig tiny_cfg(int channels = 8) {
    DsaConfig cfg;
    cfg.channels = channels;
    cfg.resblock_convs = 2;
    cfg.num_resblocks = 4;
    return cfg;
}
} // namespace

TEST_CASE("res_block with zero conv weights is the identity") {
    DsaConfig cfg = tiny_cfg();
    ParamStore<float> store;
    init_res_block(store, "rb", cfg, rng);
    for (auto& [k, p] : store.params) p.value.fill(0.f);

    GraphF g;
    ParamBinder<float> binder(store);
    auto x = g.constant(random_tensor_f({8, 6, 6}, rng));
    auto y = res_block(g, binder, "rb", x, cfg);
    REQUIRE(y.value().dims == x.value().dims);
    for (int64_t i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("res_block preserves shape") {
    DsaConfig cfg = tiny_cfg(64);
    ParamStore<float> store;
    init_res_block(store, "rb", cfg, rng);
    GraphF g;
    ParamBinder<float> binder(store);
    auto x = g.constant(random_tensor_f({64, 16, 16}, rng));
    auto y = res_block(g, binder, "rb", x, cfg);
    CHECK(y.value().dims == std::vector<int>({64, 16, 16}));
}

TEST_CASE("res_block gradients match finite differences") {
    DsaConfig cfg = tiny_cfg();
    ParamStore<double> store;
    init_res_block(store, "rb", cfg, rng);
    auto x = random_tensor({8, 5, 5}, rng);
    CHECK(max_fd_store_err(store,
                           [&](GraphD& g, ParamBinder<double>& p) {
                               auto in = g.leaf(x, true);
                               auto y = res_block(g, p, "rb", in, cfg);
                               return sum(mul(y, y));
                           },
                           rng) < 1e-4);
    // gradient w.r.t. the input as well
    nnvc_test::max_fd_rel_err(
        {x},
        [&](GraphD& g, std::vector<Val<double>>& v) {
            ParamBinder<double> p(store);
            p.set_trainable(false);
            return sum(res_block(g, p, "rb", v[0], cfg));
        },
        rng);
}

TEST_CASE("split attention: equal logits average the splits") {
    DsaConfig cfg = tiny_cfg(4);
    ParamStore<float> store;
    init_split_attention(store, "att", cfg, rng);
    // zero the dense layers -> both split weights are exactly 0.5
    store.at("att.fc1.w").value.fill(0.f);
    store.at("att.fc1.b").value.fill(0.f);
    store.at("att.fc2.w").value.fill(0.f);
    store.at("att.fc2.b").value.fill(0.f);
    // projection passes the fused splits through untouched on channels 0..1
    store.at("att.proj.w").value.fill(0.f);
    store.at("att.proj.b").value.fill(0.f);
    store.at("att.proj.w").value.at4(0, 0, 0, 0) = 1.f;
    store.at("att.proj.w").value.at4(1, 1, 0, 0) = 1.f;

    GraphF g;
    ParamBinder<float> binder(store);
    auto xt = random_tensor_f({4, 3, 3}, rng);
    auto y = split_attention(g, binder, "att", g.constant(xt), cfg);
    REQUIRE(y.value().dims == xt.dims);
    for (int yy = 0; yy < 3; ++yy)
        for (int xx = 0; xx < 3; ++xx) {
            CHECK(y.value().at(0, yy, xx) ==
                  Catch::Approx(0.5f * (xt.at(0, yy, xx) + xt.at(2, yy, xx))).margin(1e-6));
            CHECK(y.value().at(1, yy, xx) ==
                  Catch::Approx(0.5f * (xt.at(1, yy, xx) + xt.at(3, yy, xx))).margin(1e-6));
        }
}

TEST_CASE("split attention preserves shape and rejects indivisible channels") {
    DsaConfig cfg = tiny_cfg(8);
    ParamStore<float> store;
    init_split_attention(store, "att", cfg, rng);
    GraphF g;
    ParamBinder<float> binder(store);
    auto y = split_attention(g, binder, "att", g.constant(random_tensor_f({8, 4, 4}, rng)), cfg);
    CHECK(y.value().dims == std::vector<int>({8, 4, 4}));

    DsaConfig bad = tiny_cfg(6);
    bad.attention_splits = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("split attention matches a hand-computed r=2 toy") {
    DsaConfig cfg = tiny_cfg(2);
    ParamStore<double> store;
    init_split_attention(store, "att", cfg, rng);
    // c=2, r=2 -> split_c=1, bottleneck=8
    store.at("att.fc1.w").value.fill(0.25);
    store.at("att.fc1.b").value.fill(0.0);
    auto& fc2 = store.at("att.fc2.w").value; // (2, 8)
    for (int j = 0; j < 8; ++j) {
        fc2[0 * 8 + j] = 0.1;
        fc2[1 * 8 + j] = 0.05;
    }
    store.at("att.fc2.b").value.fill(0.0);
    auto& proj = store.at("att.proj.w").value; // (2, 1, 1, 1)
    proj.at4(0, 0, 0, 0) = 2.0;
    proj.at4(1, 0, 0, 0) = -1.0;
    store.at("att.proj.b").value[0] = 0.5;
    store.at("att.proj.b").value[1] = 0.25;

    Tensor<double> x({2, 1, 1}, {3.0, 1.0});
    GraphD g;
    ParamBinder<double> binder(store);
    auto y = split_attention(g, binder, "att", g.constant(x), cfg);

    // hand evaluation of the radix softmax path
    double s = 3.0 + 1.0;             // pooled sum of splits
    double z = 0.25 * s;              // all 8 bottleneck units, LReLU(1.0) = 1.0
    double logit0 = 8 * 0.1 * z;      // 0.8
    double logit1 = 8 * 0.05 * z;     // 0.4
    double e0 = std::exp(logit0), e1 = std::exp(logit1);
    double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    double v = a0 * 3.0 + a1 * 1.0;
    CHECK(y.value()[0] == Catch::Approx(2.0 * v + 0.5).epsilon(1e-12));
    CHECK(y.value()[1] == Catch::Approx(-1.0 * v + 0.25).epsilon(1e-12));
}

TEST_CASE("split attention gradients match finite differences") {
    DsaConfig cfg = tiny_cfg(4);
    ParamStore<double> store;
    init_split_attention(store, "att", cfg, rng);
    auto x = random_tensor({4, 4, 4}, rng);
    CHECK(max_fd_store_err(store,
                           [&](GraphD& g, ParamBinder<double>& p) {
                               auto in = g.leaf(x, true);
                               auto y = split_attention(g, p, "att", in, cfg);
                               return sum(mul(y, y));
                           },
                           rng) < 1e-4);
}

TEST_CASE("dsa block preserves shape at paper-like width") {
    DsaConfig cfg = tiny_cfg(64);
    ParamStore<float> store;
    init_dsa_block(store, "dsa", cfg, rng);
    GraphF g;
    ParamBinder<float> binder(store);
    auto y = dsa_block(g, binder, "dsa", g.constant(random_tensor_f({64, 32, 32}, rng)), cfg);
    CHECK(y.value().dims == std::vector<int>({64, 32, 32}));
}

TEST_CASE("dsa block: all-ones OMPs are neutral") {
    DsaConfig cfg = tiny_cfg(8);
    ParamStore<float> store;
    init_dsa_block(store, "dsa", cfg, rng);
    auto xt = random_tensor_f({8, 6, 6}, rng);

    GraphF g;
    ParamBinder<float> binder(store);
    auto base = dsa_block(g, binder, "dsa", g.constant(xt), cfg);

    std::vector<OmpAddress> addrs;
    for (int kern = 0; kern < 8; ++kern) {
        addrs.push_back({0, 0, kern});
        addrs.push_back({0, cfg.resblock_layer(0, 0), kern});
        addrs.push_back({0, cfg.resblock_layer(1, 1), kern});
        addrs.push_back({0, cfg.resblock_layer(3, 1), kern});
    }
    OmpSet omps = OmpSet::ones(addrs);
    GraphF g2;
    ParamBinder<float> binder2(store);
    auto binding = bind_omp_scales(g2, omps, cfg, 0, 1, 3);
    auto with = dsa_block(g2, binder2, "dsa", g2.constant(xt), cfg, binding.block(0));
    for (int64_t i = 0; i < with.value().numel(); ++i)
        CHECK(std::abs(with.value()[i] - base.value()[i]) <= 1e-6f);
}

TEST_CASE("one OMP of 2.0 doubles the addressed map, upstream untouched") {
    DsaConfig cfg = tiny_cfg(8);
    ParamStore<float> store;
    init_dsa_block(store, "dsa", cfg, rng);
    auto xt = random_tensor_f({8, 6, 6}, rng);
    int target_layer = cfg.resblock_layer(cfg.num_resblocks - 1, cfg.resblock_convs - 1);

    GraphF g;
    ParamBinder<float> binder(store);
    DsaTrace<float> base_trace;
    dsa_block(g, binder, "dsa", g.constant(xt), cfg,
              static_cast<const OmpLayerScales<float>*>(nullptr), &base_trace);

    OmpSet omps = OmpSet::ones({{0, target_layer, 3}});
    omps.values[0] = 2.0f;
    GraphF g2;
    ParamBinder<float> binder2(store);
    auto binding = bind_omp_scales(g2, omps, cfg, 0, 1, 3);
    DsaTrace<float> omp_trace;
    dsa_block(g2, binder2, "dsa", g2.constant(xt), cfg, binding.block(0), &omp_trace);

    REQUIRE(base_trace.size() == omp_trace.size());
    for (size_t i = 0; i < base_trace.size(); ++i) {
        REQUIRE(base_trace[i].first == omp_trace[i].first);
        int layer = base_trace[i].first;
        const auto& a = base_trace[i].second.value();
        const auto& b = omp_trace[i].second.value();
        if (layer < target_layer) {
            for (int64_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
        } else if (layer == target_layer) {
            int64_t HW = int64_t(a.dim(1)) * a.dim(2);
            for (int64_t j = 0; j < HW; ++j)
                CHECK(b[3 * HW + j] == Catch::Approx(2.f * a[3 * HW + j]).margin(1e-6));
            for (int64_t j = 0; j < HW; ++j) CHECK(b[0 * HW + j] == a[0 * HW + j]);
        }
    }
}

TEST_CASE("unresolvable OMP addresses raise") {
    DsaConfig cfg = tiny_cfg(8);
    GraphF g;
    OmpSet bad_layer = OmpSet::ones({{0, cfg.conv_layer_count(), 0}});
    CHECK_THROWS_AS(bind_omp_scales(g, bad_layer, cfg, 0, 1, 3), ConfigError);
    OmpSet bad_kernel = OmpSet::ones({{0, 0, 8}});
    CHECK_THROWS_AS(bind_omp_scales(g, bad_kernel, cfg, 0, 1, 3), ConfigError);
    OmpSet bad_block = OmpSet::ones({{7, 0, 0}});
    CHECK_THROWS_AS(bind_omp_scales(g, bad_block, cfg, 0, 1, 3), ConfigError);
}

TEST_CASE("dsa block gradients, including OMP values, match finite differences") {
    DsaConfig cfg = tiny_cfg(4);
    cfg.num_resblocks = 2;
    ParamStore<double> store;
    init_dsa_block(store, "dsa", cfg, rng);
    auto x = random_tensor({4, 4, 4}, rng);

    CHECK(max_fd_store_err(store,
                           [&](GraphD& g, ParamBinder<double>& p) {
                               auto in = g.leaf(x, true);
                               auto y = dsa_block(g, p, "dsa", in, cfg);
                               return sum(mul(y, y));
                           },
                           rng) < 1e-4);

    // OMP value gradient via its slot leaf
    OmpSet omps = OmpSet::ones({{0, 0, 1}, {0, cfg.resblock_layer(1, 1), 2}});
    omps.values = {1.1f, 0.9f};
    auto eval = [&](const std::vector<float>& vals) {
        OmpSet o = omps;
        o.values = vals;
        GraphD g;
        ParamBinder<double> p(store);
        p.set_trainable(false);
        auto binding = bind_omp_scales<double>(g, o, cfg, 0, 1, 3);
        auto y = dsa_block(g, p, "dsa", g.constant(x), cfg, binding.block(0));
        return sum(mul(y, y)).value()[0];
    };
    GraphD g;
    ParamBinder<double> p(store);
    p.set_trainable(false);
    auto binding = bind_omp_scales<double>(g, omps, cfg, 0, 1, 3, /*trainable=*/true);
    auto y = dsa_block(g, p, "dsa", g.constant(x), cfg, binding.block(0));
    g.backward(sum(mul(y, y)));
    for (size_t i = 0; i < binding.slots.size(); ++i) {
        auto& slot = binding.slots[i];
        double an = slot.leaf.grad()[slot.kernel];
        std::vector<float> vp = omps.values, vm = omps.values;
        vp[slot.value_index] += 1e-4f;
        vm[slot.value_index] -= 1e-4f;
        double fd = (eval(vp) - eval(vm)) / (2e-4);
        CHECK(std::abs(an - fd) / std::max({1e-6, std::abs(an), std::abs(fd)}) < 1e-3);
    }
}

TEST_CASE("apply_omp scales exactly one channel") {
    auto m = random_tensor_f({5, 3, 3}, rng);
    auto half = apply_omp(m, 3, 0.5f);
    auto zero = apply_omp(m, 2, 0.0f);
    auto one = apply_omp(m, 1, 1.0f);
    for (int c = 0; c < 5; ++c)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                CHECK(half.at(c, y, x) == (c == 3 ? 0.5f * m.at(c, y, x) : m.at(c, y, x)));
                CHECK(zero.at(c, y, x) == (c == 2 ? 0.0f : m.at(c, y, x)));
                CHECK(one.at(c, y, x) == m.at(c, y, x));
            }
    CHECK_THROWS_AS(apply_omp(m, 5, 1.f), ConfigError);
}
