#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "nnvc/graph.hpp"

namespace nnvc {

// Named trainable tensors plus their Adam state. std::map keeps iteration
// order deterministic, which keeps seeded runs reproducible.
template <typename S>
struct ParamStore {
    struct Param {
        Tensor<S> value;
        Tensor<S> grad;
        Tensor<S> m, v; // Adam moments, allocated on first step
    };

    std::map<std::string, Param> params;

    Param& create(const std::string& name, std::vector<int> dims) {
        check_config(!params.count(name), "duplicate parameter: " + name);
        Param& p = params[name];
        p.value = Tensor<S>::zeros(std::move(dims));
        p.grad = Tensor<S>::zeros(p.value.dims);
        return p;
    }

    Param& at(const std::string& name) {
        auto it = params.find(name);
        check_config(it != params.end(), "unknown parameter: " + name);
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = params.find(name);
        check_config(it != params.end(), "unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params.count(name) != 0; }

    void zero_grad() {
        for (auto& [k, p] : params) p.grad.fill(S(0));
    }

    int64_t count_values() const {
        int64_t n = 0;
        for (const auto& [k, p] : params) n += p.value.numel();
        return n;
    }
};

// Binds store parameters into a graph as leaves; after backward(), collect()
// adds the leaf gradients back into the store.
template <typename S>
class ParamBinder {
public:
    explicit ParamBinder(ParamStore<S>& store) : store_(&store) {}

    Val<S> operator()(Graph<S>& g, const std::string& name) {
        auto& p = store_->at(name);
        Val<S> v = g.leaf(p.value, trainable_);
        if (trainable_) bound_.push_back({v.id, name});
        return v;
    }

    void set_trainable(bool t) { trainable_ = t; }

    void collect(Graph<S>& g) {
        for (auto& [id, name] : bound_) {
            const Tensor<S>& ng = g.node(id).grad;
            if (ng.numel() == 0) continue;
            Tensor<S>& pg = store_->at(name).grad;
            for (int64_t i = 0; i < ng.numel(); ++i) pg[i] += ng[i];
        }
    }

private:
    ParamStore<S>* store_;
    bool trainable_ = true;
    std::vector<std::pair<int, std::string>> bound_;
};

// First-order adaptive-moment gradient descent.
template <typename S>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;

    void step(ParamStore<S>& store) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, double(t));
        double c2 = 1.0 - std::pow(beta2, double(t));
        for (auto& [k, p] : store.params) {
            if (p.m.numel() == 0) {
                p.m = Tensor<S>::zeros(p.value.dims);
                p.v = Tensor<S>::zeros(p.value.dims);
            }
            for (int64_t i = 0; i < p.value.numel(); ++i) {
                double gr = double(p.grad[i]);
                double m = beta1 * double(p.m[i]) + (1.0 - beta1) * gr;
                double v = beta2 * double(p.v[i]) + (1.0 - beta2) * gr * gr;
                p.m[i] = S(m);
                p.v[i] = S(v);
                p.value[i] -= S(lr * (m / c1) / (std::sqrt(v / c2) + eps));
            }
        }
    }
};

// ------------------------------------------------------------- checkpoints
//
// Single documented checkpoint format: magic "NNCK", version byte, a JSON
// meta blob (model kind + architecture config), then named f32 arrays.

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32(const std::string& s, size_t& off) {
    check_parse(off + 4 <= s.size(), "checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[off + i])) << (8 * i);
    off += 4;
    return v;
}

} // namespace detail

template <typename S>
std::string serialize_params(const ParamStore<S>& store, const std::string& meta_json) {
    std::string out = "NNCK";
    out.push_back(char(1)); // version
    detail::put_u32(out, uint32_t(meta_json.size()));
    out += meta_json;
    detail::put_u32(out, uint32_t(store.params.size()));
    for (const auto& [name, p] : store.params) {
        detail::put_u32(out, uint32_t(name.size()));
        out += name;
        detail::put_u32(out, uint32_t(p.value.dims.size()));
        for (int d : p.value.dims) detail::put_u32(out, uint32_t(d));
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            float f = float(p.value[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

template <typename S>
std::string deserialize_params(const std::string& bytes, ParamStore<S>& store) {
    size_t off = 0;
    check_parse(bytes.size() >= 5 && bytes.compare(0, 4, "NNCK") == 0, "bad checkpoint magic");
    check_parse(uint8_t(bytes[4]) == 1, "unsupported checkpoint version");
    off = 5;
    uint32_t meta_len = detail::get_u32(bytes, off);
    check_parse(off + meta_len <= bytes.size(), "checkpoint truncated");
    std::string meta = bytes.substr(off, meta_len);
    off += meta_len;
    uint32_t count = detail::get_u32(bytes, off);
    store.params.clear();
    for (uint32_t k = 0; k < count; ++k) {
        uint32_t name_len = detail::get_u32(bytes, off);
        check_parse(off + name_len <= bytes.size(), "checkpoint truncated");
        std::string name = bytes.substr(off, name_len);
        off += name_len;
        uint32_t rank = detail::get_u32(bytes, off);
        check_parse(rank >= 1 && rank <= 8, "bad tensor rank");
        std::vector<int> dims;
        for (uint32_t i = 0; i < rank; ++i) dims.push_back(int(detail::get_u32(bytes, off)));
        auto& p = store.create(name, dims);
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            uint32_t bits = detail::get_u32(bytes, off);
            float f;
            std::memcpy(&f, &bits, 4);
            p.value[i] = S(f);
        }
    }
    return meta;
}

template <typename S>
void save_checkpoint(const ParamStore<S>& store, const std::string& meta_json,
                     const std::string& path) {
    std::string bytes = serialize_params(store, meta_json);
    std::ofstream f(path, std::ios::binary);
    check(bool(f), "cannot open for write: " + path);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    check(bool(f), "write failed: " + path);
}

template <typename S>
std::string load_checkpoint(ParamStore<S>& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(bool(f), "cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_params(bytes, store);
}

// Content identity of a serialized model, carried in the bitstream header.
template <typename S>
uint32_t checkpoint_hash(const ParamStore<S>& store, const std::string& meta_json) {
    std::string bytes = serialize_params(store, meta_json);
    return fnv1a(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
}

} // namespace nnvc
