#pragma once

#include <cmath>

#include "nnvc/graph.hpp"

// Differentiable tensor ops. Every op appends one node to the graph; the
// backward closure scatters the node's gradient into the parents it needs.

namespace nnvc {

template <typename S>
inline bool wants_grad(const Graph<S>& g, int id) {
    return g.node(id).needs_grad;
}

// standard normal pdf / cdf, shared by the rate ops and the plain PMF builder
template <typename S>
inline S normal_pdf(S x) {
    return S(std::exp(-0.5 * double(x) * double(x)) * 0.3989422804014327);
}
template <typename S>
inline S normal_cdf(S x) {
    return S(0.5 * std::erfc(-double(x) * 0.7071067811865476));
}

// ---------------------------------------------------------------- elementwise

template <typename S>
Val<S> add(Val<S> a, Val<S> b) {
    Graph<S>& g = *a.g;
    check_config(a.value().same_shape(b.value()), "add: shape mismatch");
    Tensor<S> out = a.value();
    const Tensor<S>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    int ia = a.id, ib = b.id;
    return g.make(std::move(out), wants_grad(g, ia) || wants_grad(g, ib),
                  [ia, ib](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      if (wants_grad(gr, ia)) {
                          Tensor<S>& da = gr.grad_of(ia);
                          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
                      }
                      if (wants_grad(gr, ib)) {
                          Tensor<S>& db = gr.grad_of(ib);
                          for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
                      }
                  });
}

template <typename S>
Val<S> sub(Val<S> a, Val<S> b) {
    Graph<S>& g = *a.g;
    check_config(a.value().same_shape(b.value()), "sub: shape mismatch");
    Tensor<S> out = a.value();
    const Tensor<S>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    int ia = a.id, ib = b.id;
    return g.make(std::move(out), wants_grad(g, ia) || wants_grad(g, ib),
                  [ia, ib](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      if (wants_grad(gr, ia)) {
                          Tensor<S>& da = gr.grad_of(ia);
                          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
                      }
                      if (wants_grad(gr, ib)) {
                          Tensor<S>& db = gr.grad_of(ib);
                          for (int64_t i = 0; i < dy.numel(); ++i) db[i] -= dy[i];
                      }
                  });
}

template <typename S>
Val<S> mul(Val<S> a, Val<S> b) {
    Graph<S>& g = *a.g;
    check_config(a.value().same_shape(b.value()), "mul: shape mismatch");
    Tensor<S> out = a.value();
    const Tensor<S>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    int ia = a.id, ib = b.id;
    return g.make(std::move(out), wants_grad(g, ia) || wants_grad(g, ib),
                  [ia, ib](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      const Tensor<S>& av = gr.node(ia).value;
                      const Tensor<S>& bv2 = gr.node(ib).value;
                      if (wants_grad(gr, ia)) {
                          Tensor<S>& da = gr.grad_of(ia);
                          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv2[i];
                      }
                      if (wants_grad(gr, ib)) {
                          Tensor<S>& db = gr.grad_of(ib);
                          for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * av[i];
                      }
                  });
}

template <typename S>
Val<S> div(Val<S> a, Val<S> b) {
    Graph<S>& g = *a.g;
    check_config(a.value().same_shape(b.value()), "div: shape mismatch");
    Tensor<S> out = a.value();
    const Tensor<S>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
    int ia = a.id, ib = b.id;
    return g.make(std::move(out), wants_grad(g, ia) || wants_grad(g, ib),
                  [ia, ib](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      const Tensor<S>& y = gr.node(self).value;
                      const Tensor<S>& bv2 = gr.node(ib).value;
                      if (wants_grad(gr, ia)) {
                          Tensor<S>& da = gr.grad_of(ia);
                          for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] / bv2[i];
                      }
                      if (wants_grad(gr, ib)) {
                          Tensor<S>& db = gr.grad_of(ib);
                          for (int64_t i = 0; i < dy.numel(); ++i) db[i] -= dy[i] * y[i] / bv2[i];
                      }
                  });
}

template <typename S>
Val<S> add_const(Val<S> a, S c) {
    Graph<S>& g = *a.g;
    Tensor<S> out = a.value();
    for (auto& x : out.v) x += c;
    int ia = a.id;
    return g.make(std::move(out), wants_grad(g, ia), [ia](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& da = gr.grad_of(ia);
        for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
    });
}

template <typename S>
Val<S> mul_const(Val<S> a, S c) {
    Graph<S>& g = *a.g;
    Tensor<S> out = a.value();
    for (auto& x : out.v) x *= c;
    int ia = a.id;
    return g.make(std::move(out), wants_grad(g, ia), [ia, c](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& da = gr.grad_of(ia);
        for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * c;
    });
}

template <typename S>
Val<S> neg(Val<S> a) {
    return mul_const(a, S(-1));
}

// y = s * x for a scalar node s (rank-1, size 1)
template <typename S>
Val<S> scale_by(Val<S> x, Val<S> s) {
    Graph<S>& g = *x.g;
    check_config(s.value().numel() == 1, "scale_by: scalar expected");
    S sv = s.value()[0];
    Tensor<S> out = x.value();
    for (auto& v : out.v) v *= sv;
    int ix = x.id, is = s.id;
    return g.make(std::move(out), wants_grad(g, ix) || wants_grad(g, is),
                  [ix, is](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      const Tensor<S>& xv = gr.node(ix).value;
                      S sv2 = gr.node(is).value[0];
                      if (wants_grad(gr, ix)) {
                          Tensor<S>& dx = gr.grad_of(ix);
                          for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * sv2;
                      }
                      if (wants_grad(gr, is)) {
                          S acc = 0;
                          for (int64_t i = 0; i < dy.numel(); ++i) acc += dy[i] * xv[i];
                          gr.grad_of(is)[0] += acc;
                      }
                  });
}

// per-channel affine helpers for (C,H,W) maps; b/s are rank-1 of size C
template <typename S>
Val<S> channel_bias(Val<S> x, Val<S> b) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3 && b.value().numel() == x.dim(0), "channel_bias: bad shapes");
    Tensor<S> out = x.value();
    int C = out.dim(0), HW = out.dim(1) * out.dim(2);
    for (int c = 0; c < C; ++c) {
        S bc = b.value()[c];
        for (int i = 0; i < HW; ++i) out[int64_t(c) * HW + i] += bc;
    }
    int ix = x.id, ib = b.id;
    return g.make(std::move(out), wants_grad(g, ix) || wants_grad(g, ib),
                  [ix, ib, C, HW](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      if (wants_grad(gr, ix)) {
                          Tensor<S>& dx = gr.grad_of(ix);
                          for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
                      }
                      if (wants_grad(gr, ib)) {
                          Tensor<S>& db = gr.grad_of(ib);
                          for (int c = 0; c < C; ++c) {
                              S acc = 0;
                              for (int i = 0; i < HW; ++i) acc += dy[int64_t(c) * HW + i];
                              db[c] += acc;
                          }
                      }
                  });
}

template <typename S>
Val<S> channel_scale(Val<S> x, Val<S> s) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3 && s.value().numel() == x.dim(0), "channel_scale: bad shapes");
    Tensor<S> out = x.value();
    int C = out.dim(0), HW = out.dim(1) * out.dim(2);
    for (int c = 0; c < C; ++c) {
        S sc = s.value()[c];
        for (int i = 0; i < HW; ++i) out[int64_t(c) * HW + i] *= sc;
    }
    int ix = x.id, is = s.id;
    return g.make(std::move(out), wants_grad(g, ix) || wants_grad(g, is),
                  [ix, is, C, HW](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      const Tensor<S>& xv = gr.node(ix).value;
                      const Tensor<S>& sv = gr.node(is).value;
                      if (wants_grad(gr, ix)) {
                          Tensor<S>& dx = gr.grad_of(ix);
                          for (int c = 0; c < C; ++c)
                              for (int i = 0; i < HW; ++i)
                                  dx[int64_t(c) * HW + i] += dy[int64_t(c) * HW + i] * sv[c];
                      }
                      if (wants_grad(gr, is)) {
                          Tensor<S>& ds = gr.grad_of(is);
                          for (int c = 0; c < C; ++c) {
                              S acc = 0;
                              for (int i = 0; i < HW; ++i)
                                  acc += dy[int64_t(c) * HW + i] * xv[int64_t(c) * HW + i];
                              ds[c] += acc;
                          }
                      }
                  });
}

// ---------------------------------------------------------------- activations

template <typename S>
Val<S> leaky_relu(Val<S> x, S slope = S(0.2)) {
    Graph<S>& g = *x.g;
    Tensor<S> out = x.value();
    for (auto& v : out.v) v = v >= S(0) ? v : v * slope;
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, slope](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv = gr.node(ix).value;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < dy.numel(); ++i)
            dx[i] += xv[i] >= S(0) ? dy[i] : dy[i] * slope;
    });
}

template <typename S>
Val<S> softplus(Val<S> x) {
    Graph<S>& g = *x.g;
    Tensor<S> out = x.value();
    for (auto& v : out.v) {
        double d = double(v);
        v = S(d > 30 ? d : std::log1p(std::exp(d)));
    }
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv = gr.node(ix).value;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < dy.numel(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-double(xv[i])));
            dx[i] += dy[i] * S(sig);
        }
    });
}

// clamp with pass-through gradient inside [lo, hi]
template <typename S>
Val<S> clamp(Val<S> x, S lo, S hi) {
    Graph<S>& g = *x.g;
    Tensor<S> out = x.value();
    for (auto& v : out.v) v = std::min(std::max(v, lo), hi);
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, lo, hi](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv = gr.node(ix).value;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < dy.numel(); ++i)
            if (xv[i] >= lo && xv[i] <= hi) dx[i] += dy[i];
    });
}

template <typename S>
Val<S> clamp_min(Val<S> x, S lo) {
    Graph<S>& g = *x.g;
    Tensor<S> out = x.value();
    for (auto& v : out.v) v = std::max(v, lo);
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, lo](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv = gr.node(ix).value;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < dy.numel(); ++i)
            if (xv[i] >= lo) dx[i] += dy[i];
    });
}

// round half away from zero; straight-through gradient
template <typename S>
Val<S> round_ste(Val<S> x) {
    Graph<S>& g = *x.g;
    Tensor<S> out = x.value();
    for (auto& v : out.v) v = round_half_away(v);
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
}

// -------------------------------------------------------------- convolutions

// x: (IC,H,W), w: (OC,IC,KH,KW), b: (OC). Zero padding.
template <typename S>
Val<S> conv2d(Val<S> x, Val<S> w, Val<S> b, int stride, int pad) {
    Graph<S>& g = *x.g;
    const Tensor<S>& xv = x.value();
    const Tensor<S>& wv = w.value();
    check_config(xv.rank() == 3 && wv.rank() == 4, "conv2d: bad ranks");
    int IC = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int OC = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    check_config(wv.dim(1) == IC, "conv2d: channel mismatch");
    check_config(b.value().numel() == OC, "conv2d: bias size mismatch");
    int OH = (H + 2 * pad - KH) / stride + 1;
    int OW = (W + 2 * pad - KW) / stride + 1;
    check_config(OH >= 1 && OW >= 1, "conv2d: output collapses");

    Tensor<S> out({OC, OH, OW});
    for (int oc = 0; oc < OC; ++oc) {
        S bias = b.value()[oc];
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                S acc = bias;
                int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                for (int ic = 0; ic < IC; ++ic)
                    for (int ky = 0; ky < KH; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        const S* xrow = &xv.v[(size_t(ic) * H + iy) * W];
                        const S* wrow = &wv.v[((size_t(oc) * IC + ic) * KH + ky) * KW];
                        for (int kx = 0; kx < KW; ++kx) {
                            int ixp = ix0 + kx;
                            if (ixp < 0 || ixp >= W) continue;
                            acc += wrow[kx] * xrow[ixp];
                        }
                    }
                out.at(oc, oy, ox) = acc;
            }
    }
    int ix = x.id, iw = w.id, ib = b.id;
    bool ng = wants_grad(g, ix) || wants_grad(g, iw) || wants_grad(g, ib);
    return g.make(std::move(out), ng, [=](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv2 = gr.node(ix).value;
        const Tensor<S>& wv2 = gr.node(iw).value;
        bool gx = wants_grad(gr, ix), gw = wants_grad(gr, iw), gb = wants_grad(gr, ib);
        Tensor<S>* dx = gx ? &gr.grad_of(ix) : nullptr;
        Tensor<S>* dw = gw ? &gr.grad_of(iw) : nullptr;
        Tensor<S>* db = gb ? &gr.grad_of(ib) : nullptr;
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    S go = dy.at(oc, oy, ox);
                    if (go == S(0)) continue;
                    if (gb) (*db)[oc] += go;
                    int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                    for (int ic = 0; ic < IC; ++ic)
                        for (int ky = 0; ky < KH; ++ky) {
                            int iy = iy0 + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < KW; ++kx) {
                                int ixp = ix0 + kx;
                                if (ixp < 0 || ixp >= W) continue;
                                if (gx) dx->at(ic, iy, ixp) += go * wv2.at4(oc, ic, ky, kx);
                                if (gw) dw->at4(oc, ic, ky, kx) += go * xv2.at(ic, iy, ixp);
                            }
                        }
                }
    });
}

// Transposed conv ("UpConv"). x: (IC,H,W), w: (IC,OC,KH,KW), b: (OC).
// out = (H-1)*stride - 2*pad + KH + out_extra
template <typename S>
Val<S> conv2d_transpose(Val<S> x, Val<S> w, Val<S> b, int stride, int pad, int out_extra) {
    Graph<S>& g = *x.g;
    const Tensor<S>& xv = x.value();
    const Tensor<S>& wv = w.value();
    check_config(xv.rank() == 3 && wv.rank() == 4, "conv2d_transpose: bad ranks");
    int IC = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    check_config(wv.dim(0) == IC, "conv2d_transpose: channel mismatch");
    int OC = wv.dim(1), KH = wv.dim(2), KW = wv.dim(3);
    check_config(b.value().numel() == OC, "conv2d_transpose: bias size mismatch");
    int OH = (H - 1) * stride - 2 * pad + KH + out_extra;
    int OW = (W - 1) * stride - 2 * pad + KW + out_extra;
    check_config(OH >= 1 && OW >= 1, "conv2d_transpose: output collapses");

    Tensor<S> out({OC, OH, OW});
    for (int oc = 0; oc < OC; ++oc) {
        S bias = b.value()[oc];
        for (int64_t i = 0; i < int64_t(OH) * OW; ++i) out[int64_t(oc) * OH * OW + i] = bias;
    }
    for (int ic = 0; ic < IC; ++ic)
        for (int iy = 0; iy < H; ++iy)
            for (int ixp = 0; ixp < W; ++ixp) {
                S xin = xv.at(ic, iy, ixp);
                if (xin == S(0)) continue;
                int oy0 = iy * stride - pad, ox0 = ixp * stride - pad;
                for (int oc = 0; oc < OC; ++oc)
                    for (int ky = 0; ky < KH; ++ky) {
                        int oy = oy0 + ky;
                        if (oy < 0 || oy >= OH) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            int ox = ox0 + kx;
                            if (ox < 0 || ox >= OW) continue;
                            out.at(oc, oy, ox) += wv.at4(ic, oc, ky, kx) * xin;
                        }
                    }
            }
    int ix = x.id, iw = w.id, ib = b.id;
    bool ng = wants_grad(g, ix) || wants_grad(g, iw) || wants_grad(g, ib);
    return g.make(std::move(out), ng, [=](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv2 = gr.node(ix).value;
        const Tensor<S>& wv2 = gr.node(iw).value;
        bool gx = wants_grad(gr, ix), gw = wants_grad(gr, iw), gb = wants_grad(gr, ib);
        Tensor<S>* dx = gx ? &gr.grad_of(ix) : nullptr;
        Tensor<S>* dw = gw ? &gr.grad_of(iw) : nullptr;
        Tensor<S>* db = gb ? &gr.grad_of(ib) : nullptr;
        if (gb)
            for (int oc = 0; oc < OC; ++oc) {
                S acc = 0;
                for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += dy[int64_t(oc) * OH * OW + i];
                (*db)[oc] += acc;
            }
        if (gx || gw)
            for (int ic = 0; ic < IC; ++ic)
                for (int iy = 0; iy < H; ++iy)
                    for (int ixp = 0; ixp < W; ++ixp) {
                        int oy0 = iy * stride - pad, ox0 = ixp * stride - pad;
                        S xin = xv2.at(ic, iy, ixp);
                        S accx = 0;
                        for (int oc = 0; oc < OC; ++oc)
                            for (int ky = 0; ky < KH; ++ky) {
                                int oy = oy0 + ky;
                                if (oy < 0 || oy >= OH) continue;
                                for (int kx = 0; kx < KW; ++kx) {
                                    int ox = ox0 + kx;
                                    if (ox < 0 || ox >= OW) continue;
                                    S go = dy.at(oc, oy, ox);
                                    if (gx) accx += wv2.at4(ic, oc, ky, kx) * go;
                                    if (gw) dw->at4(ic, oc, ky, kx) += xin * go;
                                }
                            }
                        if (gx) dx->at(ic, iy, ixp) += accx;
                    }
    });
}

// ------------------------------------------------------------- shape movers

template <typename S>
Val<S> concat_channels(const std::vector<Val<S>>& parts) {
    check_config(!parts.empty(), "concat_channels: empty");
    Graph<S>& g = *parts[0].g;
    int H = parts[0].dim(1), W = parts[0].dim(2);
    int C = 0;
    bool ng = false;
    for (const auto& p : parts) {
        check_config(p.rank() == 3 && p.dim(1) == H && p.dim(2) == W, "concat_channels: spatial mismatch");
        C += p.dim(0);
        ng = ng || wants_grad(g, p.id);
    }
    Tensor<S> out({C, H, W});
    int64_t off = 0;
    std::vector<int> ids;
    std::vector<int> chans;
    for (const auto& p : parts) {
        const Tensor<S>& pv = p.value();
        std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + off);
        off += pv.numel();
        ids.push_back(p.id);
        chans.push_back(p.dim(0));
    }
    return g.make(std::move(out), ng, [ids, chans, H, W](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        int64_t off2 = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            int64_t n = int64_t(chans[k]) * H * W;
            if (wants_grad(gr, ids[k])) {
                Tensor<S>& dp = gr.grad_of(ids[k]);
                for (int64_t i = 0; i < n; ++i) dp[i] += dy[off2 + i];
            }
            off2 += n;
        }
    });
}

template <typename S>
Val<S> slice_channels(Val<S> x, int from, int count) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3 && from >= 0 && from + count <= x.dim(0), "slice_channels: out of range");
    int H = x.dim(1), W = x.dim(2);
    Tensor<S> out({count, H, W});
    const Tensor<S>& xv = x.value();
    int64_t HW = int64_t(H) * W;
    std::copy(xv.v.begin() + from * HW, xv.v.begin() + (from + count) * HW, out.v.begin());
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, from, HW, count](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int64_t i = 0; i < count * HW; ++i) dx[from * HW + i] += dy[i];
    });
}

// top-left spatial crop of a (C,H,W) map
template <typename S>
Val<S> crop_spatial(Val<S> x, int h, int w) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3 && h >= 1 && w >= 1 && h <= x.dim(1) && w <= x.dim(2),
                 "crop_spatial: bad target size");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (h == H && w == W) return x;
    Tensor<S> out({C, h, w});
    const Tensor<S>& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = xv.at(c, y, xx);
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, C, h, w](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) dx.at(c, y, xx) += dy.at(c, y, xx);
    });
}

template <typename S>
Val<S> slice_vec(Val<S> x, int from, int count) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 1 && from >= 0 && from + count <= x.value().numel(), "slice_vec: out of range");
    Tensor<S> out({count});
    for (int i = 0; i < count; ++i) out[i] = x.value()[from + i];
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, from, count](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int i = 0; i < count; ++i) dx[from + i] += dy[i];
    });
}

// 2x2 average pooling; floor mode drops odd tails, ceil mode averages the
// clipped window at the border.
template <typename S>
Val<S> avg_pool2(Val<S> x, bool ceil_mode = false) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3, "avg_pool2: rank-3 expected");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int OH = ceil_mode ? (H + 1) / 2 : H / 2;
    int OW = ceil_mode ? (W + 1) / 2 : W / 2;
    check_config(OH >= 1 && OW >= 1, "avg_pool2: too small");
    Tensor<S> out({C, OH, OW});
    const Tensor<S>& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                int y1 = std::min(2 * oy + 2, H), x1 = std::min(2 * ox + 2, W);
                S acc = 0;
                int cnt = 0;
                for (int y = 2 * oy; y < y1; ++y)
                    for (int xx = 2 * ox; xx < x1; ++xx) {
                        acc += xv.at(c, y, xx);
                        ++cnt;
                    }
                out.at(c, oy, ox) = acc / S(cnt);
            }
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, C, H, W, OH, OW](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    int y1 = std::min(2 * oy + 2, H), x1 = std::min(2 * ox + 2, W);
                    int cnt = (y1 - 2 * oy) * (x1 - 2 * ox);
                    S go = dy.at(c, oy, ox) / S(cnt);
                    for (int y = 2 * oy; y < y1; ++y)
                        for (int xx = 2 * ox; xx < x1; ++xx) dx.at(c, y, xx) += go;
                }
    });
}

template <typename S>
Val<S> upsample_nearest2(Val<S> x, int out_h, int out_w) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3, "upsample_nearest2: rank-3 expected");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    check_config(out_h <= 2 * H && out_w <= 2 * W && out_h >= H && out_w >= W,
                 "upsample_nearest2: bad target size");
    Tensor<S> out({C, out_h, out_w});
    const Tensor<S>& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx) out.at(c, y, xx) = xv.at(c, y / 2, xx / 2);
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, C, out_h, out_w](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx) dx.at(c, y / 2, xx / 2) += dy.at(c, y, xx);
    });
}

// ------------------------------------------------------------ dense / pooling

template <typename S>
Val<S> dense(Val<S> x, Val<S> w, Val<S> b) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 1 && w.rank() == 2, "dense: bad ranks");
    int N = int(x.value().numel()), M = w.dim(0);
    check_config(w.dim(1) == N && b.value().numel() == M, "dense: shape mismatch");
    Tensor<S> out({M});
    const Tensor<S>& xv = x.value();
    const Tensor<S>& wv = w.value();
    for (int m = 0; m < M; ++m) {
        S acc = b.value()[m];
        for (int n = 0; n < N; ++n) acc += wv[int64_t(m) * N + n] * xv[n];
        out[m] = acc;
    }
    int ix = x.id, iw = w.id, ib = b.id;
    bool ng = wants_grad(g, ix) || wants_grad(g, iw) || wants_grad(g, ib);
    return g.make(std::move(out), ng, [ix, iw, ib, M, N](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& xv2 = gr.node(ix).value;
        const Tensor<S>& wv2 = gr.node(iw).value;
        bool gx = wants_grad(gr, ix), gw = wants_grad(gr, iw), gb = wants_grad(gr, ib);
        for (int m = 0; m < M; ++m) {
            S go = dy[m];
            if (go == S(0)) continue;
            if (gb) gr.grad_of(ib)[m] += go;
            for (int n = 0; n < N; ++n) {
                if (gx) gr.grad_of(ix)[n] += go * wv2[int64_t(m) * N + n];
                if (gw) gr.grad_of(iw)[int64_t(m) * N + n] += go * xv2[n];
            }
        }
    });
}

template <typename S>
Val<S> global_avg_pool(Val<S> x) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3, "global_avg_pool: rank-3 expected");
    int C = x.dim(0);
    int64_t HW = int64_t(x.dim(1)) * x.dim(2);
    Tensor<S> out({C});
    for (int c = 0; c < C; ++c) {
        S acc = 0;
        for (int64_t i = 0; i < HW; ++i) acc += x.value()[c * HW + i];
        out[c] = acc / S(HW);
    }
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, C, HW](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        Tensor<S>& dx = gr.grad_of(ix);
        for (int c = 0; c < C; ++c) {
            S go = dy[c] / S(HW);
            for (int64_t i = 0; i < HW; ++i) dx[c * HW + i] += go;
        }
    });
}

template <typename S>
Val<S> sum(Val<S> x) {
    Graph<S>& g = *x.g;
    S acc = 0;
    for (auto v : x.value().v) acc += v;
    int ix = x.id;
    return g.make(Tensor<S>::scalar(acc), wants_grad(g, ix), [ix](Graph<S>& gr, int self) {
        S go = gr.node(self).grad[0];
        Tensor<S>& dx = gr.grad_of(ix);
        for (auto& v : dx.v) v += go;
    });
}

template <typename S>
Val<S> mean(Val<S> x) {
    return mul_const(sum(x), S(1) / S(x.value().numel()));
}

// y = x^p for a positive scalar node x and constant exponent
template <typename S>
Val<S> pow_const(Val<S> x, S p) {
    Graph<S>& g = *x.g;
    check_config(x.value().numel() == 1, "pow_const: scalar expected");
    S xv = x.value()[0];
    Tensor<S> out = Tensor<S>::scalar(S(std::pow(double(xv), double(p))));
    int ix = x.id;
    return g.make(std::move(out), wants_grad(g, ix), [ix, p](Graph<S>& gr, int self) {
        S go = gr.node(self).grad[0];
        S xv2 = gr.node(ix).value[0];
        gr.grad_of(ix)[0] += go * p * S(std::pow(double(xv2), double(p) - 1.0));
    });
}

// softmax over r splits, per channel: logits laid out [split][channel]
template <typename S>
Val<S> radix_softmax(Val<S> logits, int r) {
    Graph<S>& g = *logits.g;
    check_config(logits.rank() == 1 && logits.value().numel() % r == 0, "radix_softmax: bad layout");
    int C = int(logits.value().numel()) / r;
    Tensor<S> out({r * C});
    const Tensor<S>& lv = logits.value();
    for (int c = 0; c < C; ++c) {
        S mx = lv[c];
        for (int i = 1; i < r; ++i) mx = std::max(mx, lv[i * C + c]);
        S denom = 0;
        for (int i = 0; i < r; ++i) denom += S(std::exp(double(lv[i * C + c] - mx)));
        for (int i = 0; i < r; ++i) out[i * C + c] = S(std::exp(double(lv[i * C + c] - mx))) / denom;
    }
    int il = logits.id;
    return g.make(std::move(out), wants_grad(g, il), [il, r, C](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& y = gr.node(self).value;
        Tensor<S>& dl = gr.grad_of(il);
        for (int c = 0; c < C; ++c) {
            S dot = 0;
            for (int i = 0; i < r; ++i) dot += dy[i * C + c] * y[i * C + c];
            for (int i = 0; i < r; ++i) dl[i * C + c] += y[i * C + c] * (dy[i * C + c] - dot);
        }
    });
}

// --------------------------------------------------------------------- warp

// Bilinear backward warping with border clamp. img: (C,H,W), flow: (2,H,W)
// with channel 0 = x displacement, channel 1 = y displacement; the output at
// (y,x) samples img at (y + fy, x + fx).
template <typename S>
Val<S> bilinear_warp(Val<S> img, Val<S> flow) {
    Graph<S>& g = *img.g;
    check_config(img.rank() == 3 && flow.rank() == 3 && flow.dim(0) == 2 &&
                     flow.dim(1) == img.dim(1) && flow.dim(2) == img.dim(2),
                 "bilinear_warp: shape mismatch");
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor<S> out({C, H, W});
    const Tensor<S>& iv = img.value();
    const Tensor<S>& fv = flow.value();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            S sx = S(x) + fv.at(0, y, x);
            S sy = S(y) + fv.at(1, y, x);
            S cx = std::min(std::max(sx, S(0)), S(W - 1));
            S cy = std::min(std::max(sy, S(0)), S(H - 1));
            int x0 = std::min(int(std::floor(cx)), W - 1);
            int y0 = std::min(int(std::floor(cy)), H - 1);
            int x1 = std::min(x0 + 1, W - 1);
            int y1 = std::min(y0 + 1, H - 1);
            S ax = cx - S(x0), ay = cy - S(y0);
            for (int c = 0; c < C; ++c) {
                S v00 = iv.at(c, y0, x0), v01 = iv.at(c, y0, x1);
                S v10 = iv.at(c, y1, x0), v11 = iv.at(c, y1, x1);
                out.at(c, y, x) = (v00 * (S(1) - ax) + v01 * ax) * (S(1) - ay) +
                                  (v10 * (S(1) - ax) + v11 * ax) * ay;
            }
        }
    int ii = img.id, ifl = flow.id;
    bool ng = wants_grad(g, ii) || wants_grad(g, ifl);
    return g.make(std::move(out), ng, [ii, ifl, C, H, W](Graph<S>& gr, int self) {
        const Tensor<S>& dy = gr.node(self).grad;
        const Tensor<S>& iv2 = gr.node(ii).value;
        const Tensor<S>& fv2 = gr.node(ifl).value;
        bool gi = wants_grad(gr, ii), gf = wants_grad(gr, ifl);
        Tensor<S>* di = gi ? &gr.grad_of(ii) : nullptr;
        Tensor<S>* df = gf ? &gr.grad_of(ifl) : nullptr;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                S sx = S(x) + fv2.at(0, y, x);
                S sy = S(y) + fv2.at(1, y, x);
                S cx = std::min(std::max(sx, S(0)), S(W - 1));
                S cy = std::min(std::max(sy, S(0)), S(H - 1));
                bool in_x = sx > S(0) && sx < S(W - 1);
                bool in_y = sy > S(0) && sy < S(H - 1);
                int x0 = std::min(int(std::floor(cx)), W - 1);
                int y0 = std::min(int(std::floor(cy)), H - 1);
                int x1 = std::min(x0 + 1, W - 1);
                int y1 = std::min(y0 + 1, H - 1);
                S ax = cx - S(x0), ay = cy - S(y0);
                S gfx = 0, gfy = 0;
                for (int c = 0; c < C; ++c) {
                    S go = dy.at(c, y, x);
                    if (go == S(0)) continue;
                    S v00 = iv2.at(c, y0, x0), v01 = iv2.at(c, y0, x1);
                    S v10 = iv2.at(c, y1, x0), v11 = iv2.at(c, y1, x1);
                    if (gi) {
                        di->at(c, y0, x0) += go * (S(1) - ax) * (S(1) - ay);
                        di->at(c, y0, x1) += go * ax * (S(1) - ay);
                        di->at(c, y1, x0) += go * (S(1) - ax) * ay;
                        di->at(c, y1, x1) += go * ax * ay;
                    }
                    if (gf) {
                        gfx += go * ((v01 - v00) * (S(1) - ay) + (v11 - v10) * ay);
                        gfy += go * ((v10 - v00) * (S(1) - ax) + (v11 - v01) * ax);
                    }
                }
                if (gf) {
                    if (in_x) df->at(0, y, x) += gfx;
                    if (in_y) df->at(1, y, x) += gfy;
                }
            }
    });
}

// Depthwise valid-mode correlation with a fixed (non-learned) 2D window.
template <typename S>
Val<S> window_filter_valid(Val<S> x, const Tensor<S>& win) {
    Graph<S>& g = *x.g;
    check_config(x.rank() == 3 && win.rank() == 2, "window_filter_valid: bad ranks");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int KH = win.dim(0), KW = win.dim(1);
    check_config(H >= KH && W >= KW, "window_filter_valid: input smaller than window");
    int OH = H - KH + 1, OW = W - KW + 1;
    Tensor<S> out({C, OH, OW});
    const Tensor<S>& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                S acc = 0;
                for (int ky = 0; ky < KH; ++ky) {
                    const S* xrow = &xv.v[(size_t(c) * H + oy + ky) * W + ox];
                    const S* wrow = &win.v[size_t(ky) * KW];
                    for (int kx = 0; kx < KW; ++kx) acc += wrow[kx] * xrow[kx];
                }
                out.at(c, oy, ox) = acc;
            }
    int ix = x.id;
    Tensor<S> wcopy = win;
    return g.make(std::move(out), wants_grad(g, ix),
                  [ix, wcopy, C, H, W, KH, KW, OH, OW](Graph<S>& gr, int self) {
                      const Tensor<S>& dy = gr.node(self).grad;
                      Tensor<S>& dx = gr.grad_of(ix);
                      for (int c = 0; c < C; ++c)
                          for (int oy = 0; oy < OH; ++oy)
                              for (int ox = 0; ox < OW; ++ox) {
                                  S go = dy.at(c, oy, ox);
                                  if (go == S(0)) continue;
                                  for (int ky = 0; ky < KH; ++ky) {
                                      S* xrow = &dx.v[(size_t(c) * H + oy + ky) * W + ox];
                                      const S* wrow = &wcopy.v[size_t(ky) * KW];
                                      for (int kx = 0; kx < KW; ++kx) xrow[kx] += go * wrow[kx];
                                  }
                              }
                  });
}

// ---------------------------------------------------------------- rate terms

// Total code length, in bits, of `values` under per-element discretized
// Gaussians: p = Phi((v+0.5-mu)/sigma) - Phi((v-0.5-mu)/sigma), with the tail
// mass folded into the range extremes and the probability floored at 2^-16.
// Values may be continuous (training surrogate) or integers (eval). Gradients
// flow to values, means and scales.
template <typename S>
Val<S> gaussian_rate_bits(Val<S> values, Val<S> mu, Val<S> sigma, int vmin, int vmax) {
    Graph<S>& g = *values.g;
    check_config(values.value().same_shape(mu.value()) && values.value().same_shape(sigma.value()),
                 "gaussian_rate_bits: shape mismatch");
    const S p_floor = S(1.0 / 65536.0);
    const S inv_ln2 = S(1.4426950408889634);
    const Tensor<S>& vv = values.value();
    const Tensor<S>& mv = mu.value();
    const Tensor<S>& sv = sigma.value();
    S total = 0;
    for (int64_t i = 0; i < vv.numel(); ++i) {
        S v = vv[i], m = mv[i], s = sv[i];
        S a = (v - S(0.5) - m) / s;
        S b = (v + S(0.5) - m) / s;
        S p;
        if (v <= S(vmin))
            p = normal_cdf(b);
        else if (v >= S(vmax))
            p = S(1) - normal_cdf(a);
        else
            p = normal_cdf(b) - normal_cdf(a);
        p = std::max(p, p_floor);
        total += -S(std::log(double(p))) * inv_ln2;
    }
    int iv = values.id, im = mu.id, is = sigma.id;
    bool ng = wants_grad(g, iv) || wants_grad(g, im) || wants_grad(g, is);
    return g.make(Tensor<S>::scalar(total), ng,
                  [iv, im, is, vmin, vmax, p_floor, inv_ln2](Graph<S>& gr, int self) {
                      S go = gr.node(self).grad[0];
                      const Tensor<S>& vv2 = gr.node(iv).value;
                      const Tensor<S>& mv2 = gr.node(im).value;
                      const Tensor<S>& sv2 = gr.node(is).value;
                      bool gv = wants_grad(gr, iv), gm = wants_grad(gr, im), gs = wants_grad(gr, is);
                      Tensor<S>* dv = gv ? &gr.grad_of(iv) : nullptr;
                      Tensor<S>* dm = gm ? &gr.grad_of(im) : nullptr;
                      Tensor<S>* ds = gs ? &gr.grad_of(is) : nullptr;
                      for (int64_t i = 0; i < vv2.numel(); ++i) {
                          S v = vv2[i], m = mv2[i], s = sv2[i];
                          S a = (v - S(0.5) - m) / s;
                          S b = (v + S(0.5) - m) / s;
                          S pa = normal_pdf(a), pb = normal_pdf(b);
                          S p;
                          if (v <= S(vmin)) {
                              p = normal_cdf(b);
                              pa = 0;
                              a = 0;
                          } else if (v >= S(vmax)) {
                              p = S(1) - normal_cdf(a);
                              pb = 0;
                              b = 0;
                          } else {
                              p = normal_cdf(b) - normal_cdf(a);
                          }
                          if (p <= p_floor) continue; // floored: no gradient
                          // d(-log2 p) = -(1/(p ln2)) dp
                          S coef = -go * inv_ln2 / p;
                          if (dv) (*dv)[i] += coef * (pb - pa) / s;
                          if (dm) (*dm)[i] += coef * (pa - pb) / s;
                          if (ds) (*ds)[i] += coef * (a * pa - b * pb) / s;
                      }
                  });
}

// Code length, in bits, of integer-rounded `values` under a single learned
// categorical over [vmin, vmin+A-1] given by `logits`. Gradient flows to the
// logits only.
template <typename S>
Val<S> categorical_rate_bits(const Tensor<S>& values, Val<S> logits, int vmin) {
    Graph<S>& g = *logits.g;
    check_config(logits.rank() == 1, "categorical_rate_bits: rank-1 logits expected");
    int A = int(logits.value().numel());
    const Tensor<S>& lv = logits.value();
    // log-softmax denom
    S mx = lv[0];
    for (int i = 1; i < A; ++i) mx = std::max(mx, lv[i]);
    double denom = 0;
    for (int i = 0; i < A; ++i) denom += std::exp(double(lv[i] - mx));
    double lse = std::log(denom) + double(mx);
    const double inv_ln2 = 1.4426950408889634;
    double total = 0;
    std::vector<int> syms(size_t(values.numel()));
    for (int64_t i = 0; i < values.numel(); ++i) {
        int s = int(round_half_away(values[i])) - vmin;
        s = std::min(std::max(s, 0), A - 1);
        syms[size_t(i)] = s;
        total += (lse - double(lv[s])) * inv_ln2;
    }
    int il = logits.id;
    return g.make(Tensor<S>::scalar(S(total)), wants_grad(g, il),
                  [il, A, syms, inv_ln2](Graph<S>& gr, int self) {
                      S go = gr.node(self).grad[0];
                      const Tensor<S>& lv2 = gr.node(il).value;
                      Tensor<S>& dl = gr.grad_of(il);
                      S mx2 = lv2[0];
                      for (int i = 1; i < A; ++i) mx2 = std::max(mx2, lv2[i]);
                      double denom2 = 0;
                      for (int i = 0; i < A; ++i) denom2 += std::exp(double(lv2[i] - mx2));
                      std::vector<S> soft(static_cast<size_t>(A), S(0));
                      for (int i = 0; i < A; ++i)
                          soft[size_t(i)] = S(std::exp(double(lv2[i] - mx2)) / denom2);
                      // d bits/d logit_j = (softmax_j - [j == s]) / ln2 per element
                      std::vector<S> counts(static_cast<size_t>(A), S(0));
                      for (int s : syms) counts[size_t(s)] += S(1);
                      S n = S(syms.size());
                      for (int j = 0; j < A; ++j)
                          dl[j] += go * S(inv_ln2) * (soft[size_t(j)] * n - counts[size_t(j)]);
                  });
}

} // namespace nnvc
