#pragma once

#include "comma/params.hpp"

namespace comma {

// ---------------------------------------------------------------------------
// Tokenization: [C,H,W,D] <-> [L, C*p^3] in a fixed axis-major raster
// (H-major, D-fastest), matching the memory order of the feature map.
// ---------------------------------------------------------------------------

struct TokenLayout {
    std::int64_t length;     // L = HWD / p^3
    std::int64_t token_dim;  // C * p^3
    std::array<std::int64_t, 3> grid;
};

inline TokenLayout token_layout(std::int64_t channels, std::array<std::int64_t, 3> extents,
                                std::int64_t p) {
    check(p > 0, "token_layout: token size must be positive");
    for (int a = 0; a < 3; ++a)
        check(extents[a] % p == 0,
              strcat_msg("token_layout: extent ", extents[a], " on axis ", a,
                         " not divisible by token size ", p));
    TokenLayout tl;
    tl.grid = {extents[0] / p, extents[1] / p, extents[2] / p};
    tl.length = tl.grid[0] * tl.grid[1] * tl.grid[2];
    tl.token_dim = channels * p * p * p;
    return tl;
}

template <class T>
struct TokenSequence {
    Tensor<T> tokens;  // [L, token_dim]
    std::array<std::int64_t, 3> grid_shape{};
    std::int64_t token_size = 1;
    std::int64_t channels = 1;

    std::int64_t length() const { return tokens.extent(0); }
    std::int64_t dim() const { return tokens.extent(1); }
};

namespace detail {

// dst[l, t] = src[c, gi*p+di, gj*p+dj, gk*p+dk] with l raster over the token
// grid and t = ((c*p+di)*p+dj)*p+dk. `invert` runs the inverse copy.
template <class T>
void shuffle_tokens(const T* src, T* dst, std::int64_t channels,
                    std::array<std::int64_t, 3> ext, std::int64_t p, bool invert,
                    bool accumulate) {
    const auto [H, W, D] = ext;
    const std::int64_t GH = H / p, GW = W / p, GD = D / p;
    std::int64_t l = 0;
    for (std::int64_t gi = 0; gi < GH; ++gi)
        for (std::int64_t gj = 0; gj < GW; ++gj)
            for (std::int64_t gk = 0; gk < GD; ++gk, ++l) {
                std::int64_t t = 0;
                std::int64_t tok_base = l * channels * p * p * p;
                for (std::int64_t c = 0; c < channels; ++c)
                    for (std::int64_t di = 0; di < p; ++di)
                        for (std::int64_t dj = 0; dj < p; ++dj) {
                            std::int64_t vol =
                                ((c * H + gi * p + di) * W + gj * p + dj) * D + gk * p;
                            for (std::int64_t dk = 0; dk < p; ++dk, ++t) {
                                if (!invert) {
                                    if (accumulate)
                                        dst[tok_base + t] += src[vol + dk];
                                    else
                                        dst[tok_base + t] = src[vol + dk];
                                } else {
                                    if (accumulate)
                                        dst[vol + dk] += src[tok_base + t];
                                    else
                                        dst[vol + dk] = src[tok_base + t];
                                }
                            }
                        }
            }
}

}  // namespace detail

template <class T>
TokenSequence<T> tokenize(const Tensor<T>& x, std::int64_t p) {
    check(x.ndim() == 4, strcat_msg("tokenize: input must be [C,H,W,D], got ",
                                    shape_str(x.shape())));
    std::array<std::int64_t, 3> ext{x.extent(1), x.extent(2), x.extent(3)};
    auto tl = token_layout(x.extent(0), ext, p);
    std::int64_t channels = x.extent(0);
    auto out = detail::make_op<T>({tl.length, tl.token_dim}, {x},
                                  [channels, ext, p](Node<T>& self) {
                                      auto& px = *self.parents[0];
                                      px.ensure_grad();
                                      detail::shuffle_tokens(self.grad.data(), px.grad.data(),
                                                             channels, ext, p, /*invert=*/true,
                                                             /*accumulate=*/true);
                                  });
    detail::shuffle_tokens(x.data().data(), out.mutable_data().data(), channels, ext, p, false,
                           false);
    TokenSequence<T> seq;
    seq.tokens = out;
    seq.grid_shape = tl.grid;
    seq.token_size = p;
    seq.channels = channels;
    return seq;
}

template <class T>
Tensor<T> detokenize(const TokenSequence<T>& seq) {
    const std::int64_t p = seq.token_size, channels = seq.channels;
    std::array<std::int64_t, 3> ext{seq.grid_shape[0] * p, seq.grid_shape[1] * p,
                                    seq.grid_shape[2] * p};
    check(seq.dim() == channels * p * p * p,
          strcat_msg("detokenize: token dim ", seq.dim(), " does not match channels ", channels,
                     " and token size ", p));
    auto out = detail::make_op<T>({channels, ext[0], ext[1], ext[2]}, {seq.tokens},
                                  [channels, ext, p](Node<T>& self) {
                                      auto& px = *self.parents[0];
                                      px.ensure_grad();
                                      detail::shuffle_tokens(self.grad.data(), px.grad.data(),
                                                             channels, ext, p, /*invert=*/false,
                                                             /*accumulate=*/true);
                                  });
    detail::shuffle_tokens(seq.tokens.data().data(), out.mutable_data().data(), channels, ext, p,
                           true, false);
    return out;
}

// ---------------------------------------------------------------------------
// Outer-product helpers used by the selective scan
// ---------------------------------------------------------------------------

// z[l,e,n] = x[l,e] * y[e,n]
template <class T>
Tensor<T> outer_le_en(const Tensor<T>& x, const Tensor<T>& y) {
    check(x.ndim() == 2 && y.ndim() == 2 && x.extent(1) == y.extent(0),
          strcat_msg("outer_le_en: ", shape_str(x.shape()), " vs ", shape_str(y.shape())));
    const std::int64_t L = x.extent(0), E = x.extent(1), N = y.extent(1);
    auto out = detail::make_op<T>({L, E, N}, {x, y}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& py = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t e = 0; e < E; ++e) {
                    T acc = T(0);
                    const T* g = self.grad.data() + (l * E + e) * N;
                    const T* yr = py.data.data() + e * N;
                    for (std::int64_t n = 0; n < N; ++n) acc += g[n] * yr[n];
                    px.grad[l * E + e] += acc;
                }
        }
        if (py.requires_grad) {
            py.ensure_grad();
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t e = 0; e < E; ++e) {
                    T xv = px.data[l * E + e];
                    const T* g = self.grad.data() + (l * E + e) * N;
                    T* gy = py.grad.data() + e * N;
                    for (std::int64_t n = 0; n < N; ++n) gy[n] += g[n] * xv;
                }
        }
    });
    const T* px = x.data().data();
    const T* py = y.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t l = 0; l < L; ++l)
        for (std::int64_t e = 0; e < E; ++e) {
            T xv = px[l * E + e];
            const T* yr = py + e * N;
            T* o = po + (l * E + e) * N;
            for (std::int64_t n = 0; n < N; ++n) o[n] = xv * yr[n];
        }
    return out;
}

// z[l,e,n] = x[l,e] * y[l,n]
template <class T>
Tensor<T> outer_le_ln(const Tensor<T>& x, const Tensor<T>& y) {
    check(x.ndim() == 2 && y.ndim() == 2 && x.extent(0) == y.extent(0),
          strcat_msg("outer_le_ln: ", shape_str(x.shape()), " vs ", shape_str(y.shape())));
    const std::int64_t L = x.extent(0), E = x.extent(1), N = y.extent(1);
    auto out = detail::make_op<T>({L, E, N}, {x, y}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& py = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t l = 0; l < L; ++l) {
                const T* yr = py.data.data() + l * N;
                for (std::int64_t e = 0; e < E; ++e) {
                    T acc = T(0);
                    const T* g = self.grad.data() + (l * E + e) * N;
                    for (std::int64_t n = 0; n < N; ++n) acc += g[n] * yr[n];
                    px.grad[l * E + e] += acc;
                }
            }
        }
        if (py.requires_grad) {
            py.ensure_grad();
            for (std::int64_t l = 0; l < L; ++l) {
                T* gy = py.grad.data() + l * N;
                for (std::int64_t e = 0; e < E; ++e) {
                    T xv = px.data[l * E + e];
                    const T* g = self.grad.data() + (l * E + e) * N;
                    for (std::int64_t n = 0; n < N; ++n) gy[n] += g[n] * xv;
                }
            }
        }
    });
    const T* px = x.data().data();
    const T* py = y.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t l = 0; l < L; ++l)
        for (std::int64_t e = 0; e < E; ++e) {
            T xv = px[l * E + e];
            const T* yr = py + l * N;
            T* o = po + (l * E + e) * N;
            for (std::int64_t n = 0; n < N; ++n) o[n] = xv * yr[n];
        }
    return out;
}

// ---------------------------------------------------------------------------
// The diagonal linear recurrence:
//   h[l] = abar[l] (*) h[l-1] + bu[l],   h[-1] = 0
//   y[l,e] = sum_n c[l,n] * h[l,e,n]
// One fused tape node; a single forward sweep with contiguous inner loops,
// linear in L. Backward runs the reverse-time recurrence.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> ssm_scan_core(const Tensor<T>& abar, const Tensor<T>& bu, const Tensor<T>& c) {
    check(abar.ndim() == 3 && abar.shape() == bu.shape(),
          strcat_msg("ssm_scan_core: abar ", shape_str(abar.shape()), " vs bu ",
                     shape_str(bu.shape())));
    const std::int64_t L = abar.extent(0), E = abar.extent(1), N = abar.extent(2);
    check(c.ndim() == 2 && c.extent(0) == L && c.extent(1) == N,
          strcat_msg("ssm_scan_core: c ", shape_str(c.shape()), " incompatible with state ",
                     shape_str(abar.shape())));
    if (L == 0) return Tensor<T>::zeros({0, E});

    std::vector<T> h(static_cast<std::size_t>(L * E * N));
    {
        const T* pa = abar.data().data();
        const T* pb = bu.data().data();
        const std::int64_t step = E * N;
        for (std::int64_t i = 0; i < step; ++i) h[static_cast<std::size_t>(i)] = pb[i];
        for (std::int64_t l = 1; l < L; ++l) {
            const T* a = pa + l * step;
            const T* b = pb + l * step;
            const T* hp = h.data() + (l - 1) * step;
            T* hc = h.data() + l * step;
            for (std::int64_t i = 0; i < step; ++i) hc[i] = a[i] * hp[i] + b[i];
        }
    }

    auto out = detail::make_op<T>({L, E}, {abar, bu, c}, [L, E, N, h](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        auto& pc = *self.parents[2];
        const std::int64_t step = E * N;
        T* ga = nullptr;
        T* gb = nullptr;
        T* gc = nullptr;
        if (pa.requires_grad) {
            pa.ensure_grad();
            ga = pa.grad.data();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            gb = pb.grad.data();
        }
        if (pc.requires_grad) {
            pc.ensure_grad();
            gc = pc.grad.data();
        }
        std::vector<T> gh(static_cast<std::size_t>(step), T(0));
        for (std::int64_t l = L - 1; l >= 0; --l) {
            const T* gy = self.grad.data() + l * E;
            const T* cl = pc.data.data() + l * N;
            const T* hl = h.data() + l * step;
            for (std::int64_t e = 0; e < E; ++e) {
                T g = gy[e];
                T* ghe = gh.data() + e * N;
                for (std::int64_t n = 0; n < N; ++n) ghe[n] += g * cl[n];
            }
            if (gc) {
                T* gcl = gc + l * N;
                for (std::int64_t e = 0; e < E; ++e) {
                    T g = gy[e];
                    const T* he = hl + e * N;
                    for (std::int64_t n = 0; n < N; ++n) gcl[n] += g * he[n];
                }
            }
            const T* hprev = l > 0 ? h.data() + (l - 1) * step : nullptr;
            if (ga && hprev) {
                T* gal = ga + l * step;
                for (std::int64_t i = 0; i < step; ++i) gal[i] += gh[i] * hprev[i];
            }
            if (gb) {
                T* gbl = gb + l * step;
                for (std::int64_t i = 0; i < step; ++i) gbl[i] += gh[i];
            }
            const T* al = pa.data.data() + l * step;
            for (std::int64_t i = 0; i < step; ++i) gh[i] *= al[i];
        }
    });
    {
        const T* pc = c.data().data();
        T* py = out.mutable_data().data();
        const std::int64_t step = E * N;
        for (std::int64_t l = 0; l < L; ++l) {
            const T* cl = pc + l * N;
            const T* hl = h.data() + l * step;
            T* yl = py + l * E;
            for (std::int64_t e = 0; e < E; ++e) {
                T acc = T(0);
                const T* he = hl + e * N;
                for (std::int64_t n = 0; n < N; ++n) acc += cl[n] * he[n];
                yl[e] = acc;
            }
        }
    }
    return out;
}

// Depthwise causal 1-D convolution along the token axis: one `width`-tap
// filter per channel, zero history before l = 0.
template <class T>
Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
    check(x.ndim() == 2 && k.ndim() == 2 && k.extent(0) == x.extent(1),
          strcat_msg("conv1d_depthwise_causal: x ", shape_str(x.shape()), " vs k ",
                     shape_str(k.shape())));
    const std::int64_t L = x.extent(0), E = x.extent(1), width = k.extent(1);
    auto out = detail::make_op<T>(x.shape(), {x, k, bias}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pk.requires_grad) pk.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t l = 0; l < L; ++l) {
            const T* g = self.grad.data() + l * E;
            for (std::int64_t j = 0; j < width; ++j) {
                std::int64_t src = l - (width - 1) + j;
                if (src < 0) continue;
                for (std::int64_t e = 0; e < E; ++e) {
                    if (px.requires_grad) px.grad[src * E + e] += g[e] * pk.data[e * width + j];
                    if (pk.requires_grad) pk.grad[e * width + j] += g[e] * px.data[src * E + e];
                }
            }
            if (pb.requires_grad)
                for (std::int64_t e = 0; e < E; ++e) pb.grad[e] += g[e];
        }
    });
    const T* px = x.data().data();
    const T* pk = k.data().data();
    const T* pb = bias.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t l = 0; l < L; ++l) {
        T* o = po + l * E;
        for (std::int64_t e = 0; e < E; ++e) o[e] = pb[e];
        for (std::int64_t j = 0; j < width; ++j) {
            std::int64_t src = l - (width - 1) + j;
            if (src < 0) continue;
            const T* xr = px + src * E;
            for (std::int64_t e = 0; e < E; ++e) o[e] += pk[e * width + j] * xr[e];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selective SSM: input-dependent discretization around the scan core.
// ---------------------------------------------------------------------------

struct CcMambaConfig {
    std::int64_t token_size = 8;      // p
    std::int64_t compressed_dim = 32; // T
    std::int64_t expand = 2;
    std::int64_t conv_width = 4;
    std::int64_t layers = 4;
    std::int64_t state_dim = 16;      // N
};

template <class T>
struct SsmParams {
    Tensor<T> a_log;        // [E, N]; transition A = -exp(a_log)
    Linear<T> delta_proj;   // E -> E, bias initialised for small step sizes
    Linear<T> b_proj;       // E -> N
    Linear<T> c_proj;       // E -> N
    std::int64_t state_dim = 16;

    static SsmParams make(ParamRegistry<T>& reg, const std::string& name, std::int64_t e_dim,
                          std::int64_t state_dim) {
        SsmParams s;
        s.state_dim = state_dim;
        s.a_log = reg.create(name + ".a_log", {e_dim, state_dim}, InitSpec::explicit_values());
        for (std::int64_t e = 0; e < e_dim; ++e)
            for (std::int64_t n = 0; n < state_dim; ++n)
                s.a_log.mutable_data()[e * state_dim + n] =
                    static_cast<T>(std::log(static_cast<double>(n + 1)));
        s.delta_proj = Linear<T>::make(reg, name + ".delta_proj", e_dim, e_dim);
        // bias so that softplus(bias) lands in [1e-3, 1e-1]
        for (std::int64_t e = 0; e < e_dim; ++e) {
            double dt = std::exp(reg.rng().uniform(std::log(1e-3), std::log(1e-1)));
            s.delta_proj.bias.mutable_data()[e] =
                static_cast<T>(std::log(std::expm1(dt)));
        }
        s.b_proj = Linear<T>::make(reg, name + ".b_proj", e_dim, state_dim, /*with_bias=*/false);
        s.c_proj = Linear<T>::make(reg, name + ".c_proj", e_dim, state_dim, /*with_bias=*/false);
        return s;
    }

    // u: [L, E] -> y: [L, E]
    Tensor<T> forward(const Tensor<T>& u) const {
        auto delta = softplus(delta_proj.forward(u));           // [L,E]
        auto a = scale(comma::exp(a_log), T(-1));               // [E,N]
        auto abar = comma::exp(outer_le_en(delta, a));          // [L,E,N]
        auto b = b_proj.forward(u);                             // [L,N]
        auto c = c_proj.forward(u);                             // [L,N]
        auto bu = outer_le_ln(mul(delta, u), b);                // [L,E,N]
        return ssm_scan_core(abar, bu, c);
    }
};

// ---------------------------------------------------------------------------
// The channel-compressed Mamba block: compress tokens to a fixed small
// dimension, run a gated selective scan, recover the token dimension.
// ---------------------------------------------------------------------------

template <class T>
struct TokenCompressor {
    Linear<T> proj;          // token_dim -> compressed
    LayerNormLayer<T> norm;  // over compressed features

    static TokenCompressor make(ParamRegistry<T>& reg, const std::string& name,
                                std::int64_t token_dim, std::int64_t compressed) {
        TokenCompressor c;
        c.proj = Linear<T>::make(reg, name + ".proj", token_dim, compressed);
        c.norm = LayerNormLayer<T>::make(reg, name + ".norm", compressed);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& tokens) const { return norm.forward(proj.forward(tokens)); }
};

template <class T>
TokenSequence<T> compress_tokens(const TokenSequence<T>& seq, const TokenCompressor<T>& comp) {
    TokenSequence<T> out = seq;
    out.tokens = comp.forward(seq.tokens);
    return out;
}

template <class T>
struct CcMambaBlock {
    TokenCompressor<T> compress;   // token_dim -> Tc
    Linear<T> gate_proj;           // Tc -> E (SiLU gate branch)
    Linear<T> scan_in;             // Tc -> E (scan branch)
    Tensor<T> conv_kernel;         // [E, conv_width]
    Tensor<T> conv_bias;           // [E]
    SsmParams<T> ssm;
    LayerNormLayer<T> post_norm;   // over E
    Linear<T> mlp_in;              // E -> 4E
    Linear<T> mlp_out;             // 4E -> E
    Linear<T> recover;             // E -> token_dim
    std::int64_t token_size = 8;

    static CcMambaBlock make(ParamRegistry<T>& reg, const std::string& name,
                             std::int64_t token_dim, const CcMambaConfig& cfg) {
        CcMambaBlock b;
        b.token_size = cfg.token_size;
        const std::int64_t tc = cfg.compressed_dim;
        const std::int64_t e_dim = cfg.expand * tc;
        b.compress = TokenCompressor<T>::make(reg, name + ".compress", token_dim, tc);
        b.gate_proj = Linear<T>::make(reg, name + ".gate_proj", tc, e_dim);
        b.scan_in = Linear<T>::make(reg, name + ".scan_in", tc, e_dim);
        b.conv_kernel = reg.create(name + ".conv.kernel", {e_dim, cfg.conv_width},
                                   InitSpec::fan_in_uniform(cfg.conv_width));
        b.conv_bias = reg.create(name + ".conv.bias", {e_dim}, InitSpec::zeros());
        b.ssm = SsmParams<T>::make(reg, name + ".ssm", e_dim, cfg.state_dim);
        b.post_norm = LayerNormLayer<T>::make(reg, name + ".post_norm", e_dim);
        b.mlp_in = Linear<T>::make(reg, name + ".mlp_in", e_dim, 4 * e_dim);
        b.mlp_out = Linear<T>::make(reg, name + ".mlp_out", 4 * e_dim, e_dim);
        b.recover = Linear<T>::make(reg, name + ".recover", e_dim, token_dim);
        return b;
    }

    Tensor<T> forward_tokens(const Tensor<T>& tokens) const {
        auto f = compress.forward(tokens);
        auto f1 = silu(gate_proj.forward(f));
        auto f2 = ssm.forward(silu(conv1d_depthwise_causal(scan_in.forward(f), conv_kernel,
                                                           conv_bias)));
        auto fo = mul(f1, f2);
        auto m = mlp_out.forward(gelu(mlp_in.forward(post_norm.forward(fo))));
        return recover.forward(m);
    }

    Tensor<T> forward_volume(const Tensor<T>& x) const {
        auto seq = tokenize(x, token_size);
        TokenSequence<T> out = seq;
        out.tokens = forward_tokens(seq.tokens);
        return detokenize(out);
    }
};

// ---------------------------------------------------------------------------
// Reference quadratic self-attention, used only to benchmark the scan against
// ---------------------------------------------------------------------------

template <class T>
struct ReferenceAttention {
    Linear<T> wq, wk, wv;

    static ReferenceAttention make(ParamRegistry<T>& reg, const std::string& name,
                                   std::int64_t dim) {
        ReferenceAttention a;
        a.wq = Linear<T>::make(reg, name + ".wq", dim, dim, false);
        a.wk = Linear<T>::make(reg, name + ".wk", dim, dim, false);
        a.wv = Linear<T>::make(reg, name + ".wv", dim, dim, false);
        return a;
    }

    Tensor<T> forward(const Tensor<T>& tokens) const {
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(tokens.extent(1))));
        auto q = wq.forward(tokens);
        auto k = wk.forward(tokens);
        auto v = wv.forward(tokens);
        auto scores = scale(matmul(q, k, false, true), inv_sqrt);  // [L, L]
        return matmul(softmax_rows(scores), v);
    }
};

struct ScanBenchRow {
    std::int64_t length;
    double scan_ms;
    double attn_ms;
    std::int64_t scan_bytes;
    std::int64_t attn_bytes;
};

// Times one ccMamba token-level forward against one full self-attention
// forward at equal token dimension. Bytes are tensor payload allocations
// during the timed region.
std::vector<ScanBenchRow> bench_scan_vs_attention(const std::vector<std::int64_t>& lengths,
                                                  std::int64_t dim = 32,
                                                  std::uint64_t seed = 17);

inline std::vector<ScanBenchRow> bench_scan_vs_attention(const std::vector<std::int64_t>& lengths,
                                                         std::int64_t dim, std::uint64_t seed) {
    NoGradGuard ng;
    CcMambaConfig cfg;
    cfg.compressed_dim = dim;
    std::vector<ScanBenchRow> rows;
    ParamRegistry<float> reg(seed);
    auto block = CcMambaBlock<float>::make(reg, "bench.ccmamba", dim, cfg);
    auto attn = ReferenceAttention<float>::make(reg, "bench.attn", dim);
    for (auto len : lengths) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(len)));
        auto tokens = Tensor<float>::uniform({len, dim}, rng, -1.0f, 1.0f);
        ScanBenchRow row{};
        row.length = len;
        // warm-up per length, then best of three; keeps allocator and page
        // faults from polluting the scaling ratios
        (void)block.forward_tokens(tokens);
        (void)attn.forward(tokens);
        row.scan_ms = 1e300;
        row.attn_ms = 1e300;
        for (int rep = 0; rep < 3; ++rep) {
            {
                std::int64_t before = tensor_bytes_allocated();
                Timer t;
                auto y = block.forward_tokens(tokens);
                row.scan_ms = std::min(row.scan_ms, t.ms());
                if (rep == 0) row.scan_bytes = tensor_bytes_allocated() - before;
                (void)y;
            }
            {
                std::int64_t before = tensor_bytes_allocated();
                Timer t;
                auto y = attn.forward(tokens);
                row.attn_ms = std::min(row.attn_ms, t.ms());
                if (rep == 0) row.attn_bytes = tensor_bytes_allocated() - before;
                (void)y;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace comma
