#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "comma/tensor.hpp"

namespace comma {

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[M,N] += op(A)op(B), with op(A)=[M,K], op(B)=[K,N].
template <class T>
void mm_kernel(const T* a, const T* b, T* c, std::int64_t m_ext, std::int64_t k_ext,
               std::int64_t n_ext, bool ta, bool tb, bool accumulate) {
    if (!accumulate) std::fill(c, c + m_ext * n_ext, T(0));
    if (!ta && !tb) {
        for (std::int64_t m = 0; m < m_ext; ++m) {
            T* crow = c + m * n_ext;
            const T* arow = a + m * k_ext;
            for (std::int64_t k = 0; k < k_ext; ++k) {
                T av = arow[k];
                const T* brow = b + k * n_ext;
                for (std::int64_t n = 0; n < n_ext; ++n) crow[n] += av * brow[n];
            }
        }
    } else if (!ta && tb) {
        for (std::int64_t m = 0; m < m_ext; ++m) {
            const T* arow = a + m * k_ext;
            T* crow = c + m * n_ext;
            for (std::int64_t n = 0; n < n_ext; ++n) {
                const T* brow = b + n * k_ext;
                T acc = T(0);
#pragma omp simd reduction(+ : acc)
                for (std::int64_t k = 0; k < k_ext; ++k) acc += arow[k] * brow[k];
                crow[n] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::int64_t k = 0; k < k_ext; ++k) {
            const T* arow = a + k * m_ext;
            const T* brow = b + k * n_ext;
            for (std::int64_t m = 0; m < m_ext; ++m) {
                T av = arow[m];
                T* crow = c + m * n_ext;
                for (std::int64_t n = 0; n < n_ext; ++n) crow[n] += av * brow[n];
            }
        }
    } else {
        for (std::int64_t m = 0; m < m_ext; ++m) {
            T* crow = c + m * n_ext;
            for (std::int64_t n = 0; n < n_ext; ++n) {
                const T* brow = b + n * k_ext;
                T acc = T(0);
                for (std::int64_t k = 0; k < k_ext; ++k) acc += a[k * m_ext + m] * brow[k];
                crow[n] += acc;
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
    check(a.ndim() == 2 && b.ndim() == 2,
          strcat_msg("matmul: operands must be 2-D, got ", shape_str(a.shape()), " and ",
                     shape_str(b.shape())));
    std::int64_t m_ext = trans_a ? a.extent(1) : a.extent(0);
    std::int64_t ka = trans_a ? a.extent(0) : a.extent(1);
    std::int64_t kb = trans_b ? b.extent(1) : b.extent(0);
    std::int64_t n_ext = trans_b ? b.extent(0) : b.extent(1);
    check(ka == kb, strcat_msg("matmul: inner extents differ, ", shape_str(a.shape()),
                               (trans_a ? "^T" : ""), " x ", shape_str(b.shape()),
                               (trans_b ? "^T" : "")));
    auto out = detail::make_op<T>(
        {m_ext, n_ext}, {a, b}, [=](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T* g = self.grad.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                // dA = dC op(B)^T arranged for A's storage order
                if (!trans_a) {
                    detail::mm_kernel(g, pb.data.data(), pa.grad.data(), m_ext, n_ext, ka, false,
                                      !trans_b, true);
                } else {
                    // A stored [K,M]
                    if (!trans_b)
                        detail::mm_kernel(pb.data.data(), g, pa.grad.data(), ka, n_ext, m_ext,
                                          false, true, true);
                    else
                        detail::mm_kernel(pb.data.data(), g, pa.grad.data(), ka, n_ext, m_ext,
                                          true, true, true);
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                if (!trans_b) {
                    detail::mm_kernel(pa.data.data(), g, pb.grad.data(), ka, m_ext, n_ext,
                                      !trans_a, false, true);
                } else {
                    // B stored [N,K]
                    if (!trans_a)
                        detail::mm_kernel(g, pa.data.data(), pb.grad.data(), n_ext, m_ext, ka,
                                          true, false, true);
                    else
                        detail::mm_kernel(g, pa.data.data(), pb.grad.data(), n_ext, m_ext, ka,
                                          true, true, true);
                }
            }
        });
    detail::mm_kernel(a.data().data(), b.data().data(), out.mutable_data().data(), m_ext, ka,
                      n_ext, trans_a, trans_b, false);
    return out;
}

// x[R,C] + v[C] broadcast over rows.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    check(x.ndim() == 2 && v.ndim() == 1 && v.extent(0) == x.extent(1),
          strcat_msg("add_rowvec: ", shape_str(x.shape()), " + ", shape_str(v.shape())));
    std::int64_t rows = x.extent(0), cols = x.extent(1);
    auto out = detail::make_op<T>(x.shape(), {x, v}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) pv.grad[c] += self.grad[r * cols + c];
        }
    });
    const T* px = x.data().data();
    const T* pv = v.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pv[c];
    return out;
}

// x[R,C] * v[C] broadcast over rows.
template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    check(x.ndim() == 2 && v.ndim() == 1 && v.extent(0) == x.extent(1),
          strcat_msg("mul_rowvec: ", shape_str(x.shape()), " * ", shape_str(v.shape())));
    std::int64_t rows = x.extent(0), cols = x.extent(1);
    auto out = detail::make_op<T>(x.shape(), {x, v}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c)
                    px.grad[r * cols + c] += self.grad[r * cols + c] * pv.data[c];
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c)
                    pv.grad[c] += self.grad[r * cols + c] * px.data[r * cols + c];
        }
    });
    const T* px = x.data().data();
    const T* pv = v.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] * pv[c];
    return out;
}

// ---------------------------------------------------------------------------
// Channel/spatial broadcasts for feature maps [C, ...spatial]
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
std::int64_t spatial_count(const Tensor<T>& x) {
    std::int64_t s = 1;
    for (std::size_t i = 1; i < x.ndim(); ++i) s *= x.extent(i);
    return s;
}
}  // namespace detail

template <class T>
Tensor<T> add_channel_vec(const Tensor<T>& x, const Tensor<T>& v) {
    check(v.ndim() == 1 && v.extent(0) == x.extent(0),
          strcat_msg("add_channel_vec: ", shape_str(x.shape()), " + ", shape_str(v.shape())));
    std::int64_t ch = x.extent(0), sp = detail::spatial_count(x);
    auto out = detail::make_op<T>(x.shape(), {x, v}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c) {
                T acc = T(0);
                const T* g = self.grad.data() + c * sp;
                for (std::int64_t s = 0; s < sp; ++s) acc += g[s];
                pv.grad[c] += acc;
            }
        }
    });
    const T* px = x.data().data();
    const T* pv = v.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t s = 0; s < sp; ++s) po[c * sp + s] = px[c * sp + s] + pv[c];
    return out;
}

template <class T>
Tensor<T> mul_channel_vec(const Tensor<T>& x, const Tensor<T>& v) {
    check(v.ndim() == 1 && v.extent(0) == x.extent(0),
          strcat_msg("mul_channel_vec: ", shape_str(x.shape()), " * ", shape_str(v.shape())));
    std::int64_t ch = x.extent(0), sp = detail::spatial_count(x);
    auto out = detail::make_op<T>(x.shape(), {x, v}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c) {
                T vc = pv.data[c];
                for (std::int64_t s = 0; s < sp; ++s)
                    px.grad[c * sp + s] += self.grad[c * sp + s] * vc;
            }
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c) {
                T acc = T(0);
                for (std::int64_t s = 0; s < sp; ++s)
                    acc += self.grad[c * sp + s] * px.data[c * sp + s];
                pv.grad[c] += acc;
            }
        }
    });
    const T* px = x.data().data();
    const T* pv = v.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t s = 0; s < sp; ++s) po[c * sp + s] = px[c * sp + s] * pv[c];
    return out;
}

// x[C,...] * m[...] with the mask broadcast over channels.
template <class T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& m) {
    std::int64_t sp = detail::spatial_count(x);
    check(m.size() == sp, strcat_msg("mul_spatial: mask ", shape_str(m.shape()),
                                     " does not cover spatial part of ", shape_str(x.shape())));
    std::int64_t ch = x.extent(0);
    auto out = detail::make_op<T>(x.shape(), {x, m}, [=](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pm = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c)
                for (std::int64_t s = 0; s < sp; ++s)
                    px.grad[c * sp + s] += self.grad[c * sp + s] * pm.data[s];
        }
        if (pm.requires_grad) {
            pm.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c)
                for (std::int64_t s = 0; s < sp; ++s)
                    pm.grad[s] += self.grad[c * sp + s] * px.data[c * sp + s];
        }
    });
    const T* px = x.data().data();
    const T* pm = m.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t s = 0; s < sp; ++s) po[c * sp + s] = px[c * sp + s] * pm[s];
    return out;
}

// y[c,s] = mc[c] + ms[s]; the Eq.-style combination of a channel mask and a
// spatial mask into a full feature-shaped map.
template <class T>
Tensor<T> broadcast_add_cs(const Tensor<T>& mc, const Tensor<T>& ms, const Shape& feat_shape) {
    std::int64_t ch = feat_shape[0];
    std::int64_t sp = numel(feat_shape) / ch;
    check(mc.size() == ch && ms.size() == sp,
          strcat_msg("broadcast_add_cs: masks ", shape_str(mc.shape()), "/", shape_str(ms.shape()),
                     " vs feature ", shape_str(feat_shape)));
    auto out = detail::make_op<T>(feat_shape, {mc, ms}, [=](Node<T>& self) {
        auto& pc = *self.parents[0];
        auto& ps = *self.parents[1];
        if (pc.requires_grad) {
            pc.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c) {
                T acc = T(0);
                for (std::int64_t s = 0; s < sp; ++s) acc += self.grad[c * sp + s];
                pc.grad[c] += acc;
            }
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            for (std::int64_t c = 0; c < ch; ++c)
                for (std::int64_t s = 0; s < sp; ++s) ps.grad[s] += self.grad[c * sp + s];
        }
    });
    const T* pc = mc.data().data();
    const T* ps = ms.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t s = 0; s < sp; ++s) po[c * sp + s] = pc[c] + ps[s];
    return out;
}

template <class T>
Tensor<T> mean_over_channels(const Tensor<T>& x) {
    std::int64_t ch = x.extent(0), sp = detail::spatial_count(x);
    Shape os = x.shape();
    os[0] = 1;
    auto out = detail::make_op<T>(os, {x}, [=](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        T inv = T(1) / static_cast<T>(ch);
        for (std::int64_t c = 0; c < ch; ++c)
            for (std::int64_t s = 0; s < sp; ++s) p.grad[c * sp + s] += self.grad[s] * inv;
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    T inv = T(1) / static_cast<T>(ch);
    for (std::int64_t s = 0; s < sp; ++s) {
        T acc = T(0);
        for (std::int64_t c = 0; c < ch; ++c) acc += px[c * sp + s];
        po[s] = acc * inv;
    }
    return out;
}

template <class T>
Tensor<T> max_over_channels(const Tensor<T>& x) {
    std::int64_t ch = x.extent(0), sp = detail::spatial_count(x);
    Shape os = x.shape();
    os[0] = 1;
    std::vector<std::int32_t> arg(static_cast<std::size_t>(sp), 0);
    const T* px = x.data().data();
    std::vector<T> vals(static_cast<std::size_t>(sp));
    for (std::int64_t s = 0; s < sp; ++s) {
        T best = px[s];
        std::int32_t bc = 0;
        for (std::int64_t c = 1; c < ch; ++c) {
            T v = px[c * sp + s];
            if (v > best) {
                best = v;
                bc = static_cast<std::int32_t>(c);
            }
        }
        vals[static_cast<std::size_t>(s)] = best;
        arg[static_cast<std::size_t>(s)] = bc;
    }
    auto out = detail::make_op<T>(os, {x}, [sp, arg = std::move(arg)](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::int64_t s = 0; s < sp; ++s)
            p.grad[static_cast<std::int64_t>(arg[static_cast<std::size_t>(s)]) * sp + s] +=
                self.grad[s];
    });
    std::copy(vals.begin(), vals.end(), out.mutable_data().begin());
    return out;
}

// Global average pool over the spatial axes: [C, ...] -> [C].
template <class T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
    std::int64_t ch = x.extent(0), sp = detail::spatial_count(x);
    auto out = detail::make_op<T>({ch}, {x}, [=](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        T inv = T(1) / static_cast<T>(sp);
        for (std::int64_t c = 0; c < ch; ++c) {
            T g = self.grad[c] * inv;
            for (std::int64_t s = 0; s < sp; ++s) p.grad[c * sp + s] += g;
        }
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    T inv = T(1) / static_cast<T>(sp);
    for (std::int64_t c = 0; c < ch; ++c) {
        T acc = T(0);
        for (std::int64_t s = 0; s < sp; ++s) acc += px[c * sp + s];
        po[c] = acc * inv;
    }
    return out;
}

// Concatenate along axis 0 (the channel axis for feature maps).
template <class T>
Tensor<T> concat_ch(const std::vector<Tensor<T>>& xs) {
    check(!xs.empty(), "concat_ch: empty input list");
    Shape os = xs[0].shape();
    std::int64_t total = 0;
    for (const auto& x : xs) {
        check(x.ndim() == os.size(), "concat_ch: rank mismatch");
        for (std::size_t i = 1; i < os.size(); ++i)
            check(x.extent(i) == os[i], strcat_msg("concat_ch: trailing extents differ: ",
                                                   shape_str(x.shape()), " vs ", shape_str(os)));
        total += x.extent(0);
    }
    os[0] = total;
    std::vector<std::int64_t> sizes;
    for (const auto& x : xs) sizes.push_back(x.size());
    auto out = detail::make_op<T>(os, xs, [sizes](Node<T>& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::int64_t i = 0; i < sizes[k]; ++i) p.grad[i] += self.grad[off + i];
            }
            off += sizes[k];
        }
    });
    T* po = out.mutable_data().data();
    std::int64_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(po + off, x.data().data(), sizeof(T) * x.size());
        off += x.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis of a 2-D tensor
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    check(x.ndim() == 2, strcat_msg("softmax_rows: expected 2-D, got ", shape_str(x.shape())));
    std::int64_t rows = x.extent(0), cols = x.extent(1);
    auto out = detail::make_op<T>(x.shape(), {x}, [=](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * cols;
            const T* g = self.grad.data() + r * cols;
            T dot = T(0);
            for (std::int64_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            T* gx = p.grad.data() + r * cols;
            for (std::int64_t c = 0; c < cols; ++c) gx[c] += y[c] * (g[c] - dot);
        }
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * cols;
        T mx = row[0];
        for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        T denom = T(0);
        T* orow = po + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) {
            orow[c] = std::exp(row[c] - mx);
            denom += orow[c];
        }
        T inv = T(1) / denom;
        for (std::int64_t c = 0; c < cols; ++c) orow[c] *= inv;
    }
    return out;
}

// Generic axis softmax; normalizes along `axis` of an arbitrary-rank tensor.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    check(axis < x.ndim(), strcat_msg("softmax: axis ", axis, " out of range for ",
                                      shape_str(x.shape())));
    std::int64_t ax = x.extent(axis);
    std::int64_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.extent(i);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
    auto out = detail::make_op<T>(x.shape(), {x}, [=](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                std::int64_t base = o * ax * inner + i;
                T dot = T(0);
                for (std::int64_t a = 0; a < ax; ++a)
                    dot += self.grad[base + a * inner] * self.data[base + a * inner];
                for (std::int64_t a = 0; a < ax; ++a)
                    p.grad[base + a * inner] +=
                        self.data[base + a * inner] * (self.grad[base + a * inner] - dot);
            }
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            std::int64_t base = o * ax * inner + i;
            T mx = px[base];
            for (std::int64_t a = 1; a < ax; ++a) mx = std::max(mx, px[base + a * inner]);
            T denom = T(0);
            for (std::int64_t a = 0; a < ax; ++a) {
                po[base + a * inner] = std::exp(px[base + a * inner] - mx);
                denom += po[base + a * inner];
            }
            T inv = T(1) / denom;
            for (std::int64_t a = 0; a < ax; ++a) po[base + a * inner] *= inv;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization (pure; affine handled by layer wrappers)
// ---------------------------------------------------------------------------

namespace detail {

// Standardizes `groups` independent slices of length `len`, population variance.
template <class T>
Tensor<T> standardize_groups(const Tensor<T>& x, std::int64_t groups, std::int64_t len, T eps) {
    std::vector<T> inv_std(static_cast<std::size_t>(groups));
    const T* px = x.data().data();
    for (std::int64_t g = 0; g < groups; ++g) {
        const T* xs = px + g * len;
        T mu = T(0);
        for (std::int64_t i = 0; i < len; ++i) mu += xs[i];
        mu /= static_cast<T>(len);
        T var = T(0);
        for (std::int64_t i = 0; i < len; ++i) {
            T d = xs[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(len);
        inv_std[static_cast<std::size_t>(g)] = T(1) / std::sqrt(var + eps);
    }
    auto out = detail::make_op<T>(
        x.shape(), {x}, [groups, len, inv_std](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            T invn = T(1) / static_cast<T>(len);
            for (std::int64_t g = 0; g < groups; ++g) {
                const T* y = self.data.data() + g * len;
                const T* gr = self.grad.data() + g * len;
                T* gx = p.grad.data() + g * len;
                T mean_g = T(0), mean_gy = T(0);
                for (std::int64_t i = 0; i < len; ++i) {
                    mean_g += gr[i];
                    mean_gy += gr[i] * y[i];
                }
                mean_g *= invn;
                mean_gy *= invn;
                T istd = inv_std[static_cast<std::size_t>(g)];
                for (std::int64_t i = 0; i < len; ++i)
                    gx[i] += istd * (gr[i] - mean_g - y[i] * mean_gy);
            }
        });
    T* po = out.mutable_data().data();
    for (std::int64_t g = 0; g < groups; ++g) {
        const T* xs = px + g * len;
        T* ys = po + g * len;
        T mu = T(0);
        for (std::int64_t i = 0; i < len; ++i) mu += xs[i];
        mu /= static_cast<T>(len);
        T istd = inv_std[static_cast<std::size_t>(g)];
        for (std::int64_t i = 0; i < len; ++i) ys[i] = (xs[i] - mu) * istd;
    }
    return out;
}

}  // namespace detail

// Per-channel standardization over the spatial axes of [C, ...].
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
    check(x.ndim() >= 2, strcat_msg("instance_norm: need [C, spatial...], got ",
                                    shape_str(x.shape())));
    return detail::standardize_groups(x, x.extent(0), detail::spatial_count(x), eps);
}

// Per-row standardization over the feature axis of [L, T].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5)) {
    check(x.ndim() == 2, strcat_msg("layer_norm: expected [tokens, features], got ",
                                    shape_str(x.shape())));
    return detail::standardize_groups(x, x.extent(0), x.extent(1), eps);
}

// ---------------------------------------------------------------------------
// 3-D convolution (cross-correlation convention)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
    std::int64_t ci, co, k;
    std::array<std::int64_t, 3> in{}, out{}, stride{};
    std::int64_t pad;
};

inline std::int64_t conv_out_extent(std::int64_t e, std::int64_t k, std::int64_t s,
                                    std::int64_t p) {
    return (e + 2 * p - k) / s + 1;
}

// One tap row of the forward pass: acc[od] += sum_kd wrow[kd] *
// xbase[od + kd - pad], the depth taps fused into a sliding window so each
// output element costs K fused multiply-adds in one pass.
template <class T, int K>
void fwd_taprow(T* acc, const T* xbase, const T* wrow, std::int64_t out_d, std::int64_t in_d,
                std::int64_t pad) {
    const std::int64_t mid_lo = std::min<std::int64_t>(pad, out_d);
    const std::int64_t mid_hi = std::max(mid_lo, out_d - pad);
    auto edge = [&](std::int64_t od) {
        const std::int64_t kd_lo = std::max<std::int64_t>(0, pad - od);
        const std::int64_t kd_hi = std::min<std::int64_t>(K, in_d - od + pad);
        T s = T(0);
        for (std::int64_t kd = kd_lo; kd < kd_hi; ++kd) s += wrow[kd] * xbase[od + kd - pad];
        acc[od] += s;
    };
    for (std::int64_t od = 0; od < mid_lo; ++od) edge(od);
#pragma omp simd
    for (std::int64_t od = mid_lo; od < mid_hi; ++od) {
        const T* xr = xbase + od - pad;
        T s = wrow[0] * xr[0];
        for (int kd = 1; kd < K; ++kd) s += wrow[kd] * xr[kd];
        acc[od] += s;
    }
    for (std::int64_t od = mid_hi; od < out_d; ++od) edge(od);
}

template <class T>
void fwd_taprow_dispatch(T* acc, const T* xbase, const T* wrow, std::int64_t out_d,
                         std::int64_t in_d, std::int64_t pad, std::int64_t k) {
    switch (k) {
        case 1: fwd_taprow<T, 1>(acc, xbase, wrow, out_d, in_d, pad); break;
        case 3: fwd_taprow<T, 3>(acc, xbase, wrow, out_d, in_d, pad); break;
        case 5: fwd_taprow<T, 5>(acc, xbase, wrow, out_d, in_d, pad); break;
        case 7: fwd_taprow<T, 7>(acc, xbase, wrow, out_d, in_d, pad); break;
        default:
            for (std::int64_t kd = 0; kd < k; ++kd) {
                std::int64_t lo = std::max<std::int64_t>(0, pad - kd);
                std::int64_t hi = std::min(out_d, in_d - 1 - kd + pad + 1);
                T wv = wrow[kd];
                const T* xrow = xbase + (kd - pad);
#pragma omp simd
                for (std::int64_t od = lo; od < hi; ++od) acc[od] += wv * xrow[od];
            }
    }
}

// Output rows accumulate in local buffers, blocked four output channels at a
// time so each input row is loaded once per four rows of output work.
// Contribution order per element stays ci -> kh -> kw -> kd.
template <class T>
void conv3d_forward(const T* x, const T* w, T* out, const ConvGeom& g) {
    const auto [H, W, D] = g.in;
    const auto [OH, OW, OD] = g.out;
    const auto [sh, sw, sd] = g.stride;
    const std::int64_t k = g.k, pad = g.pad;
    const std::int64_t k3 = k * k * k;
    std::vector<T> acc(static_cast<std::size_t>(4 * OD));
    std::vector<std::int64_t> od_lo(static_cast<std::size_t>(k)), od_hi(static_cast<std::size_t>(k));
    for (std::int64_t kd = 0; kd < k; ++kd) {
        od_lo[static_cast<std::size_t>(kd)] = std::max<std::int64_t>(0, (pad - kd + sd - 1) / sd);
        od_hi[static_cast<std::size_t>(kd)] = std::min(OD, (D - 1 - kd + pad) / sd + 1);
    }
    for (std::int64_t co0 = 0; co0 < g.co; co0 += 4) {
        const std::int64_t cb = std::min<std::int64_t>(4, g.co - co0);
        for (std::int64_t oh = 0; oh < OH; ++oh) {
            for (std::int64_t ow = 0; ow < OW; ++ow) {
                std::fill(acc.begin(), acc.begin() + cb * OD, T(0));
                for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                    const T* xc = x + ci * H * W * D;
                    const T* wc = w + (co0 * g.ci + ci) * k3;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        std::int64_t ih = oh * sh + kh - pad;
                        if (ih < 0 || ih >= H) continue;
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            std::int64_t iw = ow * sw + kw - pad;
                            if (iw < 0 || iw >= W) continue;
                            const T* xbase = xc + (ih * W + iw) * D;
                            const std::int64_t woff = (kh * k + kw) * k;
                            if (sd == 1) {
                                for (std::int64_t b = 0; b < cb; ++b)
                                    fwd_taprow_dispatch(acc.data() + b * OD, xbase,
                                                        wc + b * g.ci * k3 + woff, OD, D, pad,
                                                        k);
                            } else {
                                for (std::int64_t kd = 0; kd < k; ++kd) {
                                    const std::int64_t lo = od_lo[static_cast<std::size_t>(kd)];
                                    const std::int64_t hi = od_hi[static_cast<std::size_t>(kd)];
                                    const T* xrow = xbase + (kd - pad);
                                    for (std::int64_t b = 0; b < cb; ++b) {
                                        T* ab = acc.data() + b * OD;
                                        T wb = wc[b * g.ci * k3 + woff + kd];
                                        for (std::int64_t od = lo; od < hi; ++od)
                                            ab[od] += wb * xrow[od * sd];
                                    }
                                }
                            }
                        }
                    }
                }
                for (std::int64_t b = 0; b < cb; ++b)
                    std::copy(acc.begin() + b * OD, acc.begin() + (b + 1) * OD,
                              out + ((co0 + b) * OH + oh) * OW * OD + ow * OD);
            }
        }
    }
}

// One tap row of weight gradients: wtap[kd] += sum_od grow[od] *
// xbase[od + kd - pad] for kd = 0..K-1. K accumulators ride one simd pass.
template <class T, int K>
void gw_taprow(const T* grow, const T* xbase, T* wtap, std::int64_t out_d, std::int64_t in_d,
               std::int64_t pad) {
    const std::int64_t mid_lo = std::min<std::int64_t>(pad, out_d);
    const std::int64_t mid_hi = std::max(mid_lo, out_d - pad);
    auto edge = [&](std::int64_t od) {
        T gv = grow[od];
        const std::int64_t kd_lo = std::max<std::int64_t>(0, pad - od);
        const std::int64_t kd_hi = std::min<std::int64_t>(K, in_d - od + pad);
        for (std::int64_t kd = kd_lo; kd < kd_hi; ++kd)
            wtap[kd] += gv * xbase[od + kd - pad];
    };
    for (std::int64_t od = 0; od < mid_lo; ++od) edge(od);
    const T* xr = xbase - pad;
    if constexpr (K == 1) {
        T a0 = T(0);
#pragma omp simd reduction(+ : a0)
        for (std::int64_t od = mid_lo; od < mid_hi; ++od) a0 += grow[od] * xr[od];
        wtap[0] += a0;
    } else if constexpr (K == 3) {
        T a0 = T(0), a1 = T(0), a2 = T(0);
#pragma omp simd reduction(+ : a0, a1, a2)
        for (std::int64_t od = mid_lo; od < mid_hi; ++od) {
            T gv = grow[od];
            a0 += gv * xr[od];
            a1 += gv * xr[od + 1];
            a2 += gv * xr[od + 2];
        }
        wtap[0] += a0;
        wtap[1] += a1;
        wtap[2] += a2;
    } else if constexpr (K == 7) {
        T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0), a4 = T(0), a5 = T(0), a6 = T(0);
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4, a5, a6)
        for (std::int64_t od = mid_lo; od < mid_hi; ++od) {
            T gv = grow[od];
            a0 += gv * xr[od];
            a1 += gv * xr[od + 1];
            a2 += gv * xr[od + 2];
            a3 += gv * xr[od + 3];
            a4 += gv * xr[od + 4];
            a5 += gv * xr[od + 5];
            a6 += gv * xr[od + 6];
        }
        wtap[0] += a0;
        wtap[1] += a1;
        wtap[2] += a2;
        wtap[3] += a3;
        wtap[4] += a4;
        wtap[5] += a5;
        wtap[6] += a6;
    } else {
        for (std::int64_t od = mid_lo; od < mid_hi; ++od) {
            T gv = grow[od];
#pragma omp simd
            for (std::int64_t kd = 0; kd < K; ++kd) wtap[kd] += gv * xr[od + kd];
        }
    }
    for (std::int64_t od = mid_hi; od < out_d; ++od) edge(od);
}

template <class T>
void gw_taprow_dispatch(const T* grow, const T* xbase, T* wtap, std::int64_t out_d,
                        std::int64_t in_d, std::int64_t pad, std::int64_t k) {
    switch (k) {
        case 1: gw_taprow<T, 1>(grow, xbase, wtap, out_d, in_d, pad); break;
        case 3: gw_taprow<T, 3>(grow, xbase, wtap, out_d, in_d, pad); break;
        case 5: gw_taprow<T, 5>(grow, xbase, wtap, out_d, in_d, pad); break;
        case 7: gw_taprow<T, 7>(grow, xbase, wtap, out_d, in_d, pad); break;
        default: {
            for (std::int64_t kd = 0; kd < k; ++kd) {
                std::int64_t lo = std::max<std::int64_t>(0, pad - kd);
                std::int64_t hi = std::min(out_d, in_d - 1 - kd + pad + 1);
                T acc = T(0);
#pragma omp simd reduction(+ : acc)
                for (std::int64_t od = lo; od < hi; ++od)
                    acc += xbase[od + kd - pad] * grow[od];
                wtap[kd] += acc;
            }
        }
    }
}

template <class T>
void conv3d_backward(const T* x, const T* w, const T* gout, T* gx, T* gw, const ConvGeom& g) {
    const auto [H, W, D] = g.in;
    const auto [OH, OW, OD] = g.out;
    const auto [sh, sw, sd] = g.stride;
    const std::int64_t k = g.k, pad = g.pad;
    std::vector<std::int64_t> od_lo(static_cast<std::size_t>(k)), od_hi(static_cast<std::size_t>(k));
    for (std::int64_t kd = 0; kd < k; ++kd) {
        od_lo[static_cast<std::size_t>(kd)] = std::max<std::int64_t>(0, (pad - kd + sd - 1) / sd);
        od_hi[static_cast<std::size_t>(kd)] = std::min(OD, (D - 1 - kd + pad) / sd + 1);
    }
    const std::int64_t k3 = k * k * k;
    if (gw) {
        // weight gradients: keep the gout row hot and accumulate every
        // (ci, tap) dot product into a small local block per co
        std::vector<T> wacc(static_cast<std::size_t>(g.ci * k3));
        for (std::int64_t co = 0; co < g.co; ++co) {
            std::fill(wacc.begin(), wacc.end(), T(0));
            const T* goc = gout + co * OH * OW * OD;
            for (std::int64_t oh = 0; oh < OH; ++oh) {
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                    const T* grow = goc + (oh * OW + ow) * OD;
                    for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                        const T* xc = x + ci * H * W * D;
                        T* wa = wacc.data() + ci * k3;
                        for (std::int64_t kh = 0; kh < k; ++kh) {
                            std::int64_t ih = oh * sh + kh - pad;
                            if (ih < 0 || ih >= H) continue;
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                std::int64_t iw = ow * sw + kw - pad;
                                if (iw < 0 || iw >= W) continue;
                                const T* xbase = xc + (ih * W + iw) * D;
                                T* wtap = wa + (kh * k + kw) * k;
                                if (sd == 1) {
                                    gw_taprow_dispatch(grow, xbase, wtap, OD, D, pad, k);
                                } else {
                                    for (std::int64_t kd = 0; kd < k; ++kd) {
                                        const std::int64_t lo =
                                            od_lo[static_cast<std::size_t>(kd)];
                                        const std::int64_t hi =
                                            od_hi[static_cast<std::size_t>(kd)];
                                        const T* xrow = xbase + (kd - pad);
                                        T acc = T(0);
                                        for (std::int64_t od = lo; od < hi; ++od)
                                            acc += xrow[od * sd] * grow[od];
                                        wtap[kd] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            T* gwc = gw + co * g.ci * k3;
            for (std::size_t i = 0; i < wacc.size(); ++i) gwc[i] += wacc[i];
        }
    }
    if (!gx) return;
    if (sh == 1 && sw == 1 && sd == 1 && k <= 16) {
        // input gradients, gather form: each gx row is the full correlation
        // of gout with the flipped kernel; four input channels share each
        // gout row load
        std::vector<T> acc(static_cast<std::size_t>(4 * D));
        for (std::int64_t ci0 = 0; ci0 < g.ci; ci0 += 4) {
            const std::int64_t cb = std::min<std::int64_t>(4, g.ci - ci0);
            for (std::int64_t ih = 0; ih < H; ++ih) {
                for (std::int64_t iw = 0; iw < W; ++iw) {
                    std::fill(acc.begin(), acc.begin() + cb * D, T(0));
                    for (std::int64_t co = 0; co < g.co; ++co) {
                        const T* goc = gout + co * OH * OW * OD;
                        const T* wc = w + (co * g.ci + ci0) * k3;
                        for (std::int64_t kh = 0; kh < k; ++kh) {
                            std::int64_t oh = ih + pad - kh;
                            if (oh < 0 || oh >= OH) continue;
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                std::int64_t ow = iw + pad - kw;
                                if (ow < 0 || ow >= OW) continue;
                                const T* grow = goc + (oh * OW + ow) * OD;
                                const std::int64_t woff = (kh * k + kw) * k;
                                // correlation with the depth-flipped taps:
                                // acc[id] += sum_kd w[kd] * g[id + pad - kd]
                                T wflip[16];
                                for (std::int64_t b = 0; b < cb; ++b) {
                                    const T* wrow = wc + b * k3 + woff;
                                    for (std::int64_t j = 0; j < k; ++j)
                                        wflip[j] = wrow[k - 1 - j];
                                    fwd_taprow_dispatch(acc.data() + b * D, grow, wflip,
                                                        /*out_d=*/D, /*in_d=*/OD,
                                                        /*pad=*/k - 1 - pad, k);
                                }
                            }
                        }
                    }
                    for (std::int64_t b = 0; b < cb; ++b) {
                        T* gxrow = gx + ((ci0 + b) * H + ih) * W * D + iw * D;
                        const T* ab = acc.data() + b * D;
                        for (std::int64_t id = 0; id < D; ++id) gxrow[id] += ab[id];
                    }
                }
            }
        }
    } else {
        // strided case (stem convolutions): scatter form
        for (std::int64_t co = 0; co < g.co; ++co) {
            const T* goc = gout + co * OH * OW * OD;
            for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                const T* wc = w + (co * g.ci + ci) * k * k * k;
                T* gxc = gx + ci * H * W * D;
                for (std::int64_t kh = 0; kh < k; ++kh) {
                    std::int64_t oh_lo = std::max<std::int64_t>(0, (pad - kh + sh - 1) / sh);
                    std::int64_t oh_hi = std::min(OH, (H - 1 - kh + pad) / sh + 1);
                    for (std::int64_t kw = 0; kw < k; ++kw) {
                        std::int64_t ow_lo = std::max<std::int64_t>(0, (pad - kw + sw - 1) / sw);
                        std::int64_t ow_hi = std::min(OW, (W - 1 - kw + pad) / sw + 1);
                        for (std::int64_t kd = 0; kd < k; ++kd) {
                            const std::int64_t lo = od_lo[static_cast<std::size_t>(kd)];
                            const std::int64_t hi = od_hi[static_cast<std::size_t>(kd)];
                            T wv = wc[(kh * k + kw) * k + kd];
                            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                std::int64_t ih = oh * sh + kh - pad;
                                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                    std::int64_t iw = ow * sw + kw - pad;
                                    T* gxrow = gxc + (ih * W + iw) * D + (kd - pad);
                                    const T* grow = goc + (oh * OW + ow) * OD;
                                    for (std::int64_t od = lo; od < hi; ++od)
                                        gxrow[od * sd] += wv * grow[od];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, std::array<std::int64_t, 3> stride,
                 std::int64_t padding) {
    check(x.ndim() == 4, strcat_msg("conv3d: input must be [C,H,W,D], got ",
                                    shape_str(x.shape())));
    check(w.ndim() == 5 && w.extent(2) == w.extent(3) && w.extent(3) == w.extent(4),
          strcat_msg("conv3d: weight must be [Co,Ci,k,k,k], got ", shape_str(w.shape())));
    check(w.extent(2) % 2 == 1, strcat_msg("conv3d: kernel extent must be odd, got ",
                                           w.extent(2)));
    check(w.extent(1) == x.extent(0),
          strcat_msg("conv3d: input channels ", x.extent(0), " do not match weight ",
                     shape_str(w.shape())));
    detail::ConvGeom g;
    g.ci = x.extent(0);
    g.co = w.extent(0);
    g.k = w.extent(2);
    g.in = {x.extent(1), x.extent(2), x.extent(3)};
    g.stride = stride;
    g.pad = padding;
    for (int a = 0; a < 3; ++a) {
        g.out[a] = detail::conv_out_extent(g.in[a], g.k, stride[a], padding);
        check(g.out[a] > 0, strcat_msg("conv3d: non-positive output extent on axis ", a,
                                       " for input ", shape_str(x.shape()), ", kernel ", g.k,
                                       ", stride ", stride[a], ", padding ", padding));
    }
    auto out = detail::make_op<T>({g.co, g.out[0], g.out[1], g.out[2]}, {x, w},
                                  [g](Node<T>& self) {
                                      auto& px = *self.parents[0];
                                      auto& pw = *self.parents[1];
                                      T* gx = nullptr;
                                      T* gw = nullptr;
                                      if (px.requires_grad) {
                                          px.ensure_grad();
                                          gx = px.grad.data();
                                      }
                                      if (pw.requires_grad) {
                                          pw.ensure_grad();
                                          gw = pw.grad.data();
                                      }
                                      detail::conv3d_backward(px.data.data(), pw.data.data(),
                                                              self.grad.data(), gx, gw, g);
                                  });
    detail::conv3d_forward(x.data().data(), w.data().data(), out.mutable_data().data(), g);
    return out;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride,
                 std::int64_t padding) {
    return conv3d(x, w, {stride, stride, stride}, padding);
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

// 2x2x2 max pooling with stride 2; extents must be even.
template <class T>
Tensor<T> maxpool2(const Tensor<T>& x) {
    check(x.ndim() == 4, strcat_msg("maxpool2: input must be [C,H,W,D], got ",
                                    shape_str(x.shape())));
    const std::int64_t ch = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
    check(H % 2 == 0 && W % 2 == 0 && D % 2 == 0,
          strcat_msg("maxpool2: extents must be even, got ", shape_str(x.shape())));
    const std::int64_t OH = H / 2, OW = W / 2, OD = D / 2;
    std::vector<std::int64_t> arg(static_cast<std::size_t>(ch * OH * OW * OD));
    const T* px = x.data().data();
    std::vector<T> vals(arg.size());
    std::int64_t o = 0;
    for (std::int64_t c = 0; c < ch; ++c) {
        const T* xc = px + c * H * W * D;
        for (std::int64_t oh = 0; oh < OH; ++oh)
            for (std::int64_t ow = 0; ow < OW; ++ow)
                for (std::int64_t od = 0; od < OD; ++od, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t bidx = 0;
                    for (std::int64_t dh = 0; dh < 2; ++dh)
                        for (std::int64_t dw = 0; dw < 2; ++dw)
                            for (std::int64_t dd = 0; dd < 2; ++dd) {
                                std::int64_t idx =
                                    ((2 * oh + dh) * W + (2 * ow + dw)) * D + 2 * od + dd;
                                if (xc[idx] > best) {
                                    best = xc[idx];
                                    bidx = c * H * W * D + idx;
                                }
                            }
                    vals[static_cast<std::size_t>(o)] = best;
                    arg[static_cast<std::size_t>(o)] = bidx;
                }
    }
    auto out = detail::make_op<T>({ch, OH, OW, OD}, {x}, [arg = std::move(arg)](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[arg[i]] += self.grad[i];
    });
    std::copy(vals.begin(), vals.end(), out.mutable_data().begin());
    return out;
}

namespace detail {

// Index-aligned mapping: source position = target index * (src/dst), clamped.
// Downsampling by an integer factor lands exactly on source samples, so an
// upsample-then-downsample round trip is the identity.
struct LinCoef {
    std::int64_t i0, i1;
    double t;
};

inline LinCoef lin_coef(std::int64_t o, std::int64_t src, std::int64_t dst) {
    double s = static_cast<double>(o) * static_cast<double>(src) / static_cast<double>(dst);
    s = std::min(s, static_cast<double>(src - 1));
    std::int64_t i0 = static_cast<std::int64_t>(s);
    std::int64_t i1 = std::min(i0 + 1, src - 1);
    return {i0, i1, s - static_cast<double>(i0)};
}

}  // namespace detail

template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& x, std::array<std::int64_t, 3> target) {
    check(x.ndim() == 4, strcat_msg("resample_trilinear: input must be [C,H,W,D], got ",
                                    shape_str(x.shape())));
    for (auto e : target) check(e > 0, "resample_trilinear: non-positive target extent");
    const std::int64_t ch = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
    const auto [OH, OW, OD] = target;
    std::vector<detail::LinCoef> ch_(static_cast<std::size_t>(OH)), cw_(static_cast<std::size_t>(OW)),
        cd_(static_cast<std::size_t>(OD));
    for (std::int64_t i = 0; i < OH; ++i) ch_[static_cast<std::size_t>(i)] = detail::lin_coef(i, H, OH);
    for (std::int64_t i = 0; i < OW; ++i) cw_[static_cast<std::size_t>(i)] = detail::lin_coef(i, W, OW);
    for (std::int64_t i = 0; i < OD; ++i) cd_[static_cast<std::size_t>(i)] = detail::lin_coef(i, D, OD);
    auto out = detail::make_op<T>(
        {ch, OH, OW, OD}, {x}, [=](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            std::int64_t o = 0;
            for (std::int64_t c = 0; c < ch; ++c) {
                T* gx = p.grad.data() + c * H * W * D;
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                    const auto& a = ch_[static_cast<std::size_t>(oh)];
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        const auto& b = cw_[static_cast<std::size_t>(ow)];
                        for (std::int64_t od = 0; od < OD; ++od, ++o) {
                            const auto& d = cd_[static_cast<std::size_t>(od)];
                            T g = self.grad[o];
                            for (int ah = 0; ah < 2; ++ah)
                                for (int aw = 0; aw < 2; ++aw)
                                    for (int ad = 0; ad < 2; ++ad) {
                                        double wgt = (ah ? a.t : 1.0 - a.t) *
                                                     (aw ? b.t : 1.0 - b.t) *
                                                     (ad ? d.t : 1.0 - d.t);
                                        if (wgt == 0.0) continue;
                                        std::int64_t idx = ((ah ? a.i1 : a.i0) * W +
                                                            (aw ? b.i1 : b.i0)) *
                                                               D +
                                                           (ad ? d.i1 : d.i0);
                                        gx[idx] += static_cast<T>(wgt) * g;
                                    }
                        }
                    }
                }
            }
        });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    std::int64_t o = 0;
    for (std::int64_t c = 0; c < ch; ++c) {
        const T* xc = px + c * H * W * D;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
            const auto& a = ch_[static_cast<std::size_t>(oh)];
            for (std::int64_t ow = 0; ow < OW; ++ow) {
                const auto& b = cw_[static_cast<std::size_t>(ow)];
                for (std::int64_t od = 0; od < OD; ++od, ++o) {
                    const auto& d = cd_[static_cast<std::size_t>(od)];
                    double acc = 0.0;
                    for (int ah = 0; ah < 2; ++ah)
                        for (int aw = 0; aw < 2; ++aw)
                            for (int ad = 0; ad < 2; ++ad) {
                                double wgt = (ah ? a.t : 1.0 - a.t) * (aw ? b.t : 1.0 - b.t) *
                                             (ad ? d.t : 1.0 - d.t);
                                if (wgt == 0.0) continue;
                                std::int64_t idx =
                                    ((ah ? a.i1 : a.i0) * W + (aw ? b.i1 : b.i0)) * D +
                                    (ad ? d.i1 : d.i0);
                                acc += wgt * static_cast<double>(xc[idx]);
                            }
                    po[o] = static_cast<T>(acc);
                }
            }
        }
    }
    return out;
}

enum class ResampleKind { kMaxPool2, kTrilinear };

template <class T>
Tensor<T> resample(const Tensor<T>& x, ResampleKind kind,
                   std::array<std::int64_t, 3> target = {0, 0, 0}) {
    if (kind == ResampleKind::kMaxPool2) return maxpool2(x);
    return resample_trilinear(x, target);
}

}  // namespace comma
