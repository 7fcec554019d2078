#pragma once

#include "comma/coords.hpp"
#include "comma/ssm.hpp"

namespace comma {

struct CamConfig {
    std::vector<std::int64_t> stage_local_token_sizes{1, 2, 3, 6};  // deepest -> shallowest
    std::int64_t global_token_size = 8;
    std::int64_t attention_dim = 32;  // T
    std::int64_t mask_conv_kernel = 7;
    std::int64_t channel_bottleneck = 4;  // r in the channel attention
    bool lfe_softmax = true;              // row-softmax on the attention scores
    bool bounded_channel_mask = false;    // extra sigmoid on M_c (off = as printed)
    bool literal_coords = false;          // local token coords from feature extents verbatim
};

template <class T>
struct AttentionMasks {
    Tensor<T> channel;  // M_c [C]
    Tensor<T> spatial;  // M_s [h,w,d]
    Tensor<T> pixel;    // M_p [h,w,d]
};

// One Coordinate-aware Modulated block: cross-attention of local tokens onto
// global tokens (both carrying the shared positional embedding) plus an
// attention-modulated blend of the local feature with the coordinate-aligned
// global crop.
template <class T>
struct CamBlock {
    // Coord-LFE
    Linear<T> embed_local;   // C*pL^3 -> T
    Linear<T> embed_global;  // Cg*pG^3 -> T
    Linear<T> wq, wk, wv;    // T -> T
    Linear<T> out_proj;      // T -> C*pL^3
    // Coord-GLF
    Conv3dLayer<T> glf_proj;   // 1^3, Cg -> C, aligns the crop's channels
    Linear<T> ca_fc1, ca_fc2;  // C -> C/r -> C
    Conv3dLayer<T> sa_conv;    // k^3, 2 -> 1
    Conv3dLayer<T> pa_conv;    // k^3, 2C -> 1
    Conv3dLayer<T> fuse_conv;  // 1^3, C -> C
    // Eq-5 style combination
    Conv3dLayer<T> out_conv;  // 1^3, 2C -> C

    std::int64_t local_channels = 0, global_channels = 0;
    std::int64_t p_local = 1, p_global = 8;
    CamConfig cfg;

    static CamBlock make(ParamRegistry<T>& reg, const std::string& name, std::int64_t c_local,
                         std::int64_t c_global, std::int64_t p_local, const CamConfig& cfg) {
        CamBlock b;
        b.cfg = cfg;
        b.local_channels = c_local;
        b.global_channels = c_global;
        b.p_local = p_local;
        b.p_global = cfg.global_token_size;
        const std::int64_t t = cfg.attention_dim;
        const std::int64_t local_tok = c_local * p_local * p_local * p_local;
        const std::int64_t global_tok = c_global * b.p_global * b.p_global * b.p_global;
        b.embed_local = Linear<T>::make(reg, name + ".lfe.embed_local", local_tok, t);
        b.embed_global = Linear<T>::make(reg, name + ".lfe.embed_global", global_tok, t);
        b.wq = Linear<T>::make(reg, name + ".lfe.wq", t, t);
        b.wk = Linear<T>::make(reg, name + ".lfe.wk", t, t);
        b.wv = Linear<T>::make(reg, name + ".lfe.wv", t, t);
        b.out_proj = Linear<T>::make(reg, name + ".lfe.out_proj", t, local_tok);
        b.glf_proj = Conv3dLayer<T>::make(reg, name + ".glf.proj", c_global, c_local, 1);
        std::int64_t mid = std::max<std::int64_t>(1, c_local / cfg.channel_bottleneck);
        b.ca_fc1 = Linear<T>::make(reg, name + ".glf.ca_fc1", c_local, mid);
        b.ca_fc2 = Linear<T>::make(reg, name + ".glf.ca_fc2", mid, c_local);
        b.sa_conv = Conv3dLayer<T>::make(reg, name + ".glf.sa_conv", 2, 1, cfg.mask_conv_kernel);
        b.pa_conv = Conv3dLayer<T>::make(reg, name + ".glf.pa_conv", 2 * c_local, 1,
                                         cfg.mask_conv_kernel);
        b.fuse_conv = Conv3dLayer<T>::make(reg, name + ".glf.fuse_conv", c_local, c_local, 1);
        b.out_conv = Conv3dLayer<T>::make(reg, name + ".out_conv", 2 * c_local, c_local, 1);
        return b;
    }

    // ---- Coord-LFE -------------------------------------------------------

    // Local-feature token coordinates. The effective mode measures the patch
    // footprint in the full-image frame (what the crop actually covers); the
    // literal mode divides the raw feature extents by the global feature
    // extents as the formula is printed.
    TokenCoordGrid local_grid(const PatchRecord& rec, std::array<std::int64_t, 3> local_shape,
                              std::array<std::int64_t, 3> global_feat_shape) const {
        if (cfg.literal_coords)
            return token_coords_local(rec.center, global_feat_shape, local_shape, p_local);
        std::array<std::int64_t, 3> n{local_shape[0] / p_local, local_shape[1] / p_local,
                                      local_shape[2] / p_local};
        return token_coords_box(rec.center, rec.half_extents(), n);
    }

    Tensor<T> coord_lfe(const Tensor<T>& f_local, const Tensor<T>& f_global,
                        const PosEmbed<T>& pos, const PatchRecord& rec,
                        const TokenCoordGrid& global_grid) const {
        auto seq_l = tokenize(f_local, p_local);
        auto seq_g = tokenize(f_global, p_global);
        std::array<std::int64_t, 3> lshape{f_local.extent(1), f_local.extent(2),
                                           f_local.extent(3)};
        std::array<std::int64_t, 3> gshape{f_global.extent(1), f_global.extent(2),
                                           f_global.extent(3)};
        auto lgrid = local_grid(rec, lshape, gshape);
        auto tok_l = add(embed_local.forward(seq_l.tokens), pos.embed(lgrid));
        auto tok_g = add(embed_global.forward(seq_g.tokens), pos.embed(global_grid));
        auto q = wq.forward(tok_l);
        auto k = wk.forward(tok_g);
        auto v = wv.forward(tok_g);
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.extent(1))));
        auto scores = scale(matmul(q, k, false, true), inv_sqrt);
        auto attn = cfg.lfe_softmax ? softmax_rows(scores) : scores;
        auto mixed = out_proj.forward(matmul(attn, v));
        TokenSequence<T> out_seq = seq_l;
        out_seq.tokens = mixed;
        return detokenize(out_seq);
    }

    // ---- Coord-GLF masks -------------------------------------------------

    Tensor<T> channel_attention(const Tensor<T>& f) const {
        auto pooled = reshape(spatial_mean(f), {1, f.extent(0)});
        auto mc = reshape(ca_fc2.forward(relu(ca_fc1.forward(pooled))), {f.extent(0)});
        if (cfg.bounded_channel_mask) mc = sigmoid(mc);
        return mc;
    }

    Tensor<T> spatial_attention(const Tensor<T>& f) const {
        auto stacked = concat_ch<T>({mean_over_channels(f), max_over_channels(f)});
        auto m = sigmoid(sa_conv.forward(stacked));
        return reshape(m, {f.extent(1), f.extent(2), f.extent(3)});
    }

    Tensor<T> pixel_attention(const Tensor<T>& mc, const Tensor<T>& ms, const Tensor<T>& f) const {
        auto combined = broadcast_add_cs(mc, ms, f.shape());
        auto m = sigmoid(pa_conv.forward(concat_ch<T>({combined, f})));
        return reshape(m, {f.extent(1), f.extent(2), f.extent(3)});
    }

    AttentionMasks<T> attention_masks(const Tensor<T>& f) const {
        AttentionMasks<T> m;
        m.channel = channel_attention(f);
        m.spatial = spatial_attention(f);
        m.pixel = pixel_attention(m.channel, m.spatial, f);
        return m;
    }

    // ---- Coord-GLF -------------------------------------------------------

    // f_pg must already be shaped like f_local (crop + channel projection).
    Tensor<T> coord_glf(const Tensor<T>& f_local, const Tensor<T>& f_pg) const {
        check(f_local.shape() == f_pg.shape(),
              strcat_msg("coord_glf: shapes differ, ", shape_str(f_local.shape()), " vs ",
                         shape_str(f_pg.shape())));
        auto fused = add(f_local, f_pg);
        auto masks = attention_masks(fused);
        auto blend = add(mul_spatial(f_pg, masks.pixel),
                         mul_spatial(f_local, affine(masks.pixel, T(-1), T(1))));
        return add(fuse_conv.forward(blend), f_local);
    }

    Tensor<T> aligned_global_crop(const Tensor<T>& f_global, const PatchRecord& rec,
                                  std::array<std::int64_t, 3> target) const {
        auto crop = crop_global_at(f_global, rec.center, rec.half_extents(), target);
        return glf_proj.forward(crop);
    }

    // ---- combined forward --------------------------------------------------

    Tensor<T> forward(const Tensor<T>& f_local, const Tensor<T>& f_global,
                      const PosEmbed<T>& pos, const PatchRecord& rec,
                      const TokenCoordGrid& global_grid, bool enable_lfe,
                      bool enable_glf) const {
        if (!enable_lfe && !enable_glf) return f_local;
        Tensor<T> f_lfe = f_local;
        Tensor<T> f_glf = f_local;
        if (enable_lfe) f_lfe = coord_lfe(f_local, f_global, pos, rec, global_grid);
        if (enable_glf) {
            std::array<std::int64_t, 3> target{f_local.extent(1), f_local.extent(2),
                                               f_local.extent(3)};
            f_glf = coord_glf(f_local, aligned_global_crop(f_global, rec, target));
        }
        return out_conv.forward(concat_ch<T>({f_lfe, f_glf}));
    }
};

}  // namespace comma
