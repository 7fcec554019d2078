#pragma once

#include "comma/cam.hpp"

namespace comma {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean binary cross-entropy on sigmoid probabilities, computed from logits in
// the numerically stable form max(x,0) - x t + log(1 + e^-|x|).
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
    check(logits.shape() == target.shape(),
          strcat_msg("bce_with_logits: shape mismatch ", shape_str(logits.shape()), " vs ",
                     shape_str(target.shape())));
    const std::int64_t n = logits.size();
    auto out = detail::make_op<T>({1}, {logits, target}, [n](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pt = *self.parents[1];
        T g = self.grad[0] / static_cast<T>(n);
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                px.grad[i] += g * (detail::sigmoid_scalar(px.data[i]) - pt.data[i]);
        }
        if (pt.requires_grad) {
            pt.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) pt.grad[i] += g * (-px.data[i]);
        }
    });
    const T* x = logits.data().data();
    const T* t = target.data().data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double xv = static_cast<double>(x[i]);
        acc += std::max(xv, 0.0) - xv * static_cast<double>(t[i]) +
               std::log1p(std::exp(-std::abs(xv)));
    }
    out.mutable_data()[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

// Soft Dice loss on sigmoid probabilities: 1 - (2 sum(p t) + eps) /
// (sum(p) + sum(t) + eps).
template <class T>
Tensor<T> dice_loss_with_logits(const Tensor<T>& logits, const Tensor<T>& target,
                                T eps = T(1e-5)) {
    check(logits.shape() == target.shape(),
          strcat_msg("dice_loss_with_logits: shape mismatch ", shape_str(logits.shape()), " vs ",
                     shape_str(target.shape())));
    const std::int64_t n = logits.size();
    std::vector<T> probs(static_cast<std::size_t>(n));
    const T* x = logits.data().data();
    const T* t = target.data().data();
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        T p = detail::sigmoid_scalar(x[i]);
        probs[static_cast<std::size_t>(i)] = p;
        inter += static_cast<double>(p) * static_cast<double>(t[i]);
        psum += static_cast<double>(p);
        tsum += static_cast<double>(t[i]);
    }
    const double num = 2.0 * inter + static_cast<double>(eps);
    const double den = psum + tsum + static_cast<double>(eps);
    auto out = detail::make_op<T>(
        {1}, {logits, target}, [n, num, den, probs = std::move(probs)](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pt = *self.parents[1];
            if (!px.requires_grad) return;
            px.ensure_grad();
            T g = self.grad[0];
            for (std::int64_t i = 0; i < n; ++i) {
                double p = static_cast<double>(probs[static_cast<std::size_t>(i)]);
                double tv = static_cast<double>(pt.data[i]);
                // d loss / d p_i = -(2 t_i den - num) / den^2
                double dp = -(2.0 * tv * den - num) / (den * den);
                px.grad[i] += g * static_cast<T>(dp * p * (1.0 - p));
            }
        });
    out.mutable_data()[0] = static_cast<T>(1.0 - num / den);
    return out;
}

// Dice + BCE on the same prediction/target pair.
template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& target, T eps = T(1e-5)) {
    return add(dice_loss_with_logits(logits, target, eps), bce_with_logits(logits, target));
}

// L = L_local + lambda * L_global
template <class T>
Tensor<T> total_loss(const Tensor<T>& l_local, const Tensor<T>& l_global, T lambda) {
    return add(l_local, scale(l_global, lambda));
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AblationFlags {
    bool lfe = true;
    bool glf = true;
    bool global_loss = true;
    bool randomize_coords = false;
};

struct CommaConfig {
    std::array<std::int64_t, 3> patch_shape{96, 96, 96};
    std::array<std::int64_t, 3> global_resize{256, 256, 96};
    std::int64_t base_channels = 32;
    std::array<std::int64_t, 4> stage_channels{64, 128, 256, 320};
    std::array<std::int64_t, 2> stem_channels{16, 32};
    CamConfig cam;
    CcMambaConfig ccmamba;
    double lambda_global = 0.25;
    std::int64_t iterations = 25000;
    std::int64_t batch_size = 2;
    double lr = 0.01;
    double momentum = 0.9;
    double dice_eps = 1e-5;
    double infer_overlap = 0.5;
    double fg_patch_fraction = 0.5;  // patches forced to contain foreground
    std::uint64_t seed = 1234;
    std::int64_t val_interval = 250;
    std::int64_t checkpoint_interval = 1000;
    AblationFlags ablate;

    std::array<std::int64_t, 3> global_feat_shape() const {
        return {global_resize[0] / 2, global_resize[1] / 2, global_resize[2]};
    }

    void validate() const {
        check(lambda_global >= 0.0, "config: lambda must be non-negative");
        check(cam.stage_local_token_sizes.size() == 4, "config: need 4 stage token sizes");
        for (int a = 0; a < 3; ++a) {
            check(patch_shape[a] % 16 == 0,
                  strcat_msg("config: patch extent ", patch_shape[a],
                             " must be divisible by 16 (4 halvings)"));
            check(global_resize[a] % 2 == 0, "config: global resize extents must be even");
        }
        auto gf = global_feat_shape();
        for (int a = 0; a < 3; ++a) {
            check(gf[a] % cam.global_token_size == 0,
                  strcat_msg("config: global feature extent ", gf[a],
                             " not divisible by global token size ", cam.global_token_size));
            check(gf[a] % ccmamba.token_size == 0,
                  strcat_msg("config: global feature extent ", gf[a],
                             " not divisible by ccmamba token size ", ccmamba.token_size));
        }
        for (int s = 0; s < 4; ++s) {
            std::int64_t p = cam.stage_local_token_sizes[static_cast<std::size_t>(s)];
            for (int a = 0; a < 3; ++a) {
                std::int64_t ext = patch_shape[a] >> (3 - s);
                check(ext % p == 0, strcat_msg("config: decoder stage ", s, " extent ", ext,
                                               " not divisible by token size ", p));
            }
        }
    }
};

// Full-scale defaults as published.
inline CommaConfig paper_config() { return CommaConfig{}; }

// Quarter-width configuration that trains on a CPU in minutes; used by the
// acceptance suite.
inline CommaConfig desk_config() {
    CommaConfig c;
    c.patch_shape = {32, 32, 32};
    c.global_resize = {64, 64, 32};
    c.base_channels = 8;
    c.stage_channels = {16, 32, 64, 80};
    c.stem_channels = {4, 8};
    c.cam.stage_local_token_sizes = {1, 2, 2, 4};
    c.batch_size = 1;
    c.iterations = 2000;
    c.val_interval = 100;
    c.checkpoint_interval = 500;
    return c;
}

// Minimal configuration for ablation sweeps (many short runs).
inline CommaConfig tiny_config() {
    CommaConfig c;
    c.patch_shape = {16, 16, 16};
    c.global_resize = {32, 32, 16};
    c.base_channels = 4;
    c.stage_channels = {8, 16, 32, 40};
    c.stem_channels = {2, 4};
    c.cam.stage_local_token_sizes = {1, 1, 2, 2};
    c.cam.attention_dim = 16;
    c.ccmamba.compressed_dim = 16;
    c.ccmamba.layers = 2;
    c.ccmamba.state_dim = 8;
    c.batch_size = 1;
    c.iterations = 300;
    c.val_interval = 100;
    c.checkpoint_interval = 1000;
    return c;
}

// ---------------------------------------------------------------------------
// Volume <-> tensor bridges ([1,H,W,D] tensors are D-fastest; volumes are
// x-fastest)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> volume_to_tensor(const Volume& v) {
    const auto [H, W, D] = v.extents;
    std::vector<T> data(static_cast<std::size_t>(H * W * D));
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t k = 0; k < D; ++k)
                data[static_cast<std::size_t>((i * W + j) * D + k)] =
                    static_cast<T>(v.at(i, j, k));
    return Tensor<T>::from_data({1, H, W, D}, std::move(data));
}

template <class T>
Tensor<T> mask_to_tensor(const BinaryMask3D& m) {
    const auto [H, W, D] = m.extents;
    std::vector<T> data(static_cast<std::size_t>(H * W * D));
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t k = 0; k < D; ++k)
                data[static_cast<std::size_t>((i * W + j) * D + k)] =
                    static_cast<T>(m.at(i, j, k));
    return Tensor<T>::from_data({1, H, W, D}, std::move(data));
}

template <class T>
Volume tensor_to_volume(const Tensor<T>& t) {
    check(t.ndim() == 4 && t.extent(0) == 1,
          strcat_msg("tensor_to_volume: expected [1,H,W,D], got ", shape_str(t.shape())));
    Volume v = Volume::zeros({t.extent(1), t.extent(2), t.extent(3)});
    const auto [H, W, D] = v.extents;
    const T* p = t.data().data();
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t k = 0; k < D; ++k)
                v.at(i, j, k) = static_cast<float>(p[(i * W + j) * D + k]);
    return v;
}

// Nearest-voxel downsampling of a mask onto a coarser grid (global loss
// target).
template <class T>
Tensor<T> mask_to_grid_tensor(const BinaryMask3D& m, std::array<std::int64_t, 3> grid) {
    std::vector<T> data(static_cast<std::size_t>(grid[0] * grid[1] * grid[2]));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < grid[0]; ++i)
        for (std::int64_t j = 0; j < grid[1]; ++j)
            for (std::int64_t k = 0; k < grid[2]; ++k, ++o) {
                auto src = [&](std::int64_t g, std::int64_t ge, std::int64_t e) {
                    auto v = static_cast<std::int64_t>(
                        (static_cast<double>(g) + 0.5) * static_cast<double>(e) /
                        static_cast<double>(ge));
                    return std::clamp<std::int64_t>(v, 0, e - 1);
                };
                data[o] = static_cast<T>(m.at(src(i, grid[0], m.extents[0]),
                                              src(j, grid[1], m.extents[1]),
                                              src(k, grid[2], m.extents[2])));
            }
    return Tensor<T>::from_data({1, grid[0], grid[1], grid[2]}, std::move(data));
}

// ---------------------------------------------------------------------------
// Network blocks
// ---------------------------------------------------------------------------

template <class T>
struct ConvModule {  // conv(k3) + InstanceNorm + LeakyReLU
    Conv3dLayer<T> conv;
    InstanceNormLayer<T> norm;

    static ConvModule make(ParamRegistry<T>& reg, const std::string& name, std::int64_t ci,
                           std::int64_t co, std::array<std::int64_t, 3> stride = {1, 1, 1}) {
        ConvModule m;
        m.conv = Conv3dLayer<T>::make(reg, name + ".conv", ci, co, 3, stride);
        m.norm = InstanceNormLayer<T>::make(reg, name + ".norm", co);
        return m;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return leaky_relu(norm.forward(conv.forward(x)), T(0.01));
    }
};

template <class T>
struct LocalEncoder {
    ConvModule<T> initial;
    std::vector<ConvModule<T>> stages;  // 4, conv then pool

    struct Out {
        Tensor<T> bottleneck;
        std::vector<Tensor<T>> skips;  // pre-pool feature of each stage
    };

    static LocalEncoder make(ParamRegistry<T>& reg, const std::string& name,
                             const CommaConfig& cfg) {
        LocalEncoder e;
        e.initial = ConvModule<T>::make(reg, name + ".initial", 1, cfg.base_channels);
        std::int64_t prev = cfg.base_channels;
        for (int s = 0; s < 4; ++s) {
            e.stages.push_back(ConvModule<T>::make(reg, strcat_msg(name, ".stage", s), prev,
                                                   cfg.stage_channels[static_cast<std::size_t>(s)]));
            prev = cfg.stage_channels[static_cast<std::size_t>(s)];
        }
        return e;
    }

    Out forward(const Tensor<T>& x) const {
        Out out;
        auto h = initial.forward(x);
        for (const auto& stage : stages) {
            h = stage.forward(h);
            out.skips.push_back(h);
            h = maxpool2(h);
        }
        out.bottleneck = h;
        return out;
    }
};

template <class T>
struct LocalDecoder {
    std::vector<ConvModule<T>> convs;  // 4, after upsample+skip concat
    std::vector<CamBlock<T>> cams;     // 4, deepest first
    Conv3dLayer<T> head;               // 1^3 -> single-channel logits

    static LocalDecoder make(ParamRegistry<T>& reg, const std::string& name,
                             const CommaConfig& cfg) {
        LocalDecoder d;
        const auto& st = cfg.stage_channels;
        std::array<std::int64_t, 4> out_ch{st[2], st[1], st[0], cfg.base_channels};
        std::int64_t prev = st[3];
        for (int s = 0; s < 4; ++s) {
            std::int64_t skip_ch = st[static_cast<std::size_t>(3 - s)];
            d.convs.push_back(ConvModule<T>::make(reg, strcat_msg(name, ".stage", s),
                                                  prev + skip_ch,
                                                  out_ch[static_cast<std::size_t>(s)]));
            d.cams.push_back(CamBlock<T>::make(
                reg, strcat_msg(name, ".cam", s), out_ch[static_cast<std::size_t>(s)],
                cfg.stem_channels[1], cfg.cam.stage_local_token_sizes[static_cast<std::size_t>(s)],
                cfg.cam));
            prev = out_ch[static_cast<std::size_t>(s)];
        }
        d.head = Conv3dLayer<T>::make(reg, name + ".head", cfg.base_channels, 1, 1);
        return d;
    }

    Tensor<T> forward(const typename LocalEncoder<T>::Out& enc, const Tensor<T>& f_global,
                      const PosEmbed<T>& pos, const PatchRecord& rec,
                      const TokenCoordGrid& global_grid, const AblationFlags& flags) const {
        Tensor<T> h = enc.bottleneck;
        for (int s = 0; s < 4; ++s) {
            const auto& skip = enc.skips[static_cast<std::size_t>(3 - s)];
            h = resample_trilinear(h, {skip.extent(1), skip.extent(2), skip.extent(3)});
            h = convs[static_cast<std::size_t>(s)].forward(concat_ch<T>({h, skip}));
            h = cams[static_cast<std::size_t>(s)].forward(h, f_global, pos, rec, global_grid,
                                                          flags.lfe, flags.glf);
        }
        return head.forward(h);
    }
};

template <class T>
struct GlobalBranch {
    ConvModule<T> stem1;  // stride (2,2,1)
    ConvModule<T> stem2;
    std::vector<CcMambaBlock<T>> blocks;
    Conv3dLayer<T> head;  // 1^3 -> logits on the post-stem grid

    struct Out {
        Tensor<T> features;  // fG
        Tensor<T> logits;
    };

    static GlobalBranch make(ParamRegistry<T>& reg, const std::string& name,
                             const CommaConfig& cfg) {
        GlobalBranch g;
        g.stem1 = ConvModule<T>::make(reg, name + ".stem1", 1, cfg.stem_channels[0], {2, 2, 1});
        g.stem2 = ConvModule<T>::make(reg, name + ".stem2", cfg.stem_channels[0],
                                      cfg.stem_channels[1]);
        std::int64_t p = cfg.ccmamba.token_size;
        std::int64_t token_dim = cfg.stem_channels[1] * p * p * p;
        for (std::int64_t l = 0; l < cfg.ccmamba.layers; ++l)
            g.blocks.push_back(CcMambaBlock<T>::make(reg, strcat_msg(name, ".ccmamba", l),
                                                     token_dim, cfg.ccmamba));
        g.head = Conv3dLayer<T>::make(reg, name + ".head", cfg.stem_channels[1], 1, 1);
        return g;
    }

    Out forward(const Tensor<T>& resized) const {
        auto h = stem2.forward(stem1.forward(resized));
        for (const auto& b : blocks) h = b.forward_volume(h);
        Out out;
        out.features = h;
        out.logits = head.forward(h);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Full dual-branch model
// ---------------------------------------------------------------------------

template <class T>
struct CommaNet {
    CommaConfig cfg;
    ParamRegistry<T> reg;
    LocalEncoder<T> encoder;
    LocalDecoder<T> decoder;
    GlobalBranch<T> global;
    PosEmbed<T> pos;
    TokenCoordGrid global_grid;  // one shared grid; the global frame is fixed
    mutable std::int64_t global_forward_calls = 0;

    explicit CommaNet(CommaConfig config) : cfg(std::move(config)), reg(cfg.seed) {
        cfg.validate();
        encoder = LocalEncoder<T>::make(reg, "local.enc", cfg);
        decoder = LocalDecoder<T>::make(reg, "local.dec", cfg);
        global = GlobalBranch<T>::make(reg, "global", cfg);
        pos = PosEmbed<T>::make(reg, "pos_embed", cfg.cam.attention_dim);
        global_grid = token_coords_global(cfg.global_feat_shape(), cfg.cam.global_token_size);
    }

    typename GlobalBranch<T>::Out global_forward(const Tensor<T>& full_image) const {
        ++global_forward_calls;
        auto resized = resample_trilinear(full_image, cfg.global_resize);
        return global.forward(resized);
    }

    Tensor<T> local_forward(const Tensor<T>& patch, const Tensor<T>& f_global,
                            const PatchRecord& rec) const {
        auto enc = encoder.forward(patch);
        return decoder.forward(enc, f_global, pos, rec, global_grid, cfg.ablate);
    }
};

// Sliding-window inference: tile the volume, run the global branch once,
// stitch patch probabilities with partition-of-unity weights, threshold.
template <class T>
BinaryMask3D infer_volume(const CommaNet<T>& net, const Volume& vol, double threshold = 0.5,
                          Volume* probabilities_out = nullptr) {
    NoGradGuard ng;
    auto tiles = tile_for_inference(vol.extents, net.cfg.patch_shape, net.cfg.infer_overlap);
    auto gout = net.global_forward(volume_to_tensor<T>(vol));
    StitchAccumulator stitch(vol.extents);
    for (const auto& tile : tiles) {
        Volume crop = crop_volume(vol, tile.voxel_origin, tile.patch_shape);
        auto logits = net.local_forward(volume_to_tensor<T>(crop), gout.features, tile);
        stitch.add_tile(tile, tensor_to_volume(sigmoid(logits)));
    }
    Volume probs = stitch.finalize();
    BinaryMask3D mask = BinaryMask3D::zeros(vol.extents);
    for (std::size_t i = 0; i < probs.voxels.size(); ++i)
        mask.voxels[i] = probs.voxels[i] > threshold ? 1 : 0;
    if (probabilities_out) *probabilities_out = std::move(probs);
    return mask;
}

}  // namespace comma
