#pragma once

#include "comma/params.hpp"
#include "comma/volume_io.hpp"

namespace comma {

// Normalized coordinate convention: voxel v of an axis with extent E sits at
// 2*(v+0.5)/E - 1, so every volume spans (-1, 1) per axis regardless of size.

inline double voxel_center_coord(std::int64_t v, std::int64_t extent) {
    return 2.0 * (static_cast<double>(v) + 0.5) / static_cast<double>(extent) - 1.0;
}

// A crop of a full volume plus the geometry needed to place it back: the
// integer corner, the crop extents, and the normalized center P_c.
struct PatchRecord {
    Volume data;  // may be empty when only geometry is needed
    std::array<double, 3> center{0, 0, 0};        // P_c in (-1,1)^3
    std::array<std::int64_t, 3> voxel_origin{0, 0, 0};
    std::array<std::int64_t, 3> patch_shape{0, 0, 0};
    std::array<std::int64_t, 3> full_shape{0, 0, 0};

    // Patch footprint half-extent in normalized units, per axis.
    std::array<double, 3> half_extents() const {
        return {static_cast<double>(patch_shape[0]) / static_cast<double>(full_shape[0]),
                static_cast<double>(patch_shape[1]) / static_cast<double>(full_shape[1]),
                static_cast<double>(patch_shape[2]) / static_cast<double>(full_shape[2])};
    }
};

PatchRecord make_patch_record(std::array<std::int64_t, 3> origin,
                              std::array<std::int64_t, 3> patch_shape,
                              std::array<std::int64_t, 3> full_shape);

struct TokenCoordGrid {
    std::vector<double> coords;  // flat [L, 3]
    std::array<std::int64_t, 3> grid_shape{0, 0, 0};
    double token_size = 1.0;  // p, in units of the normalizing grid's voxels

    std::int64_t length() const { return grid_shape[0] * grid_shape[1] * grid_shape[2]; }
    std::array<double, 3> at(std::int64_t l) const {
        return {coords[static_cast<std::size_t>(3 * l)],
                coords[static_cast<std::size_t>(3 * l + 1)],
                coords[static_cast<std::size_t>(3 * l + 2)]};
    }
};

// General form: token centers of an n-per-axis grid spanning a box of given
// normalized half extents around `center`. Axis value for token index i:
//   c - s + (i + 0.5) * (2 s / n)
TokenCoordGrid token_coords_box(std::array<double, 3> center, std::array<double, 3> half_extents,
                                std::array<std::int64_t, 3> n_tokens);

// The literal per-token coordinate formula for a local feature of extents
// (h,w,d) with token size p_L inside a global frame (H,W,D):
//   x = x_o - h/H + (i + 0.5) * p_L * 2/H   (and likewise for y, z)
TokenCoordGrid token_coords_local(std::array<double, 3> center,
                                  std::array<std::int64_t, 3> global_shape,
                                  std::array<std::int64_t, 3> local_shape, std::int64_t p_l);

// Same formula with the center at the origin and the box covering the whole
// frame; used for the global feature's own tokens.
TokenCoordGrid token_coords_global(std::array<std::int64_t, 3> global_shape, std::int64_t p_g);

template <class T>
Tensor<T> coords_tensor(const TokenCoordGrid& grid) {
    std::vector<T> data(grid.coords.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(grid.coords[i]);
    return Tensor<T>::from_data({grid.length(), 3}, std::move(data));
}

// One linear map (3 -> dim) shared by every token grid in the model, so equal
// coordinates always produce identical embeddings.
template <class T>
struct PosEmbed {
    Linear<T> lin;

    static PosEmbed make(ParamRegistry<T>& reg, const std::string& name, std::int64_t dim) {
        PosEmbed p;
        p.lin = Linear<T>::make(reg, name, 3, dim);
        return p;
    }

    Tensor<T> embed(const TokenCoordGrid& grid) const {
        return lin.forward(coords_tensor<T>(grid));
    }
};

// ---------------------------------------------------------------------------
// Coordinate-aligned crop of the global feature map: extracts the normalized
// box (center, half_extents) from fG, trilinearly resampled to target_shape.
// Samples falling outside fG read as zero. Differentiable w.r.t. fG.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> crop_global_at(const Tensor<T>& fg, std::array<double, 3> center,
                         std::array<double, 3> half_extents,
                         std::array<std::int64_t, 3> target_shape) {
    check(fg.ndim() == 4, strcat_msg("crop_global_at: expected [C,H,W,D], got ",
                                     shape_str(fg.shape())));
    for (int a = 0; a < 3; ++a)
        check(center[a] > -1.0 && center[a] < 1.0,
              strcat_msg("crop_global_at: center component ", center[a],
                         " outside (-1,1) on axis ", a));
    const std::int64_t ch = fg.extent(0);
    const std::array<std::int64_t, 3> src{fg.extent(1), fg.extent(2), fg.extent(3)};
    const auto [oh, ow, od] = target_shape;

    struct Tap {
        std::int64_t i0, i1;  // -1 marks an out-of-volume corner
        double t;
    };
    auto make_taps = [](std::int64_t n, double c, double s, std::int64_t ext) {
        std::vector<Tap> taps(static_cast<std::size_t>(n));
        for (std::int64_t o = 0; o < n; ++o) {
            double xn = c + s * (2.0 * (static_cast<double>(o) + 0.5) / static_cast<double>(n) -
                                 1.0);
            double g = (xn + 1.0) * 0.5 * static_cast<double>(ext) - 0.5;
            double fl = std::floor(g);
            std::int64_t i0 = static_cast<std::int64_t>(fl);
            std::int64_t i1 = i0 + 1;
            Tap tp;
            tp.t = g - fl;
            tp.i0 = (i0 >= 0 && i0 < ext) ? i0 : -1;
            tp.i1 = (i1 >= 0 && i1 < ext) ? i1 : -1;
            taps[static_cast<std::size_t>(o)] = tp;
        }
        return taps;
    };
    auto th = make_taps(oh, center[0], half_extents[0], src[0]);
    auto tw = make_taps(ow, center[1], half_extents[1], src[1]);
    auto td = make_taps(od, center[2], half_extents[2], src[2]);

    auto out = detail::make_op<T>(
        {ch, oh, ow, od}, {fg}, [=](Node<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            std::int64_t o = 0;
            for (std::int64_t c = 0; c < ch; ++c) {
                T* gx = p.grad.data() + c * src[0] * src[1] * src[2];
                for (std::int64_t a = 0; a < oh; ++a)
                    for (std::int64_t b = 0; b < ow; ++b)
                        for (std::int64_t d = 0; d < od; ++d, ++o) {
                            T g = self.grad[o];
                            if (g == T(0)) continue;
                            const Tap &ta = th[static_cast<std::size_t>(a)],
                                      &tb = tw[static_cast<std::size_t>(b)],
                                      &tc = td[static_cast<std::size_t>(d)];
                            for (int ca = 0; ca < 2; ++ca)
                                for (int cb = 0; cb < 2; ++cb)
                                    for (int cc = 0; cc < 2; ++cc) {
                                        std::int64_t ia = ca ? ta.i1 : ta.i0;
                                        std::int64_t ib = cb ? tb.i1 : tb.i0;
                                        std::int64_t ic = cc ? tc.i1 : tc.i0;
                                        if (ia < 0 || ib < 0 || ic < 0) continue;
                                        double w = (ca ? ta.t : 1.0 - ta.t) *
                                                   (cb ? tb.t : 1.0 - tb.t) *
                                                   (cc ? tc.t : 1.0 - tc.t);
                                        gx[(ia * src[1] + ib) * src[2] + ic] +=
                                            static_cast<T>(w) * g;
                                    }
                        }
            }
        });
    const T* px = fg.data().data();
    T* po = out.mutable_data().data();
    std::int64_t o = 0;
    for (std::int64_t c = 0; c < ch; ++c) {
        const T* xc = px + c * src[0] * src[1] * src[2];
        for (std::int64_t a = 0; a < oh; ++a)
            for (std::int64_t b = 0; b < ow; ++b)
                for (std::int64_t d = 0; d < od; ++d, ++o) {
                    const Tap &ta = th[static_cast<std::size_t>(a)],
                              &tb = tw[static_cast<std::size_t>(b)],
                              &tc = td[static_cast<std::size_t>(d)];
                    double acc = 0.0;
                    for (int ca = 0; ca < 2; ++ca)
                        for (int cb = 0; cb < 2; ++cb)
                            for (int cc = 0; cc < 2; ++cc) {
                                std::int64_t ia = ca ? ta.i1 : ta.i0;
                                std::int64_t ib = cb ? tb.i1 : tb.i0;
                                std::int64_t ic = cc ? tc.i1 : tc.i0;
                                if (ia < 0 || ib < 0 || ic < 0) continue;
                                double w = (ca ? ta.t : 1.0 - ta.t) * (cb ? tb.t : 1.0 - tb.t) *
                                           (cc ? tc.t : 1.0 - tc.t);
                                acc += w * static_cast<double>(
                                               xc[(ia * src[1] + ib) * src[2] + ic]);
                            }
                    po[o] = static_cast<T>(acc);
                }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sliding-window tiling with exact per-tile centers and partition-of-unity
// stitching.
// ---------------------------------------------------------------------------

std::vector<PatchRecord> tile_for_inference(std::array<std::int64_t, 3> full_shape,
                                            std::array<std::int64_t, 3> patch_shape,
                                            double overlap);

// Crop with zero padding outside the volume.
Volume crop_volume(const Volume& v, std::array<std::int64_t, 3> origin,
                   std::array<std::int64_t, 3> shape);
BinaryMask3D crop_mask(const BinaryMask3D& m, std::array<std::int64_t, 3> origin,
                       std::array<std::int64_t, 3> shape);

// Uniform-weight overlap-average stitching; tiles are accumulated in call
// order so the result does not depend on how work was scheduled.
class StitchAccumulator {
public:
    explicit StitchAccumulator(std::array<std::int64_t, 3> full_shape);

    void add_tile(const PatchRecord& geom, const Volume& values);

    // Per-voxel accumulated weight (1 per covering tile before normalization).
    const std::vector<float>& weights() const { return wsum_; }

    Volume finalize() const;

private:
    std::array<std::int64_t, 3> shape_;
    std::vector<double> acc_;
    std::vector<float> wsum_;
};

}  // namespace comma
