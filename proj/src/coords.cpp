#include "comma/coords.hpp"

#include <cmath>

namespace comma {

PatchRecord make_patch_record(std::array<std::int64_t, 3> origin,
                              std::array<std::int64_t, 3> patch_shape,
                              std::array<std::int64_t, 3> full_shape) {
    PatchRecord r;
    r.voxel_origin = origin;
    r.patch_shape = patch_shape;
    r.full_shape = full_shape;
    for (int a = 0; a < 3; ++a) {
        double center_voxel = static_cast<double>(origin[a]) +
                              static_cast<double>(patch_shape[a]) * 0.5;
        r.center[a] = 2.0 * center_voxel / static_cast<double>(full_shape[a]) - 1.0;
    }
    return r;
}

TokenCoordGrid token_coords_box(std::array<double, 3> center, std::array<double, 3> half_extents,
                                std::array<std::int64_t, 3> n_tokens) {
    TokenCoordGrid g;
    g.grid_shape = n_tokens;
    g.coords.resize(static_cast<std::size_t>(3 * g.length()));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < n_tokens[0]; ++i)
        for (std::int64_t j = 0; j < n_tokens[1]; ++j)
            for (std::int64_t k = 0; k < n_tokens[2]; ++k) {
                const std::int64_t idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a)
                    g.coords[o++] = center[a] - half_extents[a] +
                                    (static_cast<double>(idx[a]) + 0.5) *
                                        (2.0 * half_extents[a] /
                                         static_cast<double>(n_tokens[a]));
            }
    return g;
}

TokenCoordGrid token_coords_local(std::array<double, 3> center,
                                  std::array<std::int64_t, 3> global_shape,
                                  std::array<std::int64_t, 3> local_shape, std::int64_t p_l) {
    check(p_l > 0, "token_coords_local: token size must be positive");
    std::array<double, 3> half{};
    std::array<std::int64_t, 3> n{};
    for (int a = 0; a < 3; ++a) {
        check(local_shape[a] <= global_shape[a],
              strcat_msg("token_coords_local: local extent ", local_shape[a],
                         " exceeds global extent ", global_shape[a], " on axis ", a));
        check(local_shape[a] % p_l == 0,
              strcat_msg("token_coords_local: local extent ", local_shape[a],
                         " not divisible by token size ", p_l, " on axis ", a));
        half[a] = static_cast<double>(local_shape[a]) / static_cast<double>(global_shape[a]);
        n[a] = local_shape[a] / p_l;
    }
    auto g = token_coords_box(center, half, n);
    g.token_size = static_cast<double>(p_l);
    return g;
}

TokenCoordGrid token_coords_global(std::array<std::int64_t, 3> global_shape, std::int64_t p_g) {
    for (int a = 0; a < 3; ++a)
        check(global_shape[a] % p_g == 0,
              strcat_msg("token_coords_global: extent ", global_shape[a],
                         " not divisible by token size ", p_g, " on axis ", a));
    return token_coords_local({0.0, 0.0, 0.0}, global_shape, global_shape, p_g);
}

std::vector<PatchRecord> tile_for_inference(std::array<std::int64_t, 3> full_shape,
                                            std::array<std::int64_t, 3> patch_shape,
                                            double overlap) {
    check(overlap >= 0.0 && overlap < 1.0,
          strcat_msg("tile_for_inference: overlap ", overlap, " outside [0,1)"));
    std::array<std::vector<std::int64_t>, 3> starts;
    for (int a = 0; a < 3; ++a) {
        const std::int64_t e = full_shape[a], p = patch_shape[a];
        if (e <= p) {
            // single centered tile; padded by the cropper if p > e
            starts[a].push_back(static_cast<std::int64_t>(
                std::floor(static_cast<double>(e - p) / 2.0)));
            continue;
        }
        double step = static_cast<double>(p) * (1.0 - overlap);
        std::int64_t n = static_cast<std::int64_t>(
                             std::ceil(static_cast<double>(e - p) / step)) +
                         1;
        for (std::int64_t i = 0; i < n; ++i) {
            double pos = static_cast<double>(i) * static_cast<double>(e - p) /
                         static_cast<double>(n - 1);
            starts[a].push_back(static_cast<std::int64_t>(std::llround(pos)));
        }
    }
    std::vector<PatchRecord> tiles;
    tiles.reserve(starts[0].size() * starts[1].size() * starts[2].size());
    for (auto si : starts[0])
        for (auto sj : starts[1])
            for (auto sk : starts[2])
                tiles.push_back(make_patch_record({si, sj, sk}, patch_shape, full_shape));
    return tiles;
}

Volume crop_volume(const Volume& v, std::array<std::int64_t, 3> origin,
                   std::array<std::int64_t, 3> shape) {
    Volume out = Volume::zeros(shape);
    for (std::int64_t k = 0; k < shape[2]; ++k) {
        std::int64_t sk = origin[2] + k;
        if (sk < 0 || sk >= v.extents[2]) continue;
        for (std::int64_t j = 0; j < shape[1]; ++j) {
            std::int64_t sj = origin[1] + j;
            if (sj < 0 || sj >= v.extents[1]) continue;
            for (std::int64_t i = 0; i < shape[0]; ++i) {
                std::int64_t si = origin[0] + i;
                if (si < 0 || si >= v.extents[0]) continue;
                out.at(i, j, k) = v.at(si, sj, sk);
            }
        }
    }
    return out;
}

BinaryMask3D crop_mask(const BinaryMask3D& m, std::array<std::int64_t, 3> origin,
                       std::array<std::int64_t, 3> shape) {
    BinaryMask3D out = BinaryMask3D::zeros(shape);
    for (std::int64_t k = 0; k < shape[2]; ++k) {
        std::int64_t sk = origin[2] + k;
        if (sk < 0 || sk >= m.extents[2]) continue;
        for (std::int64_t j = 0; j < shape[1]; ++j) {
            std::int64_t sj = origin[1] + j;
            if (sj < 0 || sj >= m.extents[1]) continue;
            for (std::int64_t i = 0; i < shape[0]; ++i) {
                std::int64_t si = origin[0] + i;
                if (si < 0 || si >= m.extents[0]) continue;
                out.at(i, j, k) = m.at(si, sj, sk);
            }
        }
    }
    return out;
}

StitchAccumulator::StitchAccumulator(std::array<std::int64_t, 3> full_shape)
    : shape_(full_shape),
      acc_(static_cast<std::size_t>(full_shape[0] * full_shape[1] * full_shape[2]), 0.0),
      wsum_(static_cast<std::size_t>(full_shape[0] * full_shape[1] * full_shape[2]), 0.0f) {}

void StitchAccumulator::add_tile(const PatchRecord& geom, const Volume& values) {
    check(values.extents == geom.patch_shape, "stitch: tile values do not match tile geometry");
    for (std::int64_t k = 0; k < geom.patch_shape[2]; ++k) {
        std::int64_t dk = geom.voxel_origin[2] + k;
        if (dk < 0 || dk >= shape_[2]) continue;
        for (std::int64_t j = 0; j < geom.patch_shape[1]; ++j) {
            std::int64_t dj = geom.voxel_origin[1] + j;
            if (dj < 0 || dj >= shape_[1]) continue;
            for (std::int64_t i = 0; i < geom.patch_shape[0]; ++i) {
                std::int64_t di = geom.voxel_origin[0] + i;
                if (di < 0 || di >= shape_[0]) continue;
                std::size_t idx = static_cast<std::size_t>(di + shape_[0] * (dj + shape_[1] * dk));
                acc_[idx] += static_cast<double>(values.at(i, j, k));
                wsum_[idx] += 1.0f;
            }
        }
    }
}

Volume StitchAccumulator::finalize() const {
    Volume out = Volume::zeros(shape_);
    for (std::size_t i = 0; i < acc_.size(); ++i)
        out.voxels[i] = wsum_[i] > 0.0f ? static_cast<float>(acc_[i] / wsum_[i]) : 0.0f;
    return out;
}

}  // namespace comma
