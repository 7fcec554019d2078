#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (direct definitions, O(n^2) where that is the simplest
// correct form) and share no code with the implementations they check.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "comma/metrics.hpp"

namespace oracle {

// Direct cross-correlation, scalar loops.
template <class T>
std::vector<T> naive_conv3d(const std::vector<T>& x, std::int64_t ci, std::int64_t h,
                            std::int64_t w, std::int64_t d, const std::vector<T>& ker,
                            std::int64_t co, std::int64_t k, std::int64_t stride,
                            std::int64_t pad, std::int64_t& oh, std::int64_t& ow,
                            std::int64_t& od) {
    oh = (h + 2 * pad - k) / stride + 1;
    ow = (w + 2 * pad - k) / stride + 1;
    od = (d + 2 * pad - k) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(co * oh * ow * od), T(0));
    for (std::int64_t c = 0; c < co; ++c)
        for (std::int64_t a = 0; a < oh; ++a)
            for (std::int64_t b = 0; b < ow; ++b)
                for (std::int64_t e = 0; e < od; ++e) {
                    T acc = T(0);
                    for (std::int64_t ic = 0; ic < ci; ++ic)
                        for (std::int64_t ka = 0; ka < k; ++ka)
                            for (std::int64_t kb = 0; kb < k; ++kb)
                                for (std::int64_t kc = 0; kc < k; ++kc) {
                                    std::int64_t ia = a * stride + ka - pad;
                                    std::int64_t ib = b * stride + kb - pad;
                                    std::int64_t ic2 = e * stride + kc - pad;
                                    if (ia < 0 || ia >= h || ib < 0 || ib >= w || ic2 < 0 ||
                                        ic2 >= d)
                                        continue;
                                    acc += x[static_cast<std::size_t>(
                                               ((ic * h + ia) * w + ib) * d + ic2)] *
                                           ker[static_cast<std::size_t>(
                                               (((c * ci + ic) * k + ka) * k + kb) * k + kc)];
                                }
                    out[static_cast<std::size_t>(((c * oh + a) * ow + b) * od + e)] = acc;
                }
    return out;
}

// Sequential recurrence h_t = a_t h_{t-1} + b_t, y_t = sum_n c_tn h_ten,
// one scalar (e, n) pair at a time.
template <class T>
std::vector<T> naive_scan(const std::vector<T>& abar, const std::vector<T>& bu,
                          const std::vector<T>& c, std::int64_t L, std::int64_t E,
                          std::int64_t N) {
    std::vector<T> y(static_cast<std::size_t>(L * E), T(0));
    for (std::int64_t e = 0; e < E; ++e)
        for (std::int64_t n = 0; n < N; ++n) {
            T h = T(0);
            for (std::int64_t l = 0; l < L; ++l) {
                std::size_t i = static_cast<std::size_t>((l * E + e) * N + n);
                h = abar[i] * h + bu[i];
                y[static_cast<std::size_t>(l * E + e)] +=
                    c[static_cast<std::size_t>(l * N + n)] * h;
            }
        }
    return y;
}

// Set-count Dice.
inline double dice_by_counts(const comma::BinaryMask3D& p, const comma::BinaryMask3D& g) {
    std::int64_t np = 0, ng = 0, ni = 0;
    for (std::size_t i = 0; i < p.voxels.size(); ++i) {
        np += p.voxels[i] != 0;
        ng += g.voxels[i] != 0;
        ni += p.voxels[i] && g.voxels[i];
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * double(ni) / double(np + ng);
}

// All-pairs surface distance NSD; boundary definition mirrors the spec text
// (mask voxel with a background 6-neighbor, outside counts as background).
inline double nsd_pairwise(const comma::BinaryMask3D& pred, const comma::BinaryMask3D& gt,
                           double tau) {
    auto boundary = [](const comma::BinaryMask3D& m) {
        std::vector<std::array<std::int64_t, 3>> b;
        const auto [H, W, D] = m.extents;
        const int steps[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                 {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
        for (std::int64_t k = 0; k < D; ++k)
            for (std::int64_t j = 0; j < W; ++j)
                for (std::int64_t i = 0; i < H; ++i) {
                    if (!m.at(i, j, k)) continue;
                    for (const auto& s : steps) {
                        std::int64_t x = i + s[0], y = j + s[1], z = k + s[2];
                        if (x < 0 || x >= H || y < 0 || y >= W || z < 0 || z >= D ||
                            !m.at(x, y, z)) {
                            b.push_back({i, j, k});
                            break;
                        }
                    }
                }
        return b;
    };
    std::int64_t np = pred.popcount(), ng = gt.popcount();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    auto bp = boundary(pred);
    auto bg = boundary(gt);
    auto count_close = [&](const auto& from, const auto& to) {
        std::int64_t close = 0;
        for (const auto& a : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : to) {
                double dx = double(a[0] - b[0]), dy = double(a[1] - b[1]),
                       dz = double(a[2] - b[2]);
                best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
            }
            close += best <= tau + 1e-12;
        }
        return close;
    };
    return double(count_close(bp, bg) + count_close(bg, bp)) /
           double(bp.size() + bg.size());
}

// Brute-force mean distance to centroid, for the dispersion index.
inline double di_brute(const comma::BinaryMask3D& m) {
    std::vector<std::array<double, 3>> pts;
    const auto [H, W, D] = m.extents;
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i)
                if (m.at(i, j, k)) pts.push_back({double(i), double(j), double(k)});
    if (pts.empty()) return 0.0;
    double cx = 0, cy = 0, cz = 0;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
        cz += p[2];
    }
    cx /= double(pts.size());
    cy /= double(pts.size());
    cz /= double(pts.size());
    double acc = 0;
    for (const auto& p : pts)
        acc += 2.0 * std::sqrt((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) +
                               (p[2] - cz) * (p[2] - cz));
    return acc / (double(pts.size()) *
                  std::sqrt(double(H) * double(H) + double(W) * double(W) +
                            double(D) * double(D)));
}

}  // namespace oracle
