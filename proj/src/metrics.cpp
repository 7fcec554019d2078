#include "comma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "comma/common.hpp"

namespace comma {

namespace {

void check_same_extents(const BinaryMask3D& a, const BinaryMask3D& b, const char* op) {
    check(a.extents == b.extents,
          strcat_msg(op, ": extents differ, (", a.extents[0], ",", a.extents[1], ",",
                     a.extents[2], ") vs (", b.extents[0], ",", b.extents[1], ",", b.extents[2],
                     ")"));
}

}  // namespace

double dice(const BinaryMask3D& pred, const BinaryMask3D& gt) {
    check_same_extents(pred, gt, "dice");
    std::int64_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        bool p = pred.voxels[i] != 0, g = gt.voxels[i] != 0;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

// ---------------------------------------------------------------------------
// Simple-point test on the 3x3x3 neighborhood
// ---------------------------------------------------------------------------

namespace {

// Offsets use local cube indices n = (dz+1)*9 + (dy+1)*3 + (dx+1); the center
// is index 13.
inline int cube_index(int dx, int dy, int dz) { return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1); }

// Foreground in the punctured 26-neighborhood must form one 26-connected
// component.
bool one_fg_component_26(const bool fg[27]) {
    int start = -1;
    for (int n = 0; n < 27; ++n)
        if (n != 13 && fg[n]) {
            start = n;
            break;
        }
    if (start < 0) return false;  // isolated voxel: not simple (and an endpoint anyway)
    bool seen[27] = {};
    int stack[27];
    int sp = 0;
    stack[sp++] = start;
    seen[start] = true;
    int visited = 0;
    while (sp) {
        int cur = stack[--sp];
        ++visited;
        int cx = cur % 3 - 1, cy = (cur / 3) % 3 - 1, cz = cur / 9 - 1;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dx && !dy && !dz) continue;
                    int nx = cx + dx, ny = cy + dy, nz = cz + dz;
                    if (nx < -1 || nx > 1 || ny < -1 || ny > 1 || nz < -1 || nz > 1) continue;
                    int nn = cube_index(nx, ny, nz);
                    if (nn == 13 || seen[nn] || !fg[nn]) continue;
                    seen[nn] = true;
                    stack[sp++] = nn;
                }
    }
    int total = 0;
    for (int n = 0; n < 27; ++n) total += (n != 13 && fg[n]);
    return visited == total;
}

// Background restricted to the 18-neighborhood must form exactly one
// 6-connected component that touches a face neighbor of the center.
bool one_bg_component_6(const bool fg[27]) {
    auto in_n18 = [](int n) {
        int dx = n % 3 - 1, dy = (n / 3) % 3 - 1, dz = n / 9 - 1;
        int nz = std::abs(dx) + std::abs(dy) + std::abs(dz);
        return n != 13 && nz <= 2;
    };
    static const int face[6] = {cube_index(-1, 0, 0), cube_index(1, 0, 0), cube_index(0, -1, 0),
                                cube_index(0, 1, 0),  cube_index(0, 0, -1), cube_index(0, 0, 1)};
    bool seen[27] = {};
    int components_touching_face = 0;
    for (int f = 0; f < 6; ++f) {
        int s = face[f];
        if (fg[s] || seen[s]) continue;
        ++components_touching_face;
        if (components_touching_face > 1) return false;
        int stack[27];
        int sp = 0;
        stack[sp++] = s;
        seen[s] = true;
        while (sp) {
            int cur = stack[--sp];
            int cx = cur % 3 - 1, cy = (cur / 3) % 3 - 1, cz = cur / 9 - 1;
            static const int step[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                           {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
            for (const auto& d : step) {
                int nx = cx + d[0], ny = cy + d[1], nz = cz + d[2];
                if (nx < -1 || nx > 1 || ny < -1 || ny > 1 || nz < -1 || nz > 1) continue;
                int nn = cube_index(nx, ny, nz);
                if (nn == 13 || seen[nn] || fg[nn] || !in_n18(nn)) continue;
                seen[nn] = true;
                stack[sp++] = nn;
            }
        }
    }
    return components_touching_face == 1;
}

void load_cube(const BinaryMask3D& mask, std::int64_t i, std::int64_t j, std::int64_t k,
               bool fg[27]) {
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                std::int64_t x = i + dx, y = j + dy, z = k + dz;
                bool v = x >= 0 && x < mask.extents[0] && y >= 0 && y < mask.extents[1] &&
                         z >= 0 && z < mask.extents[2] && mask.at(x, y, z) != 0;
                fg[cube_index(dx, dy, dz)] = v;
            }
}

int count_fg_neighbors_26(const bool fg[27]) {
    int n = 0;
    for (int c = 0; c < 27; ++c) n += (c != 13 && fg[c]);
    return n;
}

}  // namespace

bool is_simple_point(const BinaryMask3D& mask, std::int64_t i, std::int64_t j, std::int64_t k) {
    bool fg[27];
    load_cube(mask, i, j, k, fg);
    return one_fg_component_26(fg) && one_bg_component_6(fg);
}

BinaryMask3D skeletonize(const BinaryMask3D& mask) {
    BinaryMask3D s = mask;
    const auto [H, W, D] = s.extents;
    static const int dirs[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                   {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    std::vector<std::array<std::int64_t, 3>> candidates;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& d : dirs) {
            candidates.clear();
            for (std::int64_t k = 0; k < D; ++k)
                for (std::int64_t j = 0; j < W; ++j)
                    for (std::int64_t i = 0; i < H; ++i) {
                        if (!s.at(i, j, k)) continue;
                        std::int64_t bi = i + d[0], bj = j + d[1], bk = k + d[2];
                        bool border = bi < 0 || bi >= H || bj < 0 || bj >= W || bk < 0 ||
                                      bk >= D || !s.at(bi, bj, bk);
                        if (!border) continue;
                        bool fg[27];
                        load_cube(s, i, j, k, fg);
                        if (count_fg_neighbors_26(fg) <= 1) continue;  // endpoint
                        if (one_fg_component_26(fg) && one_bg_component_6(fg))
                            candidates.push_back({i, j, k});
                    }
            // delete sequentially, re-validating so every removal is of a
            // point that is still simple at removal time
            for (const auto& c : candidates) {
                bool fg[27];
                load_cube(s, c[0], c[1], c[2], fg);
                if (count_fg_neighbors_26(fg) <= 1) continue;
                if (!one_fg_component_26(fg) || !one_bg_component_6(fg)) continue;
                s.at(c[0], c[1], c[2]) = 0;
                changed = true;
            }
        }
    }
    return s;
}

double cldice(const BinaryMask3D& pred, const BinaryMask3D& gt) {
    check_same_extents(pred, gt, "cldice");
    std::int64_t np = pred.popcount(), ng = gt.popcount();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    BinaryMask3D sp = skeletonize(pred);
    BinaryMask3D sg = skeletonize(gt);
    std::int64_t sp_total = 0, sp_in_gt = 0, sg_total = 0, sg_in_pred = 0;
    for (std::size_t i = 0; i < sp.voxels.size(); ++i) {
        if (sp.voxels[i]) {
            ++sp_total;
            sp_in_gt += gt.voxels[i] != 0;
        }
        if (sg.voxels[i]) {
            ++sg_total;
            sg_in_pred += pred.voxels[i] != 0;
        }
    }
    if (sp_total == 0 || sg_total == 0) return 0.0;
    double tprec = static_cast<double>(sp_in_gt) / static_cast<double>(sp_total);
    double tsens = static_cast<double>(sg_in_pred) / static_cast<double>(sg_total);
    if (tprec + tsens == 0.0) return 0.0;
    return 2.0 * tprec * tsens / (tprec + tsens);
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (squared), separable lower-envelope pass
// per axis.
// ---------------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared-distance transform of sampled function f (lower-envelope-of-
// parabolas construction). Infinite samples contribute no parabola.
void edt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<std::int64_t>& v,
            std::vector<double>& z, std::int64_t n) {
    auto intersect = [&](std::int64_t p, std::int64_t q) {
        return ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * static_cast<double>(q)) -
                (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * static_cast<double>(p))) /
               (2.0 * static_cast<double>(q - p));
    };
    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf) continue;
        if (k >= 0) {
            double s = intersect(v[static_cast<std::size_t>(k)], q);
            while (k >= 0 && s <= z[static_cast<std::size_t>(k)]) {
                --k;
                if (k >= 0) s = intersect(v[static_cast<std::size_t>(k)], q);
            }
            if (k >= 0) {
                ++k;
                v[static_cast<std::size_t>(k)] = q;
                z[static_cast<std::size_t>(k)] = s;
                z[static_cast<std::size_t>(k + 1)] = kInf;
                continue;
            }
        }
        k = 0;
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
    }
    if (k < 0) {
        for (std::int64_t q = 0; q < n; ++q) d[static_cast<std::size_t>(q)] = kInf;
        return;
    }
    std::int64_t kk = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(kk + 1)] < static_cast<double>(q)) ++kk;
        std::int64_t p = v[static_cast<std::size_t>(kk)];
        double dq = static_cast<double>(q - p);
        d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(p)];
    }
}

}  // namespace

std::vector<double> squared_edt(const std::vector<std::uint8_t>& seeds,
                                std::array<std::int64_t, 3> extents) {
    const auto [H, W, D] = extents;
    check(static_cast<std::int64_t>(seeds.size()) == H * W * D, "squared_edt: size mismatch");
    std::vector<double> dist(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) dist[i] = seeds[i] ? 0.0 : kInf;
    std::int64_t maxext = std::max({H, W, D});
    std::vector<double> f(static_cast<std::size_t>(maxext)),
        d(static_cast<std::size_t>(maxext)), z(static_cast<std::size_t>(maxext + 1));
    std::vector<std::int64_t> v(static_cast<std::size_t>(maxext));
    auto idx = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        return static_cast<std::size_t>(i + H * (j + W * k));
    };
    // x pass
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j) {
            for (std::int64_t i = 0; i < H; ++i) f[static_cast<std::size_t>(i)] = dist[idx(i, j, k)];
            edt_1d(f, d, v, z, H);
            for (std::int64_t i = 0; i < H; ++i) dist[idx(i, j, k)] = d[static_cast<std::size_t>(i)];
        }
    // y pass
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t i = 0; i < H; ++i) {
            for (std::int64_t j = 0; j < W; ++j) f[static_cast<std::size_t>(j)] = dist[idx(i, j, k)];
            edt_1d(f, d, v, z, W);
            for (std::int64_t j = 0; j < W; ++j) dist[idx(i, j, k)] = d[static_cast<std::size_t>(j)];
        }
    // z pass
    for (std::int64_t j = 0; j < W; ++j)
        for (std::int64_t i = 0; i < H; ++i) {
            for (std::int64_t k = 0; k < D; ++k) f[static_cast<std::size_t>(k)] = dist[idx(i, j, k)];
            edt_1d(f, d, v, z, D);
            for (std::int64_t k = 0; k < D; ++k) dist[idx(i, j, k)] = d[static_cast<std::size_t>(k)];
        }
    return dist;
}

namespace {

std::vector<std::uint8_t> boundary_voxels(const BinaryMask3D& m) {
    std::vector<std::uint8_t> b(m.voxels.size(), 0);
    const auto [H, W, D] = m.extents;
    static const int step[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                   {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i) {
                if (!m.at(i, j, k)) continue;
                for (const auto& s : step) {
                    std::int64_t x = i + s[0], y = j + s[1], z = k + s[2];
                    if (x < 0 || x >= H || y < 0 || y >= W || z < 0 || z >= D ||
                        !m.at(x, y, z)) {
                        b[static_cast<std::size_t>(m.index(i, j, k))] = 1;
                        break;
                    }
                }
            }
    return b;
}

}  // namespace

double nsd(const BinaryMask3D& pred, const BinaryMask3D& gt, double tau) {
    check_same_extents(pred, gt, "nsd");
    std::int64_t np = pred.popcount(), ng = gt.popcount();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    auto bp = boundary_voxels(pred);
    auto bg = boundary_voxels(gt);
    auto d2_to_gt = squared_edt(bg, gt.extents);
    auto d2_to_pred = squared_edt(bp, pred.extents);
    const double tau2 = tau * tau + 1e-9;
    std::int64_t bp_total = 0, bp_close = 0, bg_total = 0, bg_close = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) {
        if (bp[i]) {
            ++bp_total;
            bp_close += d2_to_gt[i] <= tau2;
        }
        if (bg[i]) {
            ++bg_total;
            bg_close += d2_to_pred[i] <= tau2;
        }
    }
    return static_cast<double>(bp_close + bg_close) / static_cast<double>(bp_total + bg_total);
}

double sparsity_index(const BinaryMask3D& mask) {
    return static_cast<double>(mask.popcount()) / static_cast<double>(mask.count());
}

double dispersion_index(const BinaryMask3D& mask) {
    const auto [H, W, D] = mask.extents;
    double ci = 0.0, cj = 0.0, ck = 0.0;
    std::int64_t n = 0;
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i)
                if (mask.at(i, j, k)) {
                    ci += static_cast<double>(i);
                    cj += static_cast<double>(j);
                    ck += static_cast<double>(k);
                    ++n;
                }
    if (n == 0) return 0.0;
    ci /= static_cast<double>(n);
    cj /= static_cast<double>(n);
    ck /= static_cast<double>(n);
    double sum = 0.0;
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i)
                if (mask.at(i, j, k)) {
                    double dx = static_cast<double>(i) - ci;
                    double dy = static_cast<double>(j) - cj;
                    double dz = static_cast<double>(k) - ck;
                    sum += 2.0 * std::sqrt(dx * dx + dy * dy + dz * dz);
                }
    double diag = std::sqrt(static_cast<double>(H * H + W * W + D * D));
    return sum / (static_cast<double>(n) * diag);
}

BinaryMask3D split_small_vessels(const BinaryMask3D& mask, int axis, std::int64_t threshold) {
    check(axis >= 0 && axis < 3, strcat_msg("split_small_vessels: bad axis ", axis));
    BinaryMask3D out = mask;
    const auto [H, W, D] = mask.extents;
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i) {
                std::int64_t coord = axis == 0 ? i : axis == 1 ? j : k;
                if (coord <= threshold) out.at(i, j, k) = 0;
            }
    return out;
}

std::int64_t count_components_26(const BinaryMask3D& mask) {
    const auto [H, W, D] = mask.extents;
    std::vector<std::uint8_t> seen(mask.voxels.size(), 0);
    std::int64_t components = 0;
    std::deque<std::array<std::int64_t, 3>> queue;
    for (std::int64_t k0 = 0; k0 < D; ++k0)
        for (std::int64_t j0 = 0; j0 < W; ++j0)
            for (std::int64_t i0 = 0; i0 < H; ++i0) {
                std::size_t s0 = static_cast<std::size_t>(mask.index(i0, j0, k0));
                if (!mask.voxels[s0] || seen[s0]) continue;
                ++components;
                seen[s0] = 1;
                queue.push_back({i0, j0, k0});
                while (!queue.empty()) {
                    auto [i, j, k] = queue.front();
                    queue.pop_front();
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (!dx && !dy && !dz) continue;
                                std::int64_t x = i + dx, y = j + dy, z = k + dz;
                                if (x < 0 || x >= H || y < 0 || y >= W || z < 0 || z >= D)
                                    continue;
                                std::size_t s = static_cast<std::size_t>(mask.index(x, y, z));
                                if (!mask.voxels[s] || seen[s]) continue;
                                seen[s] = 1;
                                queue.push_back({x, y, z});
                            }
                }
            }
    return components;
}

MetricsReport evaluate_case(const std::string& case_name, const BinaryMask3D& pred,
                            const BinaryMask3D& gt, double tau,
                            const std::optional<SmallVesselSplit>& sv) {
    MetricsReport r;
    r.case_name = case_name;
    r.dice = dice(pred, gt);
    r.cldice = cldice(pred, gt);
    r.nsd = nsd(pred, gt, tau);
    r.si = sparsity_index(gt);
    r.di = dispersion_index(gt);
    if (sv) {
        auto sp = split_small_vessels(pred, sv->axis, sv->threshold);
        auto sg = split_small_vessels(gt, sv->axis, sv->threshold);
        r.sv_dice = dice(sp, sg);
        r.sv_cldice = cldice(sp, sg);
        r.sv_nsd = nsd(sp, sg, tau);
    }
    return r;
}

std::string metrics_csv_header() { return "case,dice,cldice,nsd,si,di,sv_dice,sv_cldice,sv_nsd"; }

namespace {
std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << *v;
    return os.str();
}
std::string fmt_val(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}
}  // namespace

std::string metrics_csv_row(const MetricsReport& r) {
    return strcat_msg(r.case_name, ",", fmt_val(r.dice), ",", fmt_val(r.cldice), ",",
                      fmt_val(r.nsd), ",", fmt_val(r.si), ",", fmt_val(r.di), ",",
                      fmt_opt(r.sv_dice), ",", fmt_opt(r.sv_cldice), ",", fmt_opt(r.sv_nsd));
}

std::string metrics_json(const std::vector<MetricsReport>& rows) {
    std::ostringstream os;
    os.precision(9);
    os << "[";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (i) os << ",";
        os << "\n  {\"case\":\"" << r.case_name << "\",\"dice\":" << r.dice
           << ",\"cldice\":" << r.cldice << ",\"nsd\":" << r.nsd << ",\"si\":" << r.si
           << ",\"di\":" << r.di;
        if (r.sv_dice)
            os << ",\"sv_dice\":" << *r.sv_dice << ",\"sv_cldice\":" << *r.sv_cldice
               << ",\"sv_nsd\":" << *r.sv_nsd;
        os << "}";
    }
    os << "\n]\n";
    return os.str();
}

}  // namespace comma
