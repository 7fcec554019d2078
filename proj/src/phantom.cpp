#include "comma/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <thread>

#include "comma/common.hpp"

namespace comma {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 add(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale3(Vec3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(Vec3 a, Vec3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
    double n = norm(a);
    return n > 0 ? scale3(a, 1.0 / n) : Vec3{0, 0, 1};
}

// Any unit vector orthogonal to d.
Vec3 orthogonal(Vec3 d) {
    Vec3 ref = std::abs(d[2]) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 u = {d[1] * ref[2] - d[2] * ref[1], d[2] * ref[0] - d[0] * ref[2],
              d[0] * ref[1] - d[1] * ref[0]};
    return normalized(u);
}

Vec3 cross(Vec3 a, Vec3 b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

void grow(std::vector<TubeSegment>& segs, Rng& rng, const PhantomSpec& spec, Vec3 pos, Vec3 dir,
          double length, double radius, int depth) {
    Vec3 tip = add(pos, scale3(dir, length));
    segs.push_back({pos, tip, std::max(radius, 0.5)});
    if (depth <= 0) return;
    Vec3 u = orthogonal(dir);
    Vec3 v = cross(dir, u);
    double base_phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    for (int child = 0; child < 2; ++child) {
        double theta = rng.uniform(spec.branch_angle_min, spec.branch_angle_max) *
                       3.14159265358979323846 / 180.0;
        // opposite azimuths with jitter keep siblings apart
        double phi = base_phi + child * 3.14159265358979323846 + rng.uniform(-0.5, 0.5);
        Vec3 ndir = normalized(add(scale3(dir, std::cos(theta)),
                                   add(scale3(u, std::sin(theta) * std::cos(phi)),
                                       scale3(v, std::sin(theta) * std::sin(phi)))));
        double nlen = length * rng.uniform(0.75, 0.9);
        grow(segs, rng, spec, tip, ndir, nlen, radius * spec.radius_decay, depth - 1);
    }
}

double point_segment_dist(Vec3 p, const TubeSegment& s) {
    Vec3 d = {s.p1[0] - s.p0[0], s.p1[1] - s.p0[1], s.p1[2] - s.p0[2]};
    Vec3 w = {p[0] - s.p0[0], p[1] - s.p0[1], p[2] - s.p0[2]};
    double len2 = dot(d, d);
    double t = len2 > 0 ? std::clamp(dot(w, d) / len2, 0.0, 1.0) : 0.0;
    Vec3 c = add(s.p0, scale3(d, t));
    return norm({p[0] - c[0], p[1] - c[1], p[2] - c[2]});
}

void rasterize(const std::vector<TubeSegment>& segs, BinaryMask3D& mask) {
    const auto [H, W, D] = mask.extents;
    for (const auto& s : segs) {
        double r = s.radius;
        std::int64_t lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            double mn = std::min(s.p0[a], s.p1[a]) - r - 1.0;
            double mx = std::max(s.p0[a], s.p1[a]) + r + 1.0;
            std::int64_t ext = mask.extents[a];
            lo[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(mn)), 0, ext);
            hi[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(mx)) + 1, 0, ext);
        }
        for (std::int64_t k = lo[2]; k < hi[2]; ++k)
            for (std::int64_t j = lo[1]; j < hi[1]; ++j)
                for (std::int64_t i = lo[0]; i < hi[0]; ++i) {
                    Vec3 p = {static_cast<double>(i), static_cast<double>(j),
                              static_cast<double>(k)};
                    if (point_segment_dist(p, s) < s.radius) mask.at(i, j, k) = 1;
                }
    }
    (void)H;
    (void)W;
    (void)D;
}

// separable 3-tap smoothing, reflective edges
void smooth3(std::vector<float>& v, std::array<std::int64_t, 3> ext) {
    const auto [H, W, D] = ext;
    std::vector<float> tmp(v.size());
    auto idx = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        return static_cast<std::size_t>(i + H * (j + W * k));
    };
    auto pass = [&](int axis) {
        for (std::int64_t k = 0; k < D; ++k)
            for (std::int64_t j = 0; j < W; ++j)
                for (std::int64_t i = 0; i < H; ++i) {
                    std::int64_t c[3] = {i, j, k};
                    std::int64_t m = c[axis], e = ext[static_cast<std::size_t>(axis)];
                    std::int64_t lo = std::max<std::int64_t>(0, m - 1);
                    std::int64_t hi = std::min<std::int64_t>(e - 1, m + 1);
                    std::int64_t cm[3] = {i, j, k}, cp[3] = {i, j, k};
                    cm[axis] = lo;
                    cp[axis] = hi;
                    tmp[idx(i, j, k)] = 0.25f * v[idx(cm[0], cm[1], cm[2])] +
                                        0.5f * v[idx(i, j, k)] +
                                        0.25f * v[idx(cp[0], cp[1], cp[2])];
                }
        v.swap(tmp);
    };
    pass(0);
    pass(1);
    pass(2);
}

}  // namespace

std::vector<TubeSegment> phantom_segments(const PhantomSpec& spec) {
    Rng tree_rng(Rng::mix(spec.seed, 1));
    std::vector<TubeSegment> segs;
    const auto [H, W, D] = spec.extents;
    // rooted left of center so a mirrored decoy occupies the other half
    double root_x = 0.32 * static_cast<double>(H);
    Vec3 root = {root_x + tree_rng.uniform(-1.5, 1.5),
                 0.5 * static_cast<double>(W) + tree_rng.uniform(-1.5, 1.5),
                 0.08 * static_cast<double>(D)};
    Vec3 dir = normalized({tree_rng.uniform(-0.15, 0.15), tree_rng.uniform(-0.15, 0.15), 1.0});
    double length = 0.22 * static_cast<double>(D);
    grow(segs, tree_rng, spec, root, dir, length, std::max(spec.root_radius, 0.5),
         spec.branching_depth);
    return segs;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    const auto ext = spec.extents;
    auto segs = phantom_segments(spec);
    Phantom ph;
    ph.mask = BinaryMask3D::zeros(ext);
    rasterize(segs, ph.mask);

    std::vector<float> signal(ph.mask.voxels.size());
    for (std::size_t i = 0; i < signal.size(); ++i)
        signal[i] = ph.mask.voxels[i] ? static_cast<float>(spec.intensity_contrast) : 0.0f;
    if (spec.decoy_contrast > 0.0) {
        std::vector<TubeSegment> decoy = segs;
        for (auto& s : decoy) {
            s.p0[0] = static_cast<double>(ext[0] - 1) - s.p0[0];
            s.p1[0] = static_cast<double>(ext[0] - 1) - s.p1[0];
        }
        BinaryMask3D dm = BinaryMask3D::zeros(ext);
        rasterize(decoy, dm);
        for (std::size_t i = 0; i < signal.size(); ++i)
            if (dm.voxels[i])
                signal[i] = std::max(signal[i], static_cast<float>(spec.decoy_contrast));
    }
    smooth3(signal, ext);

    // low-frequency multiplicative bias: three random plane waves
    Rng field_rng(Rng::mix(spec.seed, 2));
    std::array<std::array<double, 4>, 3> waves{};
    for (auto& wv : waves) {
        for (int a = 0; a < 3; ++a)
            wv[static_cast<std::size_t>(a)] =
                field_rng.uniform(0.5, 1.5) * 2.0 * 3.14159265358979323846 /
                static_cast<double>(ext[a]);
        wv[3] = field_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    }
    Rng noise_rng(Rng::mix(spec.seed, 3));
    Volume img = Volume::zeros(ext);
    std::size_t o = 0;
    for (std::int64_t k = 0; k < ext[2]; ++k)
        for (std::int64_t j = 0; j < ext[1]; ++j)
            for (std::int64_t i = 0; i < ext[0]; ++i, ++o) {
                double bias = 0.0;
                for (const auto& wv : waves)
                    bias += std::cos(wv[0] * static_cast<double>(i) +
                                     wv[1] * static_cast<double>(j) +
                                     wv[2] * static_cast<double>(k) + wv[3]);
                bias = 1.0 + spec.bias_strength * bias / 3.0;
                double value = static_cast<double>(signal[o]) * bias +
                               spec.noise_level * noise_rng.normal();
                img.voxels[o] = static_cast<float>(value);
            }
    ph.image = img;
    return ph;
}

std::array<std::int64_t, 3> split_counts(std::int64_t n, SplitRatios ratios) {
    double sum = ratios.train + ratios.val + ratios.test;
    check(std::abs(sum - 1.0) < 1e-9, strcat_msg("split ratios must sum to 1, got ", sum));
    double want[3] = {ratios.train * static_cast<double>(n), ratios.val * static_cast<double>(n),
                      ratios.test * static_cast<double>(n)};
    std::array<std::int64_t, 3> counts{};
    double frac[3];
    std::int64_t assigned = 0;
    for (int a = 0; a < 3; ++a) {
        counts[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(std::floor(want[a] + 1e-9));
        frac[a] = want[a] - static_cast<double>(counts[static_cast<std::size_t>(a)]);
        assigned += counts[static_cast<std::size_t>(a)];
    }
    while (assigned < n) {
        int best = 0;
        for (int a = 1; a < 3; ++a)
            if (frac[a] > frac[best]) best = a;
        ++counts[static_cast<std::size_t>(best)];
        frac[best] = -1.0;
        ++assigned;
    }
    return counts;
}

DatasetManifest make_dataset(const std::string& out_dir, std::int64_t n_cases,
                             const PhantomSpec& spec_template, SplitRatios ratios,
                             std::uint64_t seed, std::int64_t workers) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto counts = split_counts(n_cases, ratios);
    DatasetManifest manifest;
    std::vector<PhantomSpec> specs(static_cast<std::size_t>(n_cases), spec_template);
    for (std::int64_t i = 0; i < n_cases; ++i)
        specs[static_cast<std::size_t>(i)].seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
    for (std::int64_t i = 0; i < n_cases; ++i) {
        ManifestEntry e;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "case_%03lld", static_cast<long long>(i));
        e.volume_path = strcat_msg(buf, ".img.vvol");
        e.mask_path = strcat_msg(buf, ".mask.vvol");
        e.split = i < counts[0] ? "train" : i < counts[0] + counts[1] ? "val" : "test";
        manifest.entries.push_back(std::move(e));
    }
    // generation is independent per case; worker count does not affect bytes
    auto run_range = [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            Phantom ph = generate_phantom(specs[static_cast<std::size_t>(i)]);
            const auto& e = manifest.entries[static_cast<std::size_t>(i)];
            write_volume((fs::path(out_dir) / e.volume_path).string(), ph.image);
            write_volume((fs::path(out_dir) / e.mask_path).string(), ph.mask);
        }
    };
    std::int64_t nw = std::clamp<std::int64_t>(workers, 1, n_cases > 0 ? n_cases : 1);
    if (nw <= 1) {
        run_range(0, n_cases);
    } else {
        std::vector<std::thread> pool;
        for (std::int64_t w = 0; w < nw; ++w) {
            std::int64_t lo = n_cases * w / nw, hi = n_cases * (w + 1) / nw;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }
    write_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);
    return manifest;
}

}  // namespace comma
