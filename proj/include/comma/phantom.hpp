#pragma once

#include "comma/volume_io.hpp"

namespace comma {

// Deterministic branching-tube phantom. Same spec => bitwise-same volume and
// mask. The optional decoy channel adds a mirrored copy of the tree to the
// image only, producing structures that are locally indistinguishable from
// vessels but unlabeled — position is the only cue separating them.
struct PhantomSpec {
    std::uint64_t seed = 1;
    std::array<std::int64_t, 3> extents{64, 64, 64};
    int branching_depth = 4;
    double root_radius = 2.2;       // voxels; clamped to >= 0.5
    double radius_decay = 0.75;     // per branching level
    double branch_angle_min = 18.0; // degrees off the parent direction
    double branch_angle_max = 45.0;
    double intensity_contrast = 1.0;
    double noise_level = 0.05;
    double bias_strength = 0.2;
    double decoy_contrast = 0.0;    // 0 disables the mirrored decoy tree
};

struct TubeSegment {
    std::array<double, 3> p0, p1;
    double radius;
};

// The segment skeleton the mask is rasterized from (exposed for the
// mask/tree consistency oracle).
std::vector<TubeSegment> phantom_segments(const PhantomSpec& spec);

struct Phantom {
    Volume image;
    BinaryMask3D mask;
};

Phantom generate_phantom(const PhantomSpec& spec);

struct SplitRatios {
    double train = 0.8, val = 0.0, test = 0.2;
};

// Writes n_cases phantoms plus manifest.tsv under out_dir; per-case seeds are
// derived from (seed, index). Returns the manifest with paths relative to
// out_dir.
DatasetManifest make_dataset(const std::string& out_dir, std::int64_t n_cases,
                             const PhantomSpec& spec_template, SplitRatios ratios,
                             std::uint64_t seed, std::int64_t workers = 1);

// Split sizes by the largest-remainder rule; sums to n.
std::array<std::int64_t, 3> split_counts(std::int64_t n, SplitRatios ratios);

}  // namespace comma
