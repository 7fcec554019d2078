#pragma once

#include <optional>

#include "comma/volume_io.hpp"

namespace comma {

// Voxel-overlap Dice: 2|P∩G| / (|P|+|G|); both-empty convention 1.
double dice(const BinaryMask3D& pred, const BinaryMask3D& gt);

// Topology-preserving iterative thinning, 26-connected foreground against
// 6-connected background. Curve endpoints are retained, so tubes reduce to
// one-voxel centerlines.
BinaryMask3D skeletonize(const BinaryMask3D& mask);

// Whether deleting (i,j,k) preserves topology (simple point in (26,6)).
bool is_simple_point(const BinaryMask3D& mask, std::int64_t i, std::int64_t j, std::int64_t k);

// Harmonic mean of skeleton precision |S_P∩G|/|S_P| and skeleton sensitivity
// |S_G∩P|/|S_G|.
double cldice(const BinaryMask3D& pred, const BinaryMask3D& gt);

// Normalized surface distance at tolerance tau (voxel units): the fraction of
// boundary voxels of each mask lying within tau of the other mask's boundary,
// pooled over both boundaries. Boundary voxels are mask voxels with at least
// one background 6-neighbor (outside the volume counts as background).
double nsd(const BinaryMask3D& pred, const BinaryMask3D& gt, double tau = 1.0);

// |mask| / (H*W*D)
double sparsity_index(const BinaryMask3D& mask);

// 2 * mean Euclidean distance of mask voxels to their centroid, normalized by
// the volume diagonal sqrt(H^2+W^2+D^2). Empty mask -> 0.
double dispersion_index(const BinaryMask3D& mask);

// Keeps voxels whose coordinate along `axis` is strictly greater than
// `threshold`; the distal-vessel split.
BinaryMask3D split_small_vessels(const BinaryMask3D& mask, int axis, std::int64_t threshold);

// 26-connected foreground component count (used by skeleton invariants).
std::int64_t count_components_26(const BinaryMask3D& mask);

// Exact squared Euclidean distance transform to the set of seed voxels
// (x-fastest layout, one value per voxel; empty seed set -> +inf everywhere).
std::vector<double> squared_edt(const std::vector<std::uint8_t>& seeds,
                                std::array<std::int64_t, 3> extents);

struct SmallVesselSplit {
    int axis = 2;  // 0=x, 1=y, 2=z
    std::int64_t threshold = 60;
};

struct MetricsReport {
    std::string case_name;
    double dice = 0.0;
    double cldice = 0.0;
    double nsd = 0.0;
    double si = 0.0;
    double di = 0.0;
    std::optional<double> sv_dice;
    std::optional<double> sv_cldice;
    std::optional<double> sv_nsd;
};

// Full per-case evaluation; SI/DI describe the reference mask.
MetricsReport evaluate_case(const std::string& case_name, const BinaryMask3D& pred,
                            const BinaryMask3D& gt, double tau = 1.0,
                            const std::optional<SmallVesselSplit>& sv = std::nullopt);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);
std::string metrics_json(const std::vector<MetricsReport>& rows);

}  // namespace comma
