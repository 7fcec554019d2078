#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace comma {

// 3-D scalar field, x-fastest in memory (index i over the first extent runs
// fastest), matching the on-disk layout.
struct Volume {
    std::array<std::int64_t, 3> extents{0, 0, 0};  // (H, W, D) along (x, y, z)
    std::vector<float> voxels;

    static Volume zeros(std::array<std::int64_t, 3> ext) {
        Volume v;
        v.extents = ext;
        v.voxels.assign(static_cast<std::size_t>(ext[0] * ext[1] * ext[2]), 0.0f);
        return v;
    }

    std::int64_t count() const { return extents[0] * extents[1] * extents[2]; }
    std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i + extents[0] * (j + extents[1] * k);
    }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return voxels[static_cast<std::size_t>(index(i, j, k))];
    }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return voxels[static_cast<std::size_t>(index(i, j, k))];
    }
};

struct BinaryMask3D {
    std::array<std::int64_t, 3> extents{0, 0, 0};
    std::vector<std::uint8_t> voxels;  // strictly 0 or 1

    static BinaryMask3D zeros(std::array<std::int64_t, 3> ext) {
        BinaryMask3D m;
        m.extents = ext;
        m.voxels.assign(static_cast<std::size_t>(ext[0] * ext[1] * ext[2]), 0);
        return m;
    }

    std::int64_t count() const { return extents[0] * extents[1] * extents[2]; }
    std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i + extents[0] * (j + extents[1] * k);
    }
    std::uint8_t& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return voxels[static_cast<std::size_t>(index(i, j, k))];
    }
    std::uint8_t at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return voxels[static_cast<std::size_t>(index(i, j, k))];
    }
    std::int64_t popcount() const {
        std::int64_t n = 0;
        for (auto v : voxels) n += v != 0;
        return n;
    }
};

// VVOL container: magic "VVOL0001" (8 bytes), u8 dtype (0 = 32-bit IEEE-754
// real, 1 = u8 binary), 3 reserved bytes, u32-LE extents (H, W, D), raw
// little-endian data in x-fastest order.
void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const BinaryMask3D& m);
Volume read_volume(const std::string& path);
BinaryMask3D read_mask(const std::string& path);

// Peeks at the header: 0 = real volume, 1 = binary mask, -1 = not a VVOL file.
int vvol_dtype(const std::string& path);

struct ManifestEntry {
    std::string volume_path;
    std::string mask_path;
    std::string split;  // train | val | test
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& tag) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == tag) out.push_back(e);
        return out;
    }
};

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

}  // namespace comma
