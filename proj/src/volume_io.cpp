#include "comma/volume_io.hpp"

#include <cstring>
#include <fstream>

#include "comma/common.hpp"

namespace comma {

namespace {

constexpr char kMagic[8] = {'V', 'V', 'O', 'L', '0', '0', '0', '1'};

struct Header {
    std::uint8_t dtype;
    std::array<std::int64_t, 3> extents;
};

void write_header(std::ostream& os, std::uint8_t dtype,
                  const std::array<std::int64_t, 3>& ext) {
    os.write(kMagic, 8);
    std::uint8_t pad[4] = {dtype, 0, 0, 0};
    os.write(reinterpret_cast<const char*>(pad), 4);
    for (auto e : ext) {
        std::uint32_t u = static_cast<std::uint32_t>(e);
        os.write(reinterpret_cast<const char*>(&u), 4);
    }
}

Header read_header(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(strcat_msg("bad VVOL magic at byte 0 in ", path));
    std::uint8_t pad[4];
    is.read(reinterpret_cast<char*>(pad), 4);
    if (!is) throw std::runtime_error(strcat_msg("truncated VVOL header at byte 8 in ", path));
    if (pad[0] > 1)
        throw std::runtime_error(strcat_msg("unknown VVOL dtype ", int(pad[0]), " at byte 8 in ",
                                            path));
    Header h;
    h.dtype = pad[0];
    for (int a = 0; a < 3; ++a) {
        std::uint32_t u = 0;
        is.read(reinterpret_cast<char*>(&u), 4);
        if (!is)
            throw std::runtime_error(strcat_msg("truncated VVOL extents at byte ", 12 + 4 * a,
                                                " in ", path));
        h.extents[a] = static_cast<std::int64_t>(u);
    }
    return h;
}

void read_payload(std::istream& is, char* dst, std::int64_t bytes, const std::string& path) {
    is.read(dst, bytes);
    std::int64_t got = is.gcount();
    if (got != bytes)
        throw std::runtime_error(strcat_msg("truncated VVOL payload in ", path, ": expected ",
                                            bytes, " bytes after the 24-byte header, got ", got));
    // trailing junk would make round-trips ambiguous
    char probe;
    if (is.read(&probe, 1); is.gcount() != 0)
        throw std::runtime_error(strcat_msg("trailing bytes after VVOL payload in ", path));
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(strcat_msg("cannot open for writing: ", path));
    write_header(os, 0, v.extents);
    os.write(reinterpret_cast<const char*>(v.voxels.data()),
             static_cast<std::streamsize>(sizeof(float) * v.voxels.size()));
    if (!os) throw std::runtime_error(strcat_msg("write failed: ", path));
}

void write_volume(const std::string& path, const BinaryMask3D& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(strcat_msg("cannot open for writing: ", path));
    write_header(os, 1, m.extents);
    os.write(reinterpret_cast<const char*>(m.voxels.data()),
             static_cast<std::streamsize>(m.voxels.size()));
    if (!os) throw std::runtime_error(strcat_msg("write failed: ", path));
}

Volume read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error(strcat_msg("cannot open: ", path));
    Header h = read_header(is, path);
    if (h.dtype != 0)
        throw std::runtime_error(strcat_msg("expected real-valued VVOL (dtype 0) in ", path,
                                            ", found dtype ", int(h.dtype), " at byte 8"));
    Volume v = Volume::zeros(h.extents);
    read_payload(is, reinterpret_cast<char*>(v.voxels.data()),
                 static_cast<std::int64_t>(sizeof(float)) * v.count(), path);
    return v;
}

BinaryMask3D read_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error(strcat_msg("cannot open: ", path));
    Header h = read_header(is, path);
    if (h.dtype != 1)
        throw std::runtime_error(strcat_msg("expected binary VVOL (dtype 1) in ", path,
                                            ", found dtype ", int(h.dtype), " at byte 8"));
    BinaryMask3D m = BinaryMask3D::zeros(h.extents);
    read_payload(is, reinterpret_cast<char*>(m.voxels.data()), m.count(), path);
    for (auto& b : m.voxels)
        if (b > 1) throw std::runtime_error(strcat_msg("non-binary voxel value in ", path));
    return m;
}

int vvol_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return -1;
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) return -1;
    char dtype = 0;
    is.read(&dtype, 1);
    if (!is || dtype > 1) return -1;
    return dtype;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error(strcat_msg("cannot open for writing: ", path));
    for (const auto& e : m.entries)
        os << e.volume_path << '\t' << e.mask_path << '\t' << e.split << '\n';
    if (!os) throw std::runtime_error(strcat_msg("write failed: ", path));
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error(strcat_msg("cannot open manifest: ", path));
    DatasetManifest m;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error(strcat_msg("malformed manifest line ", lineno, " in ", path));
        ManifestEntry e;
        e.volume_path = line.substr(0, t1);
        e.mask_path = line.substr(t1 + 1, t2 - t1 - 1);
        e.split = line.substr(t2 + 1);
        if (e.split != "train" && e.split != "val" && e.split != "test")
            throw std::runtime_error(strcat_msg("unknown split tag '", e.split, "' on line ",
                                                lineno, " of ", path));
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace comma
