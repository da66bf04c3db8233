#include "ceph3d/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ceph3d/common.hpp"
#include "ceph3d/errors.hpp"

namespace ceph3d {

namespace fs = std::filesystem;

void Volume::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (shape[d] < 1)
            throw size_error("volume shape component " + std::to_string(d) + " must be >= 1");
        if (!(spacing[d] > 0.0) || !std::isfinite(spacing[d]))
            throw parameter_error("volume spacing component " + std::to_string(d) + " must be > 0");
        if (!std::isfinite(origin[d]))
            throw data_error("volume origin component " + std::to_string(d) + " is not finite");
    }
    if (static_cast<std::int64_t>(data.size()) != num_voxels())
        throw size_error("volume data holds " + std::to_string(data.size()) +
                         " elements, header declares " + std::to_string(num_voxels()));
    for (float f : data)
        if (!std::isfinite(f)) throw data_error("volume contains a non-finite value");
}

namespace {

// Accepts "<stem>", "<stem>.raw" or "<stem>.volhdr".
std::pair<std::string, std::string> volume_paths(const std::string& path) {
    fs::path p(path);
    if (p.extension() == ".raw" || p.extension() == ".volhdr") p.replace_extension();
    return {p.string() + ".raw", p.string() + ".volhdr"};
}

} // namespace

Volume load_volume(const std::string& path) {
    const auto [raw_path, hdr_path] = volume_paths(path);

    const KvFile hdr = [&] {
        try {
            return load_kv_file(hdr_path);
        } catch (const io_error& e) {
            throw format_error("volume header: " + std::string(e.what()));
        }
    }();

    static const char* kAllowed[] = {"shape", "spacing_mm", "origin_mm", "dtype"};
    for (const auto& e : hdr.entries) {
        if (std::find(std::begin(kAllowed), std::end(kAllowed), e.key) == std::end(kAllowed))
            throw format_error(hdr_path + ": unknown header key '" + e.key + "'");
    }
    for (const char* k : kAllowed)
        if (!hdr.has(k)) throw format_error(hdr_path + ": missing header key '" + std::string(k) + "'");
    if (hdr.get("dtype") != "f32le")
        throw format_error(hdr_path + ": dtype must be 'f32le', got '" + hdr.get("dtype") + "'");

    Volume v;
    const auto shape = parse_ints("shape", hdr.get("shape"), 3);
    const auto spacing = parse_doubles("spacing_mm", hdr.get("spacing_mm"), 3);
    const auto origin = parse_doubles("origin_mm", hdr.get("origin_mm"), 3);
    for (int d = 0; d < 3; ++d) {
        v.shape[d] = shape[d];
        v.spacing[d] = spacing[d];
        v.origin[d] = origin[d];
    }
    if (v.shape[0] < 1 || v.shape[1] < 1 || v.shape[2] < 1)
        throw format_error(hdr_path + ": shape components must be >= 1");

    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw io_error("cannot open '" + raw_path + "'");
    raw.seekg(0, std::ios::end);
    const std::int64_t bytes = raw.tellg();
    raw.seekg(0);
    if (bytes % 4 != 0)
        throw format_error(raw_path + ": byte count " + std::to_string(bytes) + " is not a multiple of 4");
    const std::int64_t count = bytes / 4;
    if (count != v.num_voxels())
        throw size_error(raw_path + ": has " + std::to_string(count) + " elements, header declares " +
                         std::to_string(v.num_voxels()));
    v.data.resize(static_cast<std::size_t>(count));
    raw.read(reinterpret_cast<char*>(v.data.data()), bytes);
    if (!raw) throw io_error("short read from '" + raw_path + "'");

    v.validate();
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    v.validate();
    const auto [raw_path, hdr_path] = volume_paths(path);
    const auto parent = fs::path(raw_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);

    KvFile hdr;
    hdr.set("shape", join_ints({v.shape[0], v.shape[1], v.shape[2]}));
    hdr.set("spacing_mm", join_doubles({v.spacing[0], v.spacing[1], v.spacing[2]}));
    hdr.set("origin_mm", join_doubles({v.origin[0], v.origin[1], v.origin[2]}));
    hdr.set("dtype", "f32le");
    save_kv_file(hdr, hdr_path);

    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw io_error("cannot open '" + raw_path + "' for writing");
    raw.write(reinterpret_cast<const char*>(v.data.data()),
              static_cast<std::streamsize>(v.data.size() * 4));
    if (!raw) throw io_error("write to '" + raw_path + "' failed");
}

Volume zscore_normalize(const Volume& v) {
    v.validate();
    const std::int64_t n = v.num_voxels();
    double mean = 0.0;
    for (float f : v.data) mean += f;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float f : v.data) {
        const double d = f - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double denom = std::max(std::sqrt(var), 1e-8);

    Volume out = v;
    for (auto& f : out.data) f = static_cast<float>((f - mean) / denom);
    return out;
}

double sample_trilinear(const Volume& v, double i, double j, double k) {
    const auto clampf = [](double t, double lo, double hi) { return std::min(std::max(t, lo), hi); };
    i = clampf(i, 0.0, static_cast<double>(v.shape[0] - 1));
    j = clampf(j, 0.0, static_cast<double>(v.shape[1] - 1));
    k = clampf(k, 0.0, static_cast<double>(v.shape[2] - 1));

    const std::int64_t i0 = std::min(static_cast<std::int64_t>(i), v.shape[0] - 1);
    const std::int64_t j0 = std::min(static_cast<std::int64_t>(j), v.shape[1] - 1);
    const std::int64_t k0 = std::min(static_cast<std::int64_t>(k), v.shape[2] - 1);
    const std::int64_t i1 = std::min(i0 + 1, v.shape[0] - 1);
    const std::int64_t j1 = std::min(j0 + 1, v.shape[1] - 1);
    const std::int64_t k1 = std::min(k0 + 1, v.shape[2] - 1);
    const double fi = i - static_cast<double>(i0);
    const double fj = j - static_cast<double>(j0);
    const double fk = k - static_cast<double>(k0);

    const double c000 = v.at(i0, j0, k0), c100 = v.at(i1, j0, k0);
    const double c010 = v.at(i0, j1, k0), c110 = v.at(i1, j1, k0);
    const double c001 = v.at(i0, j0, k1), c101 = v.at(i1, j0, k1);
    const double c011 = v.at(i0, j1, k1), c111 = v.at(i1, j1, k1);

    const double c00 = c000 + (c100 - c000) * fi;
    const double c10 = c010 + (c110 - c010) * fi;
    const double c01 = c001 + (c101 - c001) * fi;
    const double c11 = c011 + (c111 - c011) * fi;
    const double c0 = c00 + (c10 - c00) * fj;
    const double c1 = c01 + (c11 - c01) * fj;
    return c0 + (c1 - c0) * fk;
}

Volume resample_trilinear(const Volume& v, const std::array<std::int64_t, 3>& target_shape) {
    v.validate();
    for (int d = 0; d < 3; ++d)
        if (target_shape[d] < 1) throw parameter_error("resample target shape must be >= 1 per axis");

    Volume out;
    out.shape = target_shape;
    for (int d = 0; d < 3; ++d) {
        const double ratio = static_cast<double>(v.shape[d]) / static_cast<double>(target_shape[d]);
        out.spacing[d] = v.spacing[d] * ratio;
        // Both grids must cover the same world box; with voxel-center
        // addressing the box edge sits half a spacing outside the first
        // center, which gives this origin shift.
        out.origin[d] = v.origin[d] - 0.5 * v.spacing[d] + 0.5 * out.spacing[d];
    }
    out.data.resize(static_cast<std::size_t>(out.num_voxels()));

    // Map each target voxel center into source continuous indices. Using the
    // shared world frame keeps the mapping exact for the identity case.
    for (std::int64_t k = 0; k < out.shape[2]; ++k) {
        const double sk = (out.origin[2] + static_cast<double>(k) * out.spacing[2] - v.origin[2]) / v.spacing[2];
        for (std::int64_t j = 0; j < out.shape[1]; ++j) {
            const double sj = (out.origin[1] + static_cast<double>(j) * out.spacing[1] - v.origin[1]) / v.spacing[1];
            for (std::int64_t i = 0; i < out.shape[0]; ++i) {
                const double si = (out.origin[0] + static_cast<double>(i) * out.spacing[0] - v.origin[0]) / v.spacing[0];
                out.at(i, j, k) = static_cast<float>(sample_trilinear(v, si, sj, sk));
            }
        }
    }
    return out;
}

WorldPoint voxel_to_world(const Volume& v, const VoxelCoord& c) {
    return {v.origin[0] + c.i * v.spacing[0],
            v.origin[1] + c.j * v.spacing[1],
            v.origin[2] + c.k * v.spacing[2]};
}

VoxelCoord world_to_voxel(const Volume& v, const WorldPoint& p) {
    return {(p.x - v.origin[0]) / v.spacing[0],
            (p.y - v.origin[1]) / v.spacing[1],
            (p.z - v.origin[2]) / v.spacing[2]};
}

} // namespace ceph3d
