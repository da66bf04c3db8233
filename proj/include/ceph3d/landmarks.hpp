#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ceph3d/volume.hpp"

namespace ceph3d {

/// The four cephalometric landmarks modeled here, in canonical order.
inline const std::array<std::string, 4>& canonical_landmark_names() {
    static const std::array<std::string, 4> names = {"Or_left", "Or_right", "Po_left", "Po_right"};
    return names;
}

/// Ordered, uniquely named world-space points. Cephalometric sets carry
/// exactly the four canonical names in canonical order.
struct LandmarkSet {
    std::vector<std::pair<std::string, WorldPoint>> entries;

    std::size_t size() const { return entries.size(); }
    const WorldPoint& point(std::size_t idx) const { return entries[idx].second; }
    const std::string& name(std::size_t idx) const { return entries[idx].first; }
    const WorldPoint* find(const std::string& name) const;

    // Throws completeness/duplication/data errors; cephalometric mode also
    // requires exactly the canonical four, in order.
    void validate(bool cephalometric = true) const;
};

/// Per-landmark likelihood grids over the (nz, ny, nx) working volume,
/// channel-major. An associated Volume supplies world geometry.
struct HeatmapStack {
    std::int64_t channels = 0;
    std::array<std::int64_t, 3> shape{0, 0, 0}; // nx, ny, nz
    std::vector<double> data;                    // layout (L, nz, ny, nx)

    std::int64_t voxels_per_channel() const { return shape[0] * shape[1] * shape[2]; }
    double& at(std::int64_t l, std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[((l * shape[2] + k) * shape[1] + j) * shape[0] + i];
    }
    double at(std::int64_t l, std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[((l * shape[2] + k) * shape[1] + j) * shape[0] + i];
    }
};

/// Read landmarks from either the canonical text format (one
/// "name x y z" record per line) or an MITK point-set XML file; the
/// result is reordered canonically regardless of file order.
LandmarkSet parse_landmarks(const std::string& path);

/// Write the canonical text format. Round-trips coordinates exactly.
void write_landmarks(const LandmarkSet& lm, const std::string& path);

/// Unnormalized Gaussian targets, one channel per point: value at voxel v is
/// exp(-|v - p|^2 / (2 sigma^2)), peak 1 at the landmark. Points may lie
/// outside the grid; values are still defined.
HeatmapStack gaussian_heatmap_target(const std::vector<VoxelCoord>& points,
                                     const std::array<std::int64_t, 3>& shape,
                                     double sigma);

/// Drop the left-right world axis (x), keeping the sagittal (y, z) pair.
std::array<double, 2> lateral_project(const WorldPoint& p);

} // namespace ceph3d
