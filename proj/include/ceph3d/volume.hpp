#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ceph3d {

struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

// Continuous voxel indices; integer values address voxel centers.
struct VoxelCoord {
    double i = 0.0;
    double j = 0.0;
    double k = 0.0;
};

/// Axis-aligned scalar volume. Data is stored x-fastest/z-slowest, matching
/// the on-disk raw layout, so element (i,j,k) lives at i + nx*(j + ny*k).
/// Orientation is always the identity; origin is the world position of the
/// center of voxel (0,0,0).
struct Volume {
    std::array<std::int64_t, 3> shape{0, 0, 0}; // nx, ny, nz
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    std::vector<float> data;

    std::int64_t num_voxels() const { return shape[0] * shape[1] * shape[2]; }
    std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i + shape[0] * (j + shape[1] * k);
    }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[index(i, j, k)]; }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data[index(i, j, k)]; }

    // Throws (size/data/parameter error) when an invariant is broken.
    void validate() const;
};

/// Read `<name>.raw` + `<name>.volhdr`. `path` may name either file or the
/// common stem; the sidecar must carry exactly the keys shape, spacing_mm,
/// origin_mm and dtype = f32le.
Volume load_volume(const std::string& path);

/// Write the raw little-endian f32 array and its sidecar header.
void save_volume(const Volume& v, const std::string& path);

/// (data - mean) / max(stddev, 1e-8), population stddev over all voxels.
Volume zscore_normalize(const Volume& v);

/// Trilinear resample onto target_shape voxel centers. World extent is
/// preserved exactly: new spacing_d = spacing_d * shape_d / target_d, and the
/// origin shifts so both grids cover the same world box.
Volume resample_trilinear(const Volume& v, const std::array<std::int64_t, 3>& target_shape);

WorldPoint voxel_to_world(const Volume& v, const VoxelCoord& c);
VoxelCoord world_to_voxel(const Volume& v, const WorldPoint& p);

/// Sample the volume at a continuous voxel coordinate with trilinear
/// interpolation; coordinates outside the grid clamp to the border.
double sample_trilinear(const Volume& v, double i, double j, double k);

} // namespace ceph3d
