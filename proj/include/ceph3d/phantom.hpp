#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ceph3d/common.hpp"
#include "ceph3d/landmarks.hpp"
#include "ceph3d/volume.hpp"

namespace ceph3d {

/// Synthetic skull phantom: a hollow bone ellipsoid with two anterior
/// orbital rims (solid tori) and two lateral ear-canal balls, rendered under
/// a random rigid pose. The four cephalometric landmarks have closed-form
/// world positions: Or = lowest point of each orbital rim, Po = most
/// superior point of each canal ball.
struct PhantomSpec {
    std::array<std::int64_t, 3> grid_shape{64, 64, 64};
    std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};

    std::array<double, 2> skull_semiaxis_x_mm{34.0, 40.0};
    std::array<double, 2> skull_semiaxis_y_mm{40.0, 46.0};
    std::array<double, 2> skull_semiaxis_z_mm{36.0, 42.0};
    double shell_thickness_mm = 5.0;

    std::array<double, 2> orbit_ring_radius_mm{7.0, 10.0};
    std::array<double, 2> orbit_tube_radius_mm{2.0, 3.0};
    std::array<double, 2> canal_radius_mm{4.0, 6.0};

    double max_pose_rotation_deg = 10.0;
    double max_pose_translation_mm = 4.0;

    double background_intensity = 0.0;
    double bone_intensity = 1.0;
    double cavity_intensity = 0.3;
    double noise_std = 0.05;

    // Throws parameter_error when intensities coincide or any feature can
    // leave the grid at the range extremes.
    void validate() const;
};

/// Posed feature geometry in world coordinates, exposed so tests can scan
/// rendered features independently of the analytic landmark formulas.
struct PhantomGeometry {
    std::array<double, 3> skull_center;
    std::array<double, 3> skull_semiaxes;
    // rotation matrix of the pose (anatomy -> world)
    std::array<std::array<double, 3>, 3> rotation;
    // orbital rims: center, in-plane radius, tube radius; plane normal is
    // rotation * (0,1,0)
    std::array<std::array<double, 3>, 2> ring_center; // left, right
    double ring_radius = 0.0;
    double ring_tube_radius = 0.0;
    std::array<std::array<double, 3>, 2> canal_center; // left, right
    double canal_radius = 0.0;
};

struct Phantom {
    Volume volume;
    LandmarkSet landmarks;
    PhantomGeometry geometry;
};

/// Deterministic per (spec, seed). Poses that push a feature outside the
/// grid are redrawn a bounded number of times before a geometry error.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

struct DatasetManifest {
    std::vector<std::string> ids;
    std::vector<std::uint64_t> seeds;
    std::string path;
};

/// Write n phantoms (volume + landmark files) plus a manifest into out_dir.
DatasetManifest generate_dataset(std::int64_t n, const PhantomSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir);

} // namespace ceph3d
