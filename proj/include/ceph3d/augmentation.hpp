#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "ceph3d/common.hpp"
#include "ceph3d/landmarks.hpp"
#include "ceph3d/volume.hpp"

namespace ceph3d {

struct AugmentConfig {
    std::array<double, 2> contrast_range{0.8, 1.2};
    std::array<double, 2> intensity_shift_range{-0.2, 0.2};
    double max_rotation_deg = 15.0;
    double max_translation_mm = 10.0;
    double erase_probability = 0.3;
    std::array<std::int64_t, 2> erase_size_range{8, 24}; // voxels per side
    int mirror_axis = 0;                                  // 0 = left-right (sagittal plane)
    double mirror_probability = 0.5;
    std::uint64_t seed = 0;

    void validate() const;

    KvFile to_kv(const std::string& prefix = "augment.") const;
    static AugmentConfig from_kv(const KvFile& kv, const std::string& prefix = "augment.");
};

/// v * c + s with c ~ U(contrast_range), s ~ U(intensity_shift_range).
/// Geometry and landmarks are untouched. Draw order: contrast, then shift.
Volume apply_photometric(const Volume& v, const AugmentConfig& cfg, Rng& rng);

/// One rigid(+reflection) world map: rotation by U(-max,+max) degrees about a
/// uniformly random axis through the volume center, then translation with
/// each component U(-max,+max) mm, then (with mirror_probability) reflection
/// across the coordinate plane through the center. The volume is resampled
/// through the inverse map in a single trilinear pass with out-of-field
/// voxels filled with the volume minimum; landmark points are mapped exactly.
/// Mirroring across the left-right axis also swaps the _left/_right labels so
/// anatomical naming stays correct.
/// Draw order: axis (cos-theta, phi), angle, translation x/y/z, mirror u.
std::pair<Volume, LandmarkSet> apply_geometric(const Volume& v, const LandmarkSet& lm,
                                               const AugmentConfig& cfg, Rng& rng);

/// With erase_probability, fill a random axis-aligned box (sides drawn from
/// erase_size_range, fully inside the grid) with the volume minimum.
/// Draw order: decision u, then sides x/y/z, then corner x/y/z.
Volume random_erase(const Volume& v, const AugmentConfig& cfg, Rng& rng);

/// The composed world-space map sampled by apply_geometric, exposed so tests
/// and target construction can transform points identically.
struct RigidMap {
    std::array<std::array<double, 3>, 3> a{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    std::array<double, 3> t{0, 0, 0};
    bool mirrored = false;

    WorldPoint apply(const WorldPoint& p) const;
    RigidMap inverse() const;
};

RigidMap sample_rigid_map(const Volume& v, const AugmentConfig& cfg, Rng& rng);
Volume resample_through(const Volume& v, const RigidMap& map);
LandmarkSet map_landmarks(const LandmarkSet& lm, const RigidMap& map);

} // namespace ceph3d
