#include "ceph3d/augmentation.hpp"

#include <algorithm>
#include <cmath>

#include "ceph3d/errors.hpp"

namespace ceph3d {

void AugmentConfig::validate() const {
    if (contrast_range[0] > contrast_range[1])
        throw parameter_error("augment: contrast_range is not well-ordered");
    if (intensity_shift_range[0] > intensity_shift_range[1])
        throw parameter_error("augment: intensity_shift_range is not well-ordered");
    if (erase_size_range[0] > erase_size_range[1] || erase_size_range[0] < 1)
        throw parameter_error("augment: erase_size_range is not well-ordered or below 1");
    if (erase_probability < 0.0 || erase_probability > 1.0)
        throw parameter_error("augment: erase_probability must lie in [0,1]");
    if (mirror_probability < 0.0 || mirror_probability > 1.0)
        throw parameter_error("augment: mirror_probability must lie in [0,1]");
    if (max_rotation_deg < 0.0) throw parameter_error("augment: max_rotation_deg must be >= 0");
    if (max_translation_mm < 0.0) throw parameter_error("augment: max_translation_mm must be >= 0");
    if (mirror_axis < 0 || mirror_axis > 2) throw parameter_error("augment: mirror_axis must be 0, 1 or 2");
}

KvFile AugmentConfig::to_kv(const std::string& prefix) const {
    KvFile kv;
    kv.set(prefix + "contrast_range", join_doubles({contrast_range[0], contrast_range[1]}));
    kv.set(prefix + "intensity_shift_range",
           join_doubles({intensity_shift_range[0], intensity_shift_range[1]}));
    kv.set(prefix + "max_rotation_deg", format_double(max_rotation_deg));
    kv.set(prefix + "max_translation_mm", format_double(max_translation_mm));
    kv.set(prefix + "erase_probability", format_double(erase_probability));
    kv.set(prefix + "erase_size_range", join_ints({erase_size_range[0], erase_size_range[1]}));
    kv.set(prefix + "mirror_axis", std::to_string(mirror_axis));
    kv.set(prefix + "mirror_probability", format_double(mirror_probability));
    return kv;
}

AugmentConfig AugmentConfig::from_kv(const KvFile& kv, const std::string& prefix) {
    AugmentConfig cfg;
    auto opt2 = [&](const std::string& key, std::array<double, 2>& out) {
        if (const auto* v = kv.find(prefix + key)) {
            const auto d = parse_doubles(prefix + key, *v, 2);
            out = {d[0], d[1]};
        }
    };
    opt2("contrast_range", cfg.contrast_range);
    opt2("intensity_shift_range", cfg.intensity_shift_range);
    if (const auto* v = kv.find(prefix + "max_rotation_deg"))
        cfg.max_rotation_deg = parse_double(prefix + "max_rotation_deg", *v);
    if (const auto* v = kv.find(prefix + "max_translation_mm"))
        cfg.max_translation_mm = parse_double(prefix + "max_translation_mm", *v);
    if (const auto* v = kv.find(prefix + "erase_probability"))
        cfg.erase_probability = parse_double(prefix + "erase_probability", *v);
    if (const auto* v = kv.find(prefix + "erase_size_range")) {
        const auto i = parse_ints(prefix + "erase_size_range", *v, 2);
        cfg.erase_size_range = {i[0], i[1]};
    }
    if (const auto* v = kv.find(prefix + "mirror_axis"))
        cfg.mirror_axis = static_cast<int>(parse_int(prefix + "mirror_axis", *v));
    if (const auto* v = kv.find(prefix + "mirror_probability"))
        cfg.mirror_probability = parse_double(prefix + "mirror_probability", *v);
    cfg.validate();
    return cfg;
}

WorldPoint RigidMap::apply(const WorldPoint& p) const {
    const double q[3] = {p.x, p.y, p.z};
    double r[3];
    for (int d = 0; d < 3; ++d)
        r[d] = a[d][0] * q[0] + a[d][1] * q[1] + a[d][2] * q[2] + t[d];
    return {r[0], r[1], r[2]};
}

RigidMap RigidMap::inverse() const {
    // a is orthogonal (rotation times optional reflection), so a^-1 = a^T.
    RigidMap inv;
    inv.mirrored = mirrored;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) inv.a[r][c] = a[c][r];
    for (int d = 0; d < 3; ++d)
        inv.t[d] = -(inv.a[d][0] * t[0] + inv.a[d][1] * t[1] + inv.a[d][2] * t[2]);
    return inv;
}

namespace {

std::array<double, 3> volume_center_world(const Volume& v) {
    return {v.origin[0] + 0.5 * (v.shape[0] - 1) * v.spacing[0],
            v.origin[1] + 0.5 * (v.shape[1] - 1) * v.spacing[1],
            v.origin[2] + 0.5 * (v.shape[2] - 1) * v.spacing[2]};
}

} // namespace

RigidMap sample_rigid_map(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto c = volume_center_world(v);

    // Uniform axis on the sphere, then the rotation angle.
    const double ct = uniform_in(rng, -1.0, 1.0);
    const double phi = uniform_in(rng, 0.0, 2.0 * 3.14159265358979323846);
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double axis[3] = {st * std::cos(phi), st * std::sin(phi), ct};
    const double angle = uniform_in(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg) *
                         3.14159265358979323846 / 180.0;

    // Rodrigues rotation matrix.
    const double ca = std::cos(angle), sa = std::sin(angle), omc = 1.0 - ca;
    double rot[3][3];
    rot[0][0] = ca + axis[0] * axis[0] * omc;
    rot[0][1] = axis[0] * axis[1] * omc - axis[2] * sa;
    rot[0][2] = axis[0] * axis[2] * omc + axis[1] * sa;
    rot[1][0] = axis[1] * axis[0] * omc + axis[2] * sa;
    rot[1][1] = ca + axis[1] * axis[1] * omc;
    rot[1][2] = axis[1] * axis[2] * omc - axis[0] * sa;
    rot[2][0] = axis[2] * axis[0] * omc - axis[1] * sa;
    rot[2][1] = axis[2] * axis[1] * omc + axis[0] * sa;
    rot[2][2] = ca + axis[2] * axis[2] * omc;

    double trans[3];
    for (int d = 0; d < 3; ++d)
        trans[d] = uniform_in(rng, -cfg.max_translation_mm, cfg.max_translation_mm);
    const bool mirror = uniform01(rng) < cfg.mirror_probability;

    // p' = M (R (p - c) + c + trans), with M reflecting across the
    // coordinate plane through the center when mirroring.
    RigidMap map;
    map.mirrored = mirror;
    double off[3];
    for (int d = 0; d < 3; ++d) {
        off[d] = c[d] + trans[d] - (rot[d][0] * c[0] + rot[d][1] * c[1] + rot[d][2] * c[2]);
        for (int e = 0; e < 3; ++e) map.a[d][e] = rot[d][e];
        map.t[d] = off[d];
    }
    if (mirror) {
        const int ax = cfg.mirror_axis;
        for (int e = 0; e < 3; ++e) map.a[ax][e] = -map.a[ax][e];
        map.t[ax] = 2.0 * c[ax] - map.t[ax];
    }
    return map;
}

Volume resample_through(const Volume& v, const RigidMap& map) {
    v.validate();
    const RigidMap inv = map.inverse();
    const float fill = *std::min_element(v.data.begin(), v.data.end());

    Volume out = v;
    for (std::int64_t k = 0; k < v.shape[2]; ++k)
        for (std::int64_t j = 0; j < v.shape[1]; ++j)
            for (std::int64_t i = 0; i < v.shape[0]; ++i) {
                const WorldPoint p = voxel_to_world(v, {static_cast<double>(i),
                                                        static_cast<double>(j),
                                                        static_cast<double>(k)});
                const WorldPoint q = inv.apply(p);
                const VoxelCoord s = world_to_voxel(v, q);
                if (s.i < 0.0 || s.i > static_cast<double>(v.shape[0] - 1) ||
                    s.j < 0.0 || s.j > static_cast<double>(v.shape[1] - 1) ||
                    s.k < 0.0 || s.k > static_cast<double>(v.shape[2] - 1)) {
                    out.at(i, j, k) = fill;
                } else {
                    out.at(i, j, k) = static_cast<float>(sample_trilinear(v, s.i, s.j, s.k));
                }
            }
    return out;
}

LandmarkSet map_landmarks(const LandmarkSet& lm, const RigidMap& map) {
    LandmarkSet out = lm;
    for (auto& [name, p] : out.entries) p = map.apply(p);

    // Reflection across the left-right plane turns left anatomy into right
    // anatomy; swap the paired labels so names track the features.
    if (map.mirrored) {
        auto swap_pair = [&](const std::string& a, const std::string& b) {
            WorldPoint* pa = nullptr;
            WorldPoint* pb = nullptr;
            for (auto& [name, p] : out.entries) {
                if (name == a) pa = &p;
                if (name == b) pb = &p;
            }
            if (pa && pb) std::swap(*pa, *pb);
        };
        swap_pair("Or_left", "Or_right");
        swap_pair("Po_left", "Po_right");
    }
    return out;
}

std::pair<Volume, LandmarkSet> apply_geometric(const Volume& v, const LandmarkSet& lm,
                                               const AugmentConfig& cfg, Rng& rng) {
    const RigidMap map = sample_rigid_map(v, cfg, rng);
    return {resample_through(v, map), map_landmarks(lm, map)};
}

Volume apply_photometric(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    v.validate();
    const double c = uniform_in(rng, cfg.contrast_range[0], cfg.contrast_range[1]);
    const double s = uniform_in(rng, cfg.intensity_shift_range[0], cfg.intensity_shift_range[1]);
    Volume out = v;
    for (auto& f : out.data) f = static_cast<float>(f * c + s);
    return out;
}

Volume random_erase(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    v.validate();
    for (int d = 0; d < 3; ++d)
        if (cfg.erase_size_range[1] > v.shape[d])
            throw parameter_error("augment: erase_size_range exceeds grid dim " + std::to_string(d));

    Volume out = v;
    if (uniform01(rng) >= cfg.erase_probability) return out;

    std::int64_t size[3], corner[3];
    for (int d = 0; d < 3; ++d)
        size[d] = uniform_int(rng, cfg.erase_size_range[0], cfg.erase_size_range[1]);
    for (int d = 0; d < 3; ++d)
        corner[d] = uniform_int(rng, 0, v.shape[d] - size[d]);

    const float fill = *std::min_element(v.data.begin(), v.data.end());
    for (std::int64_t k = corner[2]; k < corner[2] + size[2]; ++k)
        for (std::int64_t j = corner[1]; j < corner[1] + size[1]; ++j)
            for (std::int64_t i = corner[0]; i < corner[0] + size[0]; ++i)
                out.at(i, j, k) = fill;
    return out;
}

} // namespace ceph3d
