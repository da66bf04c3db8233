#include "ceph3d/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ceph3d/errors.hpp"

namespace ceph3d {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
    double x = 0, y = 0, z = 0;
};
Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 mul(const Mat3& m, Vec3 v) {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Mat3 rodrigues(Vec3 axis, double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle), omc = 1.0 - ca;
    Mat3 r;
    r[0][0] = ca + axis.x * axis.x * omc;
    r[0][1] = axis.x * axis.y * omc - axis.z * sa;
    r[0][2] = axis.x * axis.z * omc + axis.y * sa;
    r[1][0] = axis.y * axis.x * omc + axis.z * sa;
    r[1][1] = ca + axis.y * axis.y * omc;
    r[1][2] = axis.y * axis.z * omc - axis.x * sa;
    r[2][0] = axis.z * axis.x * omc - axis.y * sa;
    r[2][1] = axis.z * axis.y * omc + axis.x * sa;
    r[2][2] = ca + axis.z * axis.z * omc;
    return r;
}

// Anatomy-frame feature placement, parameterized by the sampled skull
// semi-axes. Positive x is the patient's left.
struct AnatomyLayout {
    Vec3 ring_center_left, ring_center_right;
    Vec3 canal_center_left, canal_center_right;
};

AnatomyLayout layout_for(double a, double b, double c) {
    AnatomyLayout l;
    l.ring_center_left = {0.45 * a, 0.80 * b, 0.25 * c};
    l.ring_center_right = {-0.45 * a, 0.80 * b, 0.25 * c};
    l.canal_center_left = {0.90 * a, -0.15 * b, 0.0};
    l.canal_center_right = {-0.90 * a, -0.15 * b, 0.0};
    return l;
}

} // namespace

void PhantomSpec::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (grid_shape[d] < 8) throw parameter_error("phantom grid must be at least 8 voxels per axis");
        if (!(spacing_mm[d] > 0.0)) throw parameter_error("phantom spacing must be > 0");
    }
    auto ordered = [](const std::array<double, 2>& r) { return r[0] <= r[1] && r[0] > 0.0; };
    if (!ordered(skull_semiaxis_x_mm) || !ordered(skull_semiaxis_y_mm) || !ordered(skull_semiaxis_z_mm))
        throw parameter_error("phantom skull semi-axis ranges must be positive and ordered");
    if (!ordered(orbit_ring_radius_mm) || !ordered(orbit_tube_radius_mm) || !ordered(canal_radius_mm))
        throw parameter_error("phantom feature radius ranges must be positive and ordered");
    if (!(shell_thickness_mm > 0.0)) throw parameter_error("phantom shell thickness must be > 0");
    if (max_pose_rotation_deg < 0.0 || max_pose_translation_mm < 0.0)
        throw parameter_error("phantom pose jitter ranges must be >= 0");
    if (bone_intensity == background_intensity || cavity_intensity == background_intensity ||
        bone_intensity == cavity_intensity)
        throw parameter_error("phantom intensity levels must be distinct");
    if (noise_std < 0.0) throw parameter_error("phantom noise std must be >= 0");

    // Worst-case world reach of any feature (rotation preserves distance to
    // the center, so |center| + radius + translation bounds it).
    const double a = skull_semiaxis_x_mm[1], b = skull_semiaxis_y_mm[1], c = skull_semiaxis_z_mm[1];
    const AnatomyLayout l = layout_for(a, b, c);
    const double ring_reach = norm(l.ring_center_left) + orbit_ring_radius_mm[1] + orbit_tube_radius_mm[1];
    const double canal_reach = norm(l.canal_center_left) + canal_radius_mm[1];
    const double skull_reach = std::max({a, b, c});
    const double reach = std::max({ring_reach, canal_reach, skull_reach}) + max_pose_translation_mm;

    double half_extent = 1e300;
    for (int d = 0; d < 3; ++d)
        half_extent = std::min(half_extent, 0.5 * static_cast<double>(grid_shape[d] - 1) * spacing_mm[d]);
    if (reach > half_extent - std::max({spacing_mm[0], spacing_mm[1], spacing_mm[2]}))
        throw parameter_error("phantom features can leave the grid at range extremes (reach " +
                              format_double(reach) + " mm vs half extent " + format_double(half_extent) +
                              " mm)");
}

namespace {

struct Pose {
    Mat3 rot;
    Vec3 trans;
};

Pose sample_pose(const PhantomSpec& spec, Rng& rng) {
    const double ct = uniform_in(rng, -1.0, 1.0);
    const double phi = uniform_in(rng, 0.0, 2.0 * kPi);
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const Vec3 axis{st * std::cos(phi), st * std::sin(phi), ct};
    const double angle = uniform_in(rng, -spec.max_pose_rotation_deg, spec.max_pose_rotation_deg) * kPi / 180.0;
    Pose pose;
    pose.rot = rodrigues(axis, angle);
    for (double* t : {&pose.trans.x, &pose.trans.y, &pose.trans.z})
        *t = uniform_in(rng, -spec.max_pose_translation_mm, spec.max_pose_translation_mm);
    return pose;
}

// Lowest point of a solid torus (circle of radius R in the plane with unit
// normal n through c, tube radius rt): the circle point with the most
// negative z, dropped a further rt straight down. Requires the ring plane
// not to be horizontal.
Vec3 torus_lowest_point(Vec3 c, Vec3 n, double R, double rt) {
    const double rho = std::sqrt(std::max(1e-12, 1.0 - n.z * n.z));
    // in-plane unit vector with the most negative z: -z projected onto the
    // ring plane, normalized (its z component is exactly -rho)
    const Vec3 u{n.z * n.x / rho, n.z * n.y / rho, (n.z * n.z - 1.0) / rho};
    return c + R * u + Vec3{0.0, 0.0, -rt};
}

} // namespace

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();

    Rng geom_rng(derive_seed(seed, "phantom-geom"));

    // Shape draws (order fixed): semi-axes, ring radius, tube radius, canal radius.
    const double a = uniform_in(geom_rng, spec.skull_semiaxis_x_mm[0], spec.skull_semiaxis_x_mm[1]);
    const double b = uniform_in(geom_rng, spec.skull_semiaxis_y_mm[0], spec.skull_semiaxis_y_mm[1]);
    const double c = uniform_in(geom_rng, spec.skull_semiaxis_z_mm[0], spec.skull_semiaxis_z_mm[1]);
    const double ring_r = uniform_in(geom_rng, spec.orbit_ring_radius_mm[0], spec.orbit_ring_radius_mm[1]);
    const double tube_r = uniform_in(geom_rng, spec.orbit_tube_radius_mm[0], spec.orbit_tube_radius_mm[1]);
    const double canal_r = uniform_in(geom_rng, spec.canal_radius_mm[0], spec.canal_radius_mm[1]);
    const AnatomyLayout layout = layout_for(a, b, c);

    Volume vol;
    vol.shape = spec.grid_shape;
    vol.spacing = spec.spacing_mm;
    for (int d = 0; d < 3; ++d)
        vol.origin[d] = -0.5 * static_cast<double>(spec.grid_shape[d] - 1) * spec.spacing_mm[d];
    vol.data.assign(static_cast<std::size_t>(vol.num_voxels()),
                    static_cast<float>(spec.background_intensity));

    // A pose can push features against the border; redraw a few times before
    // giving up.
    Pose pose{};
    bool pose_ok = false;
    double half_extent[3];
    for (int d = 0; d < 3; ++d)
        half_extent[d] = 0.5 * static_cast<double>(vol.shape[d] - 1) * vol.spacing[d];
    const double margin = *std::max_element(vol.spacing.begin(), vol.spacing.end());
    for (int attempt = 0; attempt < 32 && !pose_ok; ++attempt) {
        pose = sample_pose(spec, geom_rng);
        pose_ok = true;
        const Vec3 centers[4] = {layout.ring_center_left, layout.ring_center_right,
                                 layout.canal_center_left, layout.canal_center_right};
        const double radii[4] = {ring_r + tube_r, ring_r + tube_r, canal_r, canal_r};
        for (int f = 0; f < 4 && pose_ok; ++f) {
            const Vec3 cw = mul(pose.rot, centers[f]) + pose.trans;
            for (int d = 0; d < 3; ++d) {
                const double coord = d == 0 ? cw.x : (d == 1 ? cw.y : cw.z);
                if (std::abs(coord) + radii[f] > half_extent[d] - margin) pose_ok = false;
            }
        }
        const double skull_reach = std::max({a, b, c});
        for (int d = 0; d < 3 && pose_ok; ++d) {
            const double t = d == 0 ? pose.trans.x : (d == 1 ? pose.trans.y : pose.trans.z);
            if (std::abs(t) + skull_reach > half_extent[d] - margin) pose_ok = false;
        }
    }
    if (!pose_ok) throw geometry_error("phantom features escape the grid after 32 pose redraws");

    // Inverse pose: anatomy coords of a world point q = R^T (p - trans).
    Mat3 rot_t;
    for (int r = 0; r < 3; ++r)
        for (int cc = 0; cc < 3; ++cc) rot_t[r][cc] = pose.rot[cc][r];

    const double inner_a = std::max(1.0, a - spec.shell_thickness_mm);
    const double inner_b = std::max(1.0, b - spec.shell_thickness_mm);
    const double inner_c = std::max(1.0, c - spec.shell_thickness_mm);

    const Vec3 ring_normal_anat{0.0, 1.0, 0.0};
    for (std::int64_t k = 0; k < vol.shape[2]; ++k)
        for (std::int64_t j = 0; j < vol.shape[1]; ++j)
            for (std::int64_t i = 0; i < vol.shape[0]; ++i) {
                const WorldPoint wp = voxel_to_world(vol, {static_cast<double>(i),
                                                           static_cast<double>(j),
                                                           static_cast<double>(k)});
                const Vec3 q = mul(rot_t, Vec3{wp.x, wp.y, wp.z} - pose.trans);

                double val = spec.background_intensity;
                const double outer = (q.x / a) * (q.x / a) + (q.y / b) * (q.y / b) + (q.z / c) * (q.z / c);
                if (outer <= 1.0) {
                    const double inner = (q.x / inner_a) * (q.x / inner_a) +
                                         (q.y / inner_b) * (q.y / inner_b) +
                                         (q.z / inner_c) * (q.z / inner_c);
                    val = inner <= 1.0 ? spec.cavity_intensity : spec.bone_intensity;
                }
                for (const Vec3& rc : {layout.ring_center_left, layout.ring_center_right}) {
                    const Vec3 d = q - rc;
                    const double along = dot(d, ring_normal_anat);
                    const Vec3 in_plane = d - along * ring_normal_anat;
                    const double ring_dist = std::hypot(norm(in_plane) - ring_r, along);
                    if (ring_dist <= tube_r) val = spec.bone_intensity;
                }
                for (const Vec3& sc : {layout.canal_center_left, layout.canal_center_right}) {
                    if (norm(q - sc) <= canal_r) val = spec.bone_intensity;
                }
                vol.at(i, j, k) = static_cast<float>(val);
            }

    if (spec.noise_std > 0.0) {
        Rng noise_rng(derive_seed(seed, "phantom-noise"));
        const double amp = spec.noise_std * (spec.bone_intensity - spec.background_intensity);
        for (auto& f : vol.data) f = static_cast<float>(f + amp * normal01(noise_rng));
    }

    // Analytic landmarks in world space.
    Phantom ph;
    ph.volume = std::move(vol);
    const Vec3 n_world = mul(pose.rot, ring_normal_anat);
    const Vec3 ring_l = mul(pose.rot, layout.ring_center_left) + pose.trans;
    const Vec3 ring_rr = mul(pose.rot, layout.ring_center_right) + pose.trans;
    const Vec3 canal_l = mul(pose.rot, layout.canal_center_left) + pose.trans;
    const Vec3 canal_rr = mul(pose.rot, layout.canal_center_right) + pose.trans;

    const Vec3 or_left = torus_lowest_point(ring_l, n_world, ring_r, tube_r);
    const Vec3 or_right = torus_lowest_point(ring_rr, n_world, ring_r, tube_r);
    const Vec3 po_left = canal_l + Vec3{0.0, 0.0, canal_r};
    const Vec3 po_right = canal_rr + Vec3{0.0, 0.0, canal_r};

    ph.landmarks.entries = {{"Or_left", {or_left.x, or_left.y, or_left.z}},
                            {"Or_right", {or_right.x, or_right.y, or_right.z}},
                            {"Po_left", {po_left.x, po_left.y, po_left.z}},
                            {"Po_right", {po_right.x, po_right.y, po_right.z}}};
    ph.landmarks.validate();

    ph.geometry.skull_center = {pose.trans.x, pose.trans.y, pose.trans.z};
    ph.geometry.skull_semiaxes = {a, b, c};
    ph.geometry.rotation = pose.rot;
    ph.geometry.ring_center = {{{ring_l.x, ring_l.y, ring_l.z}, {ring_rr.x, ring_rr.y, ring_rr.z}}};
    ph.geometry.ring_radius = ring_r;
    ph.geometry.ring_tube_radius = tube_r;
    ph.geometry.canal_center = {{{canal_l.x, canal_l.y, canal_l.z}, {canal_rr.x, canal_rr.y, canal_rr.z}}};
    ph.geometry.canal_radius = canal_r;
    return ph;
}

DatasetManifest generate_dataset(std::int64_t n, const PhantomSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir) {
    if (n < 1) throw parameter_error("dataset size must be >= 1");
    spec.validate();
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    KvFile mkv;
    mkv.set("count", std::to_string(n));
    mkv.set("seed", std::to_string(seed));
    mkv.set("grid", join_ints({spec.grid_shape[0], spec.grid_shape[1], spec.grid_shape[2]}));
    mkv.set("spacing_mm", join_doubles({spec.spacing_mm[0], spec.spacing_mm[1], spec.spacing_mm[2]}));

    for (std::int64_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "phantom_%03lld", static_cast<long long>(i));
        const std::uint64_t sample_seed = derive_seed(seed, "phantom-sample", i);
        const Phantom ph = generate_phantom(spec, sample_seed);

        const std::string stem = out_dir + "/" + id;
        save_volume(ph.volume, stem);
        write_landmarks(ph.landmarks, stem + ".lmk");
        manifest.ids.emplace_back(id);
        manifest.seeds.push_back(sample_seed);
        mkv.set(std::string("sample.") + id, std::to_string(sample_seed));
    }
    manifest.path = out_dir + "/manifest.txt";
    save_kv_file(mkv, manifest.path);
    return manifest;
}

} // namespace ceph3d
