#include "ceph3d/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ceph3d/common.hpp"
#include "ceph3d/errors.hpp"

namespace ceph3d {

void Plane::validate() const {
    const double n = std::sqrt(normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]);
    if (std::abs(n - 1.0) > 1e-9) throw parameter_error("plane normal must be unit length");
    if (!std::isfinite(offset)) throw data_error("plane offset is not finite");
}

namespace {

void check_paired(const LandmarkSet& pred, const LandmarkSet& gt) {
    if (pred.size() != gt.size())
        throw contract_error("prediction and annotation sets differ in size");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred.name(i) != gt.name(i))
            throw contract_error("landmark order mismatch at index " + std::to_string(i) + ": '" +
                                 pred.name(i) + "' vs '" + gt.name(i) + "'");
}

} // namespace

std::vector<double> point_errors(const LandmarkSet& pred, const LandmarkSet& gt) {
    check_paired(pred, gt);
    std::vector<double> out;
    out.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& a = pred.point(i);
        const auto& b = gt.point(i);
        out.push_back(std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                                (a.z - b.z) * (a.z - b.z)));
    }
    return out;
}

std::vector<double> lateral_point_errors(const LandmarkSet& pred, const LandmarkSet& gt) {
    check_paired(pred, gt);
    std::vector<double> out;
    out.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto a = lateral_project(pred.point(i));
        const auto b = lateral_project(gt.point(i));
        out.push_back(std::hypot(a[0] - b[0], a[1] - b[1]));
    }
    return out;
}

RmseReport rmse_report(const std::vector<std::vector<double>>& errors_per_sample) {
    if (errors_per_sample.empty()) throw parameter_error("rmse_report needs at least one sample");
    const std::size_t L = errors_per_sample.front().size();
    if (L == 0) throw parameter_error("rmse_report needs at least one landmark");
    for (const auto& row : errors_per_sample)
        if (row.size() != L) throw contract_error("rmse_report rows have inconsistent landmark counts");

    RmseReport rep;
    rep.per_landmark.assign(L, 0.0);
    double total = 0.0;
    for (const auto& row : errors_per_sample)
        for (std::size_t l = 0; l < L; ++l) {
            rep.per_landmark[l] += row[l] * row[l];
            total += row[l] * row[l];
        }
    const double ns = static_cast<double>(errors_per_sample.size());
    for (auto& v : rep.per_landmark) v = std::sqrt(v / ns);
    rep.total = std::sqrt(total / (ns * static_cast<double>(L)));
    return rep;
}

std::vector<double> likelihood_within(const std::vector<double>& errors,
                                      const std::vector<double>& radii) {
    for (double r : radii)
        if (!(r > 0.0)) throw parameter_error("likelihood radius must be > 0");
    std::vector<double> out;
    out.reserve(radii.size());
    for (double r : radii) {
        std::size_t cnt = 0;
        for (double e : errors)
            if (e <= r) ++cnt;
        out.push_back(errors.empty() ? 0.0 : static_cast<double>(cnt) / static_cast<double>(errors.size()));
    }
    return out;
}

std::vector<CurvePoint> cumulative_curve(std::vector<double> errors) {
    if (errors.empty()) throw parameter_error("cumulative_curve needs at least one error");
    std::sort(errors.begin(), errors.end());
    std::vector<CurvePoint> curve;
    const double n = static_cast<double>(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i) {
        // keep one point per distinct error value, at its last occurrence
        if (i + 1 < errors.size() && errors[i + 1] == errors[i]) continue;
        curve.push_back({errors[i], static_cast<double>(i + 1) / n});
    }
    return curve;
}

Plane fit_fh_plane(const LandmarkSet& lm) {
    lm.validate();
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& [name, p] : lm.entries) centroid += Eigen::Vector3d(p.x, p.y, p.z);
    centroid /= static_cast<double>(lm.size());

    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& [name, p] : lm.entries) {
        const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - centroid;
        scatter += d * d.transpose();
    }

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter);
    const Eigen::Vector3d evals = es.eigenvalues(); // ascending
    if (evals(0) < 1e-12 && evals(1) < 1e-12)
        throw geometry_error("landmarks are collinear or coincident; plane fit is degenerate");

    Eigen::Vector3d n = es.eigenvectors().col(0);
    // deterministic sign: superior component >= 0, ties broken by y then x
    if (n.z() < 0.0 || (n.z() == 0.0 && (n.y() < 0.0 || (n.y() == 0.0 && n.x() < 0.0)))) n = -n;
    n.normalize();

    Plane plane;
    plane.normal = {n.x(), n.y(), n.z()};
    plane.offset = n.dot(centroid);
    plane.validate();
    return plane;
}

double inclination_angle(const Plane& a, const Plane& b) {
    a.validate();
    b.validate();
    double d = std::abs(a.normal[0] * b.normal[0] + a.normal[1] * b.normal[1] +
                        a.normal[2] * b.normal[2]);
    d = std::min(d, 1.0);
    return std::acos(d) * 180.0 / 3.14159265358979323846;
}

EvalReport evaluate_predictions(const std::vector<std::string>& ids,
                                const std::vector<LandmarkSet>& preds,
                                const std::vector<LandmarkSet>& gts,
                                const std::vector<double>& radii) {
    if (preds.size() != gts.size() || preds.size() != ids.size())
        throw contract_error("evaluate_predictions: ids/predictions/annotations must pair up");
    if (preds.empty()) throw parameter_error("evaluate_predictions needs at least one sample");
    for (std::size_t i = 1; i < radii.size(); ++i)
        if (radii[i] <= radii[i - 1]) throw parameter_error("radii must be positive ascending");

    EvalReport rep;
    rep.sample_ids = ids;
    rep.radii = radii;

    const std::size_t L = canonical_landmark_names().size();
    for (std::size_t s = 0; s < preds.size(); ++s) {
        rep.errors_3d.push_back(point_errors(preds[s], gts[s]));
        rep.errors_lateral.push_back(lateral_point_errors(preds[s], gts[s]));
        rep.fh_angles_deg.push_back(inclination_angle(fit_fh_plane(preds[s]), fit_fh_plane(gts[s])));
    }
    rep.rmse_3d = rmse_report(rep.errors_3d);
    rep.rmse_lateral = rmse_report(rep.errors_lateral);

    std::vector<double> pooled_3d, pooled_lat;
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> col_3d, col_lat;
        for (std::size_t s = 0; s < preds.size(); ++s) {
            col_3d.push_back(rep.errors_3d[s][l]);
            col_lat.push_back(rep.errors_lateral[s][l]);
            pooled_3d.push_back(rep.errors_3d[s][l]);
            pooled_lat.push_back(rep.errors_lateral[s][l]);
        }
        rep.likelihood_3d_per_landmark.push_back(likelihood_within(col_3d, radii));
        rep.likelihood_lateral_per_landmark.push_back(likelihood_within(col_lat, radii));
        rep.curves_3d.push_back(cumulative_curve(col_3d));
    }
    rep.likelihood_3d = likelihood_within(pooled_3d, radii);
    rep.likelihood_lateral = likelihood_within(pooled_lat, radii);
    rep.curve_3d_average = cumulative_curve(pooled_3d);

    double mean = 0.0;
    for (double a : rep.fh_angles_deg) mean += a;
    rep.fh_angle_mean_deg = mean / static_cast<double>(rep.fh_angles_deg.size());
    return rep;
}

namespace {

std::string csv_header_row() {
    std::string h = "model";
    for (const auto& n : canonical_landmark_names()) h += "," + n;
    h += ",Total\n";
    return h;
}

std::string rmse_csv(const RmseReport& r) {
    std::string out = csv_header_row();
    out += "this";
    for (double v : r.per_landmark) out += "," + format_double(v);
    out += "," + format_double(r.total) + "\n";
    return out;
}

std::string likelihood_csv(const EvalReport& rep,
                           const std::vector<std::vector<double>>& per_landmark,
                           const std::vector<double>& pooled) {
    std::string out = "landmark";
    for (double r : rep.radii) out += "," + format_double(r) + "mm";
    out += "\n";
    for (std::size_t l = 0; l < per_landmark.size(); ++l) {
        out += canonical_landmark_names()[l];
        for (double v : per_landmark[l]) out += "," + format_double(v);
        out += "\n";
    }
    out += "Total";
    for (double v : pooled) out += "," + format_double(v);
    out += "\n";
    return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::string out = "error_mm,fraction\n";
    for (const auto& p : curve) out += format_double(p.error) + "," + format_double(p.fraction) + "\n";
    return out;
}

} // namespace

void emit_report(const EvalReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    fs::create_directories(dir + "/curves", ec);
    if (ec) throw io_error("cannot create report directory '" + dir + "'");

    write_text_file(dir + "/rmse_3d.csv", rmse_csv(report.rmse_3d));
    write_text_file(dir + "/rmse_lateral.csv", rmse_csv(report.rmse_lateral));
    write_text_file(dir + "/likelihood_3d.csv",
                    likelihood_csv(report, report.likelihood_3d_per_landmark, report.likelihood_3d));
    write_text_file(dir + "/likelihood_lateral.csv",
                    likelihood_csv(report, report.likelihood_lateral_per_landmark,
                                   report.likelihood_lateral));

    for (std::size_t l = 0; l < report.curves_3d.size(); ++l)
        write_text_file(dir + "/curves/" + canonical_landmark_names()[l] + ".csv",
                        curve_csv(report.curves_3d[l]));
    write_text_file(dir + "/curves/average.csv", curve_csv(report.curve_3d_average));

    std::string fh = "sample,inclination_deg\n";
    for (std::size_t s = 0; s < report.fh_angles_deg.size(); ++s)
        fh += report.sample_ids[s] + "," + format_double(report.fh_angles_deg[s]) + "\n";
    fh += "mean," + format_double(report.fh_angle_mean_deg) + "\n";
    write_text_file(dir + "/fh_angles.csv", fh);

    std::string raw = "sample";
    for (const auto& n : canonical_landmark_names()) raw += "," + n + "_3d_mm";
    for (const auto& n : canonical_landmark_names()) raw += "," + n + "_lateral_mm";
    raw += "\n";
    for (std::size_t s = 0; s < report.errors_3d.size(); ++s) {
        raw += report.sample_ids[s];
        for (double v : report.errors_3d[s]) raw += "," + format_double(v);
        for (double v : report.errors_lateral[s]) raw += "," + format_double(v);
        raw += "\n";
    }
    write_text_file(dir + "/raw_errors.csv", raw);

    KvFile summary;
    summary.set("version", kVersion);
    summary.set("samples", std::to_string(report.sample_ids.size()));
    summary.set("radii_mm", join_doubles(report.radii));
    for (std::size_t l = 0; l < report.rmse_3d.per_landmark.size(); ++l)
        summary.set("rmse_3d." + canonical_landmark_names()[l],
                    format_double(report.rmse_3d.per_landmark[l]));
    summary.set("rmse_3d.total", format_double(report.rmse_3d.total));
    for (std::size_t l = 0; l < report.rmse_lateral.per_landmark.size(); ++l)
        summary.set("rmse_lateral." + canonical_landmark_names()[l],
                    format_double(report.rmse_lateral.per_landmark[l]));
    summary.set("rmse_lateral.total", format_double(report.rmse_lateral.total));
    for (std::size_t r = 0; r < report.radii.size(); ++r) {
        summary.set("likelihood_3d." + format_double(report.radii[r]) + "mm",
                    format_double(report.likelihood_3d[r]));
        summary.set("likelihood_lateral." + format_double(report.radii[r]) + "mm",
                    format_double(report.likelihood_lateral[r]));
    }
    summary.set("fh_inclination_mean_deg", format_double(report.fh_angle_mean_deg));
    save_kv_file(summary, dir + "/summary.txt");
}

} // namespace ceph3d
