#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ceph3d/landmarks.hpp"

namespace ceph3d {

struct Plane {
    std::array<double, 3> normal{0, 0, 1}; // unit length
    double offset = 0.0;                   // signed distance of the origin, mm

    void validate() const;
};

/// Euclidean world-mm distance per landmark; both sets must share the
/// canonical order.
std::vector<double> point_errors(const LandmarkSet& pred, const LandmarkSet& gt);

/// 2D distances of the lateral projections, same ordering contract.
std::vector<double> lateral_point_errors(const LandmarkSet& pred, const LandmarkSet& gt);

struct RmseReport {
    std::vector<double> per_landmark; // sqrt(mean of squared distance per landmark)
    double total = 0.0;               // sqrt(mean over all landmark-sample pairs)
};

/// errors_per_sample[s][l] = distance of landmark l in sample s.
RmseReport rmse_report(const std::vector<std::vector<double>>& errors_per_sample);

/// Fraction of errors <= radius (closed inequality) per radius.
std::vector<double> likelihood_within(const std::vector<double>& errors,
                                      const std::vector<double>& radii);

/// Step-function samples (error, fraction <= error), one point per distinct
/// error value, ending at fraction 1.
struct CurvePoint {
    double error;
    double fraction;
};
std::vector<CurvePoint> cumulative_curve(std::vector<double> errors);

/// Total-least-squares plane through the four canonical landmarks: normal is
/// the smallest-eigenvalue eigenvector of the centered scatter matrix, sign
/// fixed so the superior (z) component is >= 0.
Plane fit_fh_plane(const LandmarkSet& lm);

/// arccos(|n_a . n_b|) in degrees, in [0, 90]; symmetric and sign-invariant.
double inclination_angle(const Plane& a, const Plane& b);

/// Everything the report files carry. Landmark order matches
/// canonical_landmark_names(); radii are in mm.
struct EvalReport {
    std::vector<std::string> sample_ids;
    std::vector<double> radii{2.0, 3.0, 4.0};

    std::vector<std::vector<double>> errors_3d;      // [sample][landmark]
    std::vector<std::vector<double>> errors_lateral; // [sample][landmark]
    RmseReport rmse_3d;
    RmseReport rmse_lateral;
    std::vector<double> likelihood_3d;      // per radius, pooled over landmarks
    std::vector<double> likelihood_lateral; // per radius
    std::vector<std::vector<double>> likelihood_3d_per_landmark;      // [landmark][radius]
    std::vector<std::vector<double>> likelihood_lateral_per_landmark; // [landmark][radius]
    std::vector<std::vector<CurvePoint>> curves_3d; // per landmark
    std::vector<CurvePoint> curve_3d_average;       // pooled over landmarks
    std::vector<double> fh_angles_deg;              // per sample
    double fh_angle_mean_deg = 0.0;
};

/// Build the full report from paired prediction/annotation sets (same order,
/// same ids).
EvalReport evaluate_predictions(const std::vector<std::string>& ids,
                                const std::vector<LandmarkSet>& preds,
                                const std::vector<LandmarkSet>& gts,
                                const std::vector<double>& radii = {2.0, 3.0, 4.0});

/// Write summary.txt, rmse/likelihood CSVs, per-landmark curve files,
/// fh_angles.csv and the raw per-sample error table into dir.
void emit_report(const EvalReport& report, const std::string& dir);

} // namespace ceph3d
