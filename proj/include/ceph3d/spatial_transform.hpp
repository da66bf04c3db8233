#pragma once

#include <cstdint>
#include <vector>

namespace ceph3d {

/// Discrete density over an N-dimensional index grid: all values >= 0 and
/// summing to 1. Dims are ordered slowest-first (e.g. {nz, ny, nx}); the last
/// dim varies fastest in `values`.
struct NormalizedHeatmap {
    std::vector<std::int64_t> dims;
    std::vector<double> values;

    std::int64_t numel() const;
    void validate() const;
};

/// relu(raw) / sum(relu(raw)). Throws degenerate_heatmap_error when the
/// rectified sum falls below 1e-12 (all-nonpositive input).
NormalizedHeatmap rectify_normalize(const std::vector<std::int64_t>& dims,
                                    const std::vector<double>& raw);

/// Marginal density along one axis: sums the density over every other axis.
std::vector<double> marginal_density(const NormalizedHeatmap& m, std::size_t axis);

/// Expected index per axis (the mean of each marginal). Component d lies in
/// [0, dims[d]-1]. Order matches `dims`.
std::vector<double> softargmax_coords(const NormalizedHeatmap& m);

/// Value and Jacobian of the composition rectify_normalize -> softargmax as
/// a function of the raw heatmap. jacobian[d * numel + p] = d coords[d] /
/// d raw[p]; at raw[p] == 0 the one-sided (zero) subgradient is used. This is
/// the same closed form the network engine backpropagates through.
struct SoftargmaxResult {
    std::vector<double> coords;
    std::vector<double> jacobian;
};
SoftargmaxResult softargmax_with_jacobian(const std::vector<std::int64_t>& dims,
                                          const std::vector<double>& raw);

} // namespace ceph3d
