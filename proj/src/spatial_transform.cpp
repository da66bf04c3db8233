#include "ceph3d/spatial_transform.hpp"

#include <cmath>
#include <string>

#include "ceph3d/errors.hpp"

namespace ceph3d {

std::int64_t NormalizedHeatmap::numel() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void NormalizedHeatmap::validate() const {
    if (dims.empty()) throw parameter_error("normalized heatmap needs at least one axis");
    for (auto d : dims)
        if (d < 1) throw parameter_error("normalized heatmap dims must be >= 1");
    if (static_cast<std::int64_t>(values.size()) != numel())
        throw size_error("normalized heatmap holds " + std::to_string(values.size()) +
                         " values for " + std::to_string(numel()) + " cells");
    double sum = 0.0;
    for (double v : values) {
        if (!(v >= 0.0)) throw data_error("normalized heatmap has a negative or NaN value");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw data_error("normalized heatmap sums to " + std::to_string(sum) + ", expected 1");
}

NormalizedHeatmap rectify_normalize(const std::vector<std::int64_t>& dims,
                                    const std::vector<double>& raw) {
    NormalizedHeatmap m;
    m.dims = dims;
    m.values.resize(raw.size());

    double sum = 0.0;
    for (std::size_t p = 0; p < raw.size(); ++p) {
        if (!std::isfinite(raw[p])) throw data_error("raw heatmap has a non-finite value");
        const double r = raw[p] > 0.0 ? raw[p] : 0.0;
        m.values[p] = r;
        sum += r;
    }
    if (sum < 1e-12)
        throw degenerate_heatmap_error("rectified heatmap mass " + std::to_string(sum) +
                                       " below 1e-12; no normalization defined");
    const double inv = 1.0 / sum;
    for (auto& v : m.values) v *= inv;
    m.validate();
    return m;
}

namespace {

// stride[a] = product of dims after axis a (last dim fastest).
std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& dims) {
    std::vector<std::int64_t> s(dims.size(), 1);
    for (std::size_t a = dims.size(); a-- > 1;) s[a - 1] = s[a] * dims[a];
    return s;
}

} // namespace

std::vector<double> marginal_density(const NormalizedHeatmap& m, std::size_t axis) {
    m.validate();
    if (axis >= m.dims.size()) throw parameter_error("marginal axis out of range");

    const auto strides = strides_of(m.dims);
    std::vector<double> marg(static_cast<std::size_t>(m.dims[axis]), 0.0);
    const std::int64_t n = m.numel();
    for (std::int64_t p = 0; p < n; ++p) {
        const std::int64_t idx = (p / strides[axis]) % m.dims[axis];
        marg[static_cast<std::size_t>(idx)] += m.values[static_cast<std::size_t>(p)];
    }
    return marg;
}

std::vector<double> softargmax_coords(const NormalizedHeatmap& m) {
    m.validate();
    const auto strides = strides_of(m.dims);
    std::vector<double> y(m.dims.size(), 0.0);
    const std::int64_t n = m.numel();
    for (std::int64_t p = 0; p < n; ++p) {
        const double v = m.values[static_cast<std::size_t>(p)];
        if (v == 0.0) continue;
        for (std::size_t a = 0; a < m.dims.size(); ++a)
            y[a] += v * static_cast<double>((p / strides[a]) % m.dims[a]);
    }
    return y;
}

SoftargmaxResult softargmax_with_jacobian(const std::vector<std::int64_t>& dims,
                                          const std::vector<double>& raw) {
    const NormalizedHeatmap m = rectify_normalize(dims, raw);
    SoftargmaxResult res;
    res.coords = softargmax_coords(m);

    // With r = relu(raw), T = sum r, y_a = sum_p idx_a(p) r_p / T:
    //   d y_a / d raw_p = [raw_p > 0] (idx_a(p) - y_a) / T.
    double total = 0.0;
    for (double v : raw)
        if (v > 0.0) total += v;

    const auto strides = strides_of(dims);
    const std::size_t n = raw.size();
    res.jacobian.assign(dims.size() * n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        if (!(raw[p] > 0.0)) continue;
        for (std::size_t a = 0; a < dims.size(); ++a) {
            const double idx = static_cast<double>((static_cast<std::int64_t>(p) / strides[a]) % dims[a]);
            res.jacobian[a * n + p] = (idx - res.coords[a]) / total;
        }
    }
    return res;
}

} // namespace ceph3d
