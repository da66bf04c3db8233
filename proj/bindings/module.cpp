#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ceph3d/augmentation.hpp"
#include "ceph3d/common.hpp"
#include "ceph3d/errors.hpp"
#include "ceph3d/evaluation.hpp"
#include "ceph3d/landmarks.hpp"
#include "ceph3d/networks.hpp"
#include "ceph3d/phantom.hpp"
#include "ceph3d/run_config.hpp"
#include "ceph3d/runner.hpp"
#include "ceph3d/spatial_transform.hpp"
#include "ceph3d/training.hpp"
#include "ceph3d/volume.hpp"

namespace py = pybind11;
using namespace ceph3d;

namespace {

py::array_t<float> volume_array(const Volume& v) {
    // (nz, ny, nx) view of the x-fastest buffer
    py::array_t<float> arr({v.shape[2], v.shape[1], v.shape[0]});
    std::copy(v.data.begin(), v.data.end(), arr.mutable_data());
    return arr;
}

Volume volume_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> data,
                         std::array<double, 3> spacing, std::array<double, 3> origin) {
    if (data.ndim() != 3) throw shape_error("volume array must be rank 3 (nz, ny, nx)");
    Volume v;
    v.shape = {data.shape(2), data.shape(1), data.shape(0)};
    v.spacing = spacing;
    v.origin = origin;
    v.data.assign(data.data(), data.data() + data.size());
    v.validate();
    return v;
}

std::vector<std::int64_t> dims_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::int64_t> dims;
    for (py::ssize_t d = 0; d < a.ndim(); ++d) dims.push_back(a.shape(d));
    return dims;
}

py::list landmarks_to_py(const LandmarkSet& lm) {
    py::list out;
    for (const auto& [name, p] : lm.entries)
        out.append(py::make_tuple(name, py::make_tuple(p.x, p.y, p.z)));
    return out;
}

LandmarkSet landmarks_from_py(const py::list& entries) {
    LandmarkSet lm;
    for (const auto& item : entries) {
        const auto t = item.cast<py::tuple>();
        const auto xyz = t[1].cast<py::tuple>();
        lm.entries.emplace_back(t[0].cast<std::string>(),
                                WorldPoint{xyz[0].cast<double>(), xyz[1].cast<double>(),
                                           xyz[2].cast<double>()});
    }
    return lm;
}

ModelConfig config_from_kwargs(const std::string& kind, std::int64_t base_width,
                               std::int64_t num_stages, std::int64_t num_stacks,
                               const std::string& block, const std::string& norm,
                               std::int64_t groups, std::int64_t num_landmarks,
                               std::array<std::int64_t, 3> input_shape) {
    ModelConfig cfg;
    cfg.kind = model_kind_from_string(kind);
    cfg.base_width = base_width;
    cfg.num_stages = num_stages;
    cfg.num_stacks = num_stacks;
    cfg.block = block_kind_from_string(block);
    cfg.norm = norm_kind_from_string(norm);
    cfg.groups = groups;
    cfg.num_landmarks = num_landmarks;
    cfg.input_shape = input_shape;
    cfg.validate();
    return cfg;
}

py::dict forward_to_py(const Model& model, const ModelOutput& out) {
    py::dict d;
    auto tensor_to_np = [](const nn::Tensor& t) {
        py::array_t<double> arr(t.shape);
        std::copy(t.v.begin(), t.v.end(), arr.mutable_data());
        return arr;
    };
    if (out.coordinates) d["coordinates"] = tensor_to_np(out.coordinates->value);
    if (out.heatmaps) d["heatmaps"] = tensor_to_np(out.heatmaps->value);
    if (!out.aux_heatmaps.empty()) {
        py::list aux;
        for (const auto& h : out.aux_heatmaps) aux.append(tensor_to_np(h->value));
        d["aux_heatmaps"] = aux;
    }
    if (!out.aux_coordinates.empty()) {
        py::list aux;
        for (const auto& c : out.aux_coordinates) aux.append(tensor_to_np(c->value));
        d["aux_coordinates"] = aux;
    }
    (void)model;
    return d;
}

} // namespace

PYBIND11_MODULE(_ceph3d, m) {
    m.doc() = "3D cephalometric landmark regression toolkit";
    m.attr("__version__") = kVersion;

    py::class_<Volume>(m, "Volume")
        .def(py::init(&volume_from_array), py::arg("data"), py::arg("spacing"), py::arg("origin"))
        .def_property_readonly("shape", [](const Volume& v) { return v.shape; })
        .def_property_readonly("spacing", [](const Volume& v) { return v.spacing; })
        .def_property_readonly("origin", [](const Volume& v) { return v.origin; })
        .def_property_readonly("data", &volume_array)
        .def("validate", [](const Volume& v) { v.validate(); });

    m.def("load_volume", &load_volume, py::arg("path"));
    m.def("save_volume", &save_volume, py::arg("volume"), py::arg("path"));
    m.def("zscore_normalize", &zscore_normalize, py::arg("volume"));
    m.def(
        "resample_trilinear",
        [](const Volume& v, std::array<std::int64_t, 3> shape) { return resample_trilinear(v, shape); },
        py::arg("volume"), py::arg("target_shape"));
    m.def(
        "world_to_voxel",
        [](const Volume& v, std::array<double, 3> p) {
            const VoxelCoord c = world_to_voxel(v, {p[0], p[1], p[2]});
            return std::array<double, 3>{c.i, c.j, c.k};
        },
        py::arg("volume"), py::arg("point"));
    m.def(
        "voxel_to_world",
        [](const Volume& v, std::array<double, 3> c) {
            const WorldPoint p = voxel_to_world(v, {c[0], c[1], c[2]});
            return std::array<double, 3>{p.x, p.y, p.z};
        },
        py::arg("volume"), py::arg("coord"));

    m.def("parse_landmarks", [](const std::string& path) { return landmarks_to_py(parse_landmarks(path)); },
          py::arg("path"));
    m.def(
        "write_landmarks",
        [](const py::list& lm, const std::string& path) { write_landmarks(landmarks_from_py(lm), path); },
        py::arg("landmarks"), py::arg("path"));
    m.def(
        "gaussian_heatmap_target",
        [](const std::vector<std::array<double, 3>>& points, std::array<std::int64_t, 3> shape,
           double sigma) {
            std::vector<VoxelCoord> pts;
            for (const auto& p : points) pts.push_back({p[0], p[1], p[2]});
            const HeatmapStack hm = gaussian_heatmap_target(pts, shape, sigma);
            py::array_t<double> arr({hm.channels, hm.shape[2], hm.shape[1], hm.shape[0]});
            std::copy(hm.data.begin(), hm.data.end(), arr.mutable_data());
            return arr;
        },
        py::arg("points"), py::arg("shape"), py::arg("sigma"));
    m.def(
        "lateral_project",
        [](std::array<double, 3> p) { return lateral_project({p[0], p[1], p[2]}); },
        py::arg("point"));

    m.def(
        "rectify_normalize",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> raw) {
            const auto dims = dims_of(raw);
            const std::vector<double> data(raw.data(), raw.data() + raw.size());
            const NormalizedHeatmap nm = rectify_normalize(dims, data);
            py::array_t<double> arr(dims);
            std::copy(nm.values.begin(), nm.values.end(), arr.mutable_data());
            return arr;
        },
        py::arg("raw"));
    m.def(
        "marginal_density",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> values, std::size_t axis) {
            NormalizedHeatmap nm;
            nm.dims = dims_of(values);
            nm.values.assign(values.data(), values.data() + values.size());
            return marginal_density(nm, axis);
        },
        py::arg("normalized"), py::arg("axis"));
    m.def(
        "softargmax_coords",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> values) {
            NormalizedHeatmap nm;
            nm.dims = dims_of(values);
            nm.values.assign(values.data(), values.data() + values.size());
            return softargmax_coords(nm);
        },
        py::arg("normalized"));
    m.def(
        "softargmax_with_jacobian",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> raw) {
            const auto dims = dims_of(raw);
            const std::vector<double> data(raw.data(), raw.data() + raw.size());
            const SoftargmaxResult res = softargmax_with_jacobian(dims, data);
            py::array_t<double> jac({static_cast<std::int64_t>(dims.size()),
                                     static_cast<std::int64_t>(data.size())});
            std::copy(res.jacobian.begin(), res.jacobian.end(), jac.mutable_data());
            return py::make_tuple(res.coords, jac);
        },
        py::arg("raw"));

    py::class_<Model>(m, "Model")
        .def("forward",
             [](const Model& model, py::array_t<double, py::array::c_style | py::array::forcecast> batch) {
                 nn::Tensor t(dims_of(batch));
                 std::copy(batch.data(), batch.data() + batch.size(), t.v.begin());
                 return forward_to_py(model, model.forward(t));
             },
             py::arg("batch"))
        .def("parameter_count", &Model::parameter_count)
        .def("predict", [](const Model& model, const Volume& v) { return landmarks_to_py(predict(model, v)); },
             py::arg("volume"))
        .def("save_checkpoint",
             [](const Model& model, const std::string& path) { model.save_checkpoint(path); },
             py::arg("path"))
        .def_property_readonly("kind", [](const Model& model) { return to_string(model.config().kind); });

    m.def(
        "build_model",
        [](const std::string& kind, std::int64_t base_width, std::int64_t num_stages,
           std::int64_t num_stacks, const std::string& block, const std::string& norm,
           std::int64_t groups, std::int64_t num_landmarks, std::array<std::int64_t, 3> input_shape,
           std::uint64_t init_seed) {
            return Model::build(config_from_kwargs(kind, base_width, num_stages, num_stacks, block,
                                                   norm, groups, num_landmarks, input_shape),
                                init_seed);
        },
        py::arg("kind"), py::arg("base_width") = 16, py::arg("num_stages") = 4,
        py::arg("num_stacks") = 3, py::arg("block") = "resnext", py::arg("norm") = "group",
        py::arg("groups") = 8, py::arg("num_landmarks") = 4,
        py::arg("input_shape") = std::array<std::int64_t, 3>{64, 64, 64},
        py::arg("init_seed") = kDefaultInitSeed);
    m.def("load_checkpoint",
          [](const std::string& path) { return Model::load_checkpoint(path).model; }, py::arg("path"));

    m.def(
        "generate_phantom",
        [](std::uint64_t seed, std::array<std::int64_t, 3> grid, std::array<double, 3> spacing) {
            PhantomSpec spec;
            spec.grid_shape = grid;
            spec.spacing_mm = spacing;
            const Phantom ph = generate_phantom(spec, seed);
            return py::make_tuple(ph.volume, landmarks_to_py(ph.landmarks));
        },
        py::arg("seed") = 0, py::arg("grid") = std::array<std::int64_t, 3>{64, 64, 64},
        py::arg("spacing") = std::array<double, 3>{2.0, 2.0, 2.0});
    m.def(
        "generate_dataset",
        [](std::int64_t n, std::uint64_t seed, const std::string& out_dir) {
            PhantomSpec spec;
            const auto manifest = generate_dataset(n, spec, seed, out_dir);
            return manifest.ids;
        },
        py::arg("n"), py::arg("seed"), py::arg("out_dir"));

    m.def(
        "point_errors",
        [](const py::list& pred, const py::list& gt) {
            return point_errors(landmarks_from_py(pred), landmarks_from_py(gt));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "rmse_report",
        [](const std::vector<std::vector<double>>& errors) {
            const RmseReport r = rmse_report(errors);
            return py::make_tuple(r.per_landmark, r.total);
        },
        py::arg("errors_per_sample"));
    m.def("likelihood_within", &likelihood_within, py::arg("errors"), py::arg("radii"));
    m.def(
        "cumulative_curve",
        [](std::vector<double> errors) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& p : cumulative_curve(std::move(errors))) pts.emplace_back(p.error, p.fraction);
            return pts;
        },
        py::arg("errors"));
    m.def(
        "fit_fh_plane",
        [](const py::list& lm) {
            const Plane p = fit_fh_plane(landmarks_from_py(lm));
            return py::make_tuple(p.normal, p.offset);
        },
        py::arg("landmarks"));
    m.def(
        "inclination_angle",
        [](std::array<double, 3> na, double oa, std::array<double, 3> nb, double ob) {
            return inclination_angle(Plane{na, oa}, Plane{nb, ob});
        },
        py::arg("normal_a"), py::arg("offset_a"), py::arg("normal_b"), py::arg("offset_b"));

    m.def(
        "run_predict",
        [](const std::string& ckpt, const std::string& volume, const std::string& out) {
            return landmarks_to_py(run_predict(ckpt, volume, out));
        },
        py::arg("checkpoint"), py::arg("volume"), py::arg("out") = std::string{});
    m.def(
        "run_evaluate",
        [](const std::string& pred, const std::string& gt, const std::string& out,
           std::vector<double> radii) {
            const EvalReport r = run_evaluate(pred, gt, out, radii);
            py::dict d;
            d["total_rmse_3d"] = r.rmse_3d.total;
            d["total_rmse_lateral"] = r.rmse_lateral.total;
            d["likelihood_3d"] = r.likelihood_3d;
            d["fh_angle_mean_deg"] = r.fh_angle_mean_deg;
            return d;
        },
        py::arg("pred_dir"), py::arg("gt_dir"), py::arg("out_dir") = std::string{},
        py::arg("radii") = std::vector<double>{2.0, 3.0, 4.0});
    m.def(
        "run_cross_validate",
        [](const std::string& config_path, const std::string& data_dir, const std::string& out_dir) {
            RunConfig cfg = parse_config(config_path);
            if (!data_dir.empty()) cfg.data_dir = data_dir;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            const CrossValResult r = run_cross_validate(cfg);
            py::dict d;
            d["ids"] = r.ids;
            d["total_rmse_3d"] = r.report.rmse_3d.total;
            d["fh_angle_mean_deg"] = r.report.fh_angle_mean_deg;
            return d;
        },
        py::arg("config"), py::arg("data_dir") = std::string{}, py::arg("out_dir") = std::string{});
    m.def("make_folds", [](std::int64_t n, std::int64_t k, std::uint64_t seed) {
        return make_folds(n, k, seed).validation;
    });
}
