#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "featsplat/asset.hpp"
#include "featsplat/body_model.hpp"
#include "featsplat/data_synth.hpp"
#include "featsplat/error.hpp"
#include "featsplat/gradcheck.hpp"
#include "featsplat/pipeline.hpp"
#include "featsplat/splat_renderer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace fsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) arrays.
Image to_image(const Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("image arrays must have shape (H, W) or (H, W, C)");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array to_array(const Image& img) {
    Array a({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), a.mutable_data());
    return a;
}

Config to_config(const py::dict& d) {
    Config c = Config::parse("");
    for (const auto& [k, v] : d) {
        std::string value = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : std::string(py::str(v));
        c.set(py::str(k), value);
    }
    c.require_known(known_config_keys());
    return c;
}

struct Log {
    explicit Log(bool verbose) : verbose(verbose) {}
    std::ostream& stream() { return verbose ? static_cast<std::ostream&>(std::cerr) : buffer; }
    bool verbose;
    std::ostringstream buffer;
};

py::dict retrack_dict(const RetrackReport& r) {
    py::dict d;
    d["converged"] = r.converged;
    d["iterations"] = r.iterations;
    d["initial_cost"] = r.initial_cost;
    d["final_cost"] = r.final_cost;
    d["frame_rms"] = r.frame_rms;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Feature Gaussian splatting on a skinned portrait model";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<InvariantViolation>(m, "InvariantViolation", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<TopologyMismatch>(m, "TopologyMismatch", PyExc_RuntimeError);
    py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_ArithmeticError);

    py::class_<BodyAsset>(m, "BodyAsset")
        .def_property_readonly("num_vertices", &BodyAsset::num_vertices)
        .def_property_readonly("num_faces", &BodyAsset::num_faces)
        .def_property_readonly("num_joints", &BodyAsset::num_joints)
        .def_property_readonly("num_betas", &BodyAsset::num_betas)
        .def_property_readonly("num_expressions", &BodyAsset::num_expressions)
        .def_property_readonly("template_vertices", [](const BodyAsset& a) { return a.template_vertices; })
        .def_property_readonly("faces", [](const BodyAsset& a) { return a.faces; })
        .def_property_readonly("parent", [](const BodyAsset& a) { return a.parent; })
        .def_property_readonly("skinning_weights", [](const BodyAsset& a) { return a.skinning_weights; })
        .def("topology_hash", &BodyAsset::topology_hash)
        .def("validate", &BodyAsset::validate)
        .def("save", [](const BodyAsset& a, const fs::path& mesh) { save_body_asset(a, mesh); }, py::arg("mesh_path"));

    m.def(
        "portrait_asset",
        [](int rings, int segments) { return make_portrait_asset({rings, segments}); },
        py::arg("rings") = PortraitAssetOptions{}.rings, py::arg("segments") = PortraitAssetOptions{}.segments,
        "Procedural head and torso mesh with five joints.");
    m.def("load_asset", &load_body_asset, py::arg("mesh_path"));
    m.def("landmark_vertices", &portrait_landmark_vertices, py::arg("asset"));

    py::class_<PoseParams>(m, "PoseParams")
        .def(py::init([](const BodyAsset& a) { return PoseParams::zeros(a); }), py::arg("asset"))
        .def_readwrite("beta", &PoseParams::beta)
        .def_readwrite("theta", &PoseParams::theta)
        .def_readwrite("psi", &PoseParams::psi)
        .def_property(
            "translation", [](const PoseParams& p) { return Eigen::Vector3d(p.translation); },
            [](PoseParams& p, const Eigen::Vector3d& t) { p.translation = t; })
        .def("all_finite", &PoseParams::all_finite);

    py::class_<BodyModel>(m, "BodyModel")
        .def(py::init<BodyAsset>(), py::arg("asset"))
        .def_property_readonly("asset", &BodyModel::asset, py::return_value_policy::reference_internal)
        .def("topology_hash", &BodyModel::topology_hash)
        .def(
            "pose",
            [](const BodyModel& b, const PoseParams& p, std::optional<Vertices> delta) {
                const PosedMesh mesh = b.pose(p, delta ? &*delta : nullptr);
                return mesh.vertices;
            },
            py::arg("params"), py::arg("delta") = py::none(), "Posed vertex positions, V x 3.")
        .def("joint_positions", &BodyModel::joint_positions, py::arg("beta"));

    m.def(
        "rasterize",
        [](const Eigen::MatrixX2d& means, const Array& covs, const Eigen::VectorXd& depths,
           const Eigen::VectorXd& opacities, const RowMatrix& features, int width, int height, int tile) {
            const Eigen::Index n = means.rows();
            if (covs.ndim() != 3 || covs.shape(0) != n || covs.shape(1) != 2 || covs.shape(2) != 2 ||
                depths.size() != n || opacities.size() != n || features.rows() != n)
                throw InvalidArgument("rasterize: expected means (N,2), covs (N,2,2), depths (N), opacities (N), "
                                      "features (N,C)");
            RasterSettings rs;
            rs.tile = tile;
            SplatSet s;
            s.features = features;
            const double* c = covs.data();
            for (Eigen::Index i = 0; i < n; ++i, c += 4) {
                Splat2D sp;
                sp.source = static_cast<int>(i);
                sp.mean2d = means.row(i).transpose();
                sp.cov2d << c[0], c[1], c[2], c[3];
                sp.depth = depths(i);
                sp.opacity = opacities(i);
                const double mid = 0.5 * (c[0] + c[3]);
                const double half = std::sqrt(std::max(0.0, 0.25 * (c[0] - c[3]) * (c[0] - c[3]) + c[1] * c[2]));
                sp.radius = rs.radius_sigmas * std::sqrt(std::max(0.0, mid + half));
                s.splats.push_back(sp);
            }
            Camera cam;
            cam.width = width;
            cam.height = height;
            const FeatureFrame f = rasterize(s, cam, rs);
            return py::make_tuple(to_array(f.phi), to_array(f.alpha));
        },
        py::arg("means"), py::arg("covs"), py::arg("depths"), py::arg("opacities"), py::arg("features"),
        py::arg("width"), py::arg("height"), py::arg("tile") = RasterSettings{}.tile,
        "Front-to-back compositing of 2D splats; returns (phi, alpha).");

    m.def(
        "psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "dilate_mask",
        [](const Array& alpha, double threshold, int radius) {
            return to_array(dilate_mask(to_image(alpha), threshold, radius));
        },
        py::arg("alpha"), py::arg("threshold"), py::arg("radius"));

    m.def(
        "synth",
        [](const py::dict& config, const fs::path& out_dir, bool verbose) {
            const Config c = to_config(config);
            py::gil_scoped_release release;
            Log log(verbose);
            return cmd_synth(c, out_dir, log.stream());
        },
        py::arg("config"), py::arg("out_dir"), py::arg("verbose") = false,
        "Writes a synthetic dataset; returns the manifest path.");
    m.def(
        "retrack",
        [](const fs::path& dataset, const py::dict& config, const fs::path& out_track, bool verbose) {
            const Config c = to_config(config);
            RetrackReport r;
            {
                py::gil_scoped_release release;
                Log log(verbose);
                r = cmd_retrack(dataset, c, out_track, log.stream());
            }
            return retrack_dict(r);
        },
        py::arg("dataset"), py::arg("config"), py::arg("out_track"), py::arg("verbose") = false);
    m.def(
        "fit",
        [](const fs::path& dataset, const py::dict& config, const fs::path& out_ckpt, std::optional<fs::path> track,
           bool verbose) {
            const Config c = to_config(config);
            TrainResult r;
            {
                py::gil_scoped_release release;
                Log log(verbose);
                r = cmd_fit(dataset, track, c, out_ckpt, log.stream());
            }
            std::vector<double> total;
            for (const LossRecord& rec : r.curve) total.push_back(rec.loss.total);
            return total;
        },
        py::arg("dataset"), py::arg("config"), py::arg("out_ckpt"), py::arg("track") = py::none(),
        py::arg("verbose") = false, "Trains a checkpoint; returns the per-iteration total loss.");
    m.def(
        "render",
        [](const fs::path& ckpt, const fs::path& dataset, const fs::path& out_dir, std::optional<fs::path> track,
           bool verbose) {
            py::gil_scoped_release release;
            Log log(verbose);
            cmd_render(ckpt, dataset, track, out_dir, log.stream());
        },
        py::arg("ckpt"), py::arg("dataset"), py::arg("out_dir"), py::arg("track") = py::none(),
        py::arg("verbose") = false);
    m.def(
        "swap",
        [](const fs::path& dataset, const py::dict& config, const fs::path& out_dir, bool verbose) {
            const Config c = to_config(config);
            SwapReport r;
            {
                py::gil_scoped_release release;
                Log log(verbose);
                r = cmd_swap(dataset, c, out_dir, log.stream());
            }
            py::dict d;
            d["heldout_psnr"] = r.heldout_psnr;
            d["heldout_frames"] = r.heldout_frames;
            return d;
        },
        py::arg("dataset"), py::arg("config"), py::arg("out_dir"), py::arg("verbose") = false,
        "Retrack, fit and render; returns the held-out PSNR report.");
    m.def(
        "gradcheck",
        [](const std::string& scope, std::uint64_t seed, int samples, const std::string& corrupt) {
            GradcheckOptions o;
            o.scope = scope;
            o.seed = seed;
            o.samples = samples;
            o.corrupt = corrupt;
            GradcheckReport r;
            {
                py::gil_scoped_release release;
                r = run_gradcheck(o);
            }
            py::list out;
            for (const GradcheckEntry& e : r.entries) {
                py::dict d;
                d["name"] = e.name;
                d["worst_rel_error"] = e.worst_rel_error;
                d["threshold"] = e.threshold;
                d["checked"] = e.checked;
                d["passed"] = e.passed();
                out.append(d);
            }
            return out;
        },
        py::arg("scope") = "all", py::arg("seed") = GradcheckOptions{}.seed,
        py::arg("samples") = GradcheckOptions{}.samples, py::arg("corrupt") = "");
}
