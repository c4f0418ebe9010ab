#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "tofdetect/detection.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/evaluation.hpp"
#include "tofdetect/io.hpp"
#include "tofdetect/phantom.hpp"
#include "tofdetect/pipeline.hpp"
#include "tofdetect/voi.hpp"

namespace py = pybind11;
using namespace tofd;

namespace {

// Arrays are indexed [z, y, x]: C order with x fastest, same as Volume.
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

Index3 dims_of(const py::buffer_info& b) {
    if (b.ndim != 3) throw py::value_error("expected a 3-D array indexed [z, y, x]");
    return {int(b.shape[2]), int(b.shape[1]), int(b.shape[0])};
}

Volume to_volume(const FloatArray& a, std::tuple<double, double, double> spacing) {
    const auto b = a.request();
    const Index3 d = dims_of(b);
    const float* p = static_cast<const float*>(b.ptr);
    return Volume(d, {std::get<0>(spacing), std::get<1>(spacing), std::get<2>(spacing)},
                  std::vector<float>(p, p + d.product()));
}

BinaryMask to_mask(const BoolArray& a) {
    const auto b = a.request();
    BinaryMask m(dims_of(b));
    const bool* p = static_cast<const bool*>(b.ptr);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, p[i]);
    return m;
}

FloatArray from_volume(const Volume& v) {
    const Index3 d = v.dims();
    FloatArray a({d.z, d.y, d.x});
    std::memcpy(a.mutable_data(), v.voxels().data(), v.size() * sizeof(float));
    return a;
}

BoolArray from_mask(const BinaryMask& m) {
    const Index3 d = m.dims();
    BoolArray a({d.z, d.y, d.x});
    bool* p = a.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i];
    return a;
}

ExperimentConfig config_or_default(const std::optional<std::string>& json) {
    return json ? config_from_json(*json) : desk_scale_config();
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

py::dict detection_dict(const Detection& d) {
    py::dict o;
    o["box_min"] = py::make_tuple(d.box_min.x, d.box_min.y, d.box_min.z);
    o["box_size"] = py::make_tuple(d.box_size.x, d.box_size.y, d.box_size.z);
    o["score"] = d.score;
    o["component_id"] = d.component_id;
    return o;
}

}  // namespace

PYBIND11_MODULE(_tofdetect, m) {
    m.doc() = "Aneurysm detection core";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object err = error;
            PyErr_SetObject(err.ptr(), py::make_tuple(std::string(e.kind_name()), std::string(e.what())).ptr());
        }
    });

    m.def("default_config", [] { return config_to_json(desk_scale_config()); },
          "Default experiment configuration as a JSON string");

    m.def(
        "extract_voi",
        [](const FloatArray& vol, std::tuple<double, double, double> spacing, std::optional<std::string> config) {
            const VoiResult r = extract_voi(to_volume(vol, spacing), config_or_default(config).voi);
            return py::make_tuple(from_mask(r.vessel_mask), from_volume(r.masked_volume),
                                  py::make_tuple(r.window.lo, r.window.hi));
        },
        py::arg("volume"), py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0), py::arg("config") = py::none(),
        "Vessel VOI: returns (mask, masked normalized volume, (lo, hi) window)");

    m.def(
        "region_grow",
        [](const FloatArray& vol, const BoolArray& seeds, double lo, double hi) {
            return from_mask(region_grow(to_volume(vol, {1, 1, 1}), to_mask(seeds), {lo, hi}));
        },
        py::arg("volume"), py::arg("seeds"), py::arg("lo"), py::arg("hi"));

    m.def(
        "spherical_dilate", [](const BoolArray& mask, double r) { return from_mask(spherical_dilate(to_mask(mask), r)); },
        py::arg("mask"), py::arg("radius"));

    m.def(
        "binarize_likelihood",
        [](const FloatArray& p, double t) { return from_mask(binarize_likelihood(to_volume(p, {1, 1, 1}), t)); },
        py::arg("likelihood"), py::arg("threshold") = 0.5);

    m.def(
        "boxes_from_mask",
        [](const BoolArray& mask, std::optional<std::string> config) {
            py::list out;
            for (const Detection& d : boxes_from_mask(to_mask(mask), config_or_default(config).detection_params()))
                out.append(detection_dict(d));
            return out;
        },
        py::arg("mask"), py::arg("config") = py::none());

    m.def("is_hit", [](std::size_t inside, std::size_t total) { return is_hit(inside, total); }, py::arg("inside"),
          py::arg("total"));
    m.def("sensitivity", &sensitivity, py::arg("tp"), py::arg("fn"));
    m.def("format_percent", &format_percent, py::arg("fraction"), py::arg("decimals") = 1);

    m.def(
        "generate_dataset",
        [](int n, double rate, std::uint64_t seed, int side, double noise, const std::string& out_dir) {
            DatasetTemplate t;
            t.dims = {side, side, side};
            t.noise_std = noise;
            std::vector<DataCase> cases;
            for (const Phantom& p : generate_dataset(n, rate, t, seed)) cases.push_back(data_case_from_phantom(p));
            save_dataset(cases, out_dir);
            return cases.size();
        },
        py::arg("n_cases"), py::arg("rate"), py::arg("seed"), py::arg("side") = 32, py::arg("noise") = 15.0,
        py::arg("out_dir"), "Write a synthetic dataset to out_dir");

    m.def(
        "load_volume",
        [](const std::string& header) {
            const Volume v = load_volume(header);
            return py::make_tuple(from_volume(v), py::make_tuple(v.spacing().x, v.spacing().y, v.spacing().z));
        },
        py::arg("header"), "Returns (array, spacing)");

    py::class_<Model<float>>(m, "Model")
        .def_static("load", [](const std::string& path) { return load_weights(path); }, py::arg("path"))
        .def("save", [](const Model<float>& model, const std::string& path) { save_weights(model, path); },
             py::arg("path"))
        .def("count_parameters", &Model<float>::count_parameters)
        .def(
            "detect",
            [](const Model<float>& model, const FloatArray& vol, std::tuple<double, double, double> spacing,
               std::optional<std::string> config) {
                const Volume v = to_volume(vol, spacing);
                const DetectionParams params = config_or_default(config).detection_params();
                std::vector<Detection> dets;
                {
                    py::gil_scoped_release release;
                    dets = detect(model, v, params);
                }
                py::list out;
                for (const Detection& d : dets) out.append(detection_dict(d));
                return out;
            },
            py::arg("volume"), py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0), py::arg("config") = py::none());

    m.def(
        "train",
        [](const std::string& data_dir, std::optional<std::string> config) {
            const ExperimentConfig cfg = config_or_default(config);
            const std::vector<DataCase> cases = load_dataset(data_dir);
            py::gil_scoped_release release;
            return train_model(cases, cfg).model;
        },
        py::arg("data_dir"), py::arg("config") = py::none(), "Train on a dataset directory and return the model");

    m.def(
        "evaluate",
        [](const Model<float>& model, const std::string& data_dir, std::optional<std::string> config) {
            const ExperimentConfig cfg = config_or_default(config);
            const std::vector<DataCase> cases = load_dataset(data_dir);
            std::string json;
            {
                py::gil_scoped_release release;
                json = report_to_json(evaluate_model(model, cases, cfg.detection_params()));
            }
            return parse_json(json);
        },
        py::arg("model"), py::arg("data_dir"), py::arg("config") = py::none());

    m.def(
        "crossval",
        [](const std::string& data_dir, int k, std::uint64_t seed, std::optional<std::string> config) {
            const ExperimentConfig cfg = config_or_default(config);
            const std::vector<DataCase> cases = load_dataset(data_dir);
            std::string json;
            {
                py::gil_scoped_release release;
                json = crossval_to_json(crossval(cases, k, cfg, seed));
            }
            return parse_json(json);
        },
        py::arg("data_dir"), py::arg("k"), py::arg("seed") = 0, py::arg("config") = py::none());
}
