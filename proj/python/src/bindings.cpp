#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "m2r2/data/dataset_io.hpp"
#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/harness/config.hpp"
#include "m2r2/harness/grad_suite.hpp"
#include "m2r2/harness/metrics.hpp"
#include "m2r2/harness/sweep.hpp"
#include "m2r2/random.hpp"

namespace py = pybind11;
using namespace m2r2;

namespace {

// Structured results cross the boundary as JSON text; the Python side parses them.
std::string metrics_text(const harness::MetricsReport& r, const std::vector<std::string>& classes) {
    return harness::to_json(r, classes).dump();
}

harness::ExperimentConfig config_from_text(const std::string& text) {
    auto cfg = text.empty() ? harness::ExperimentConfig{}
                            : harness::from_json(nlohmann::ordered_json::parse(text));
    harness::validate(cfg);
    harness::propagate_seed(cfg);
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for the M2R2 core library";

    py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<data::DatasetError>(m, "DatasetError", PyExc_ValueError);

    py::class_<data::Dataset>(m, "Dataset")
        .def_static("load", [](const std::string& path) { return data::load_dataset(path); }, py::arg("path"))
        .def_static("from_text",
                    [](const std::string& text) {
                        std::istringstream in(text);
                        return data::read_dataset(in);
                    },
                    py::arg("text"))
        .def("save", [](const data::Dataset& d, const std::string& path) { data::save_dataset(d, path); },
             py::arg("path"))
        .def("to_text",
             [](const data::Dataset& d) {
                 std::ostringstream out;
                 data::write_dataset(d, out);
                 return out.str();
             })
        .def_property_readonly("classes", [](const data::Dataset& d) { return d.classes; })
        .def_property_readonly("dims",
                               [](const data::Dataset& d) {
                                   return std::vector<std::size_t>{d.dims.audio, d.dims.text, d.dims.visual};
                               })
        .def_property_readonly("total_turns", &data::Dataset::total_turns)
        .def("__len__", [](const data::Dataset& d) { return d.conversations.size(); })
        .def("labels", [](const data::Dataset& d) { return data::labels_of(d); })
        .def("missing_rate", [](const data::Dataset& d) { return data::missing_rate(data::masks_of(d)); })
        .def("mask",
             [](const data::Dataset& d, double eta, std::uint64_t seed) {
                 return data::apply_mask(d, data::generate_mask(d, eta, seed));
             },
             py::arg("eta"), py::arg("seed"))
        .def("split",
             [](const data::Dataset& d, double fraction, std::uint64_t seed) {
                 return data::split_dataset(d, fraction, seed);
             },
             py::arg("fraction"), py::arg("seed"));

    m.def(
        "generate_synthetic",
        [](std::size_t conversations, std::uint64_t seed, double noise, double rho) {
            data::SynthSpec spec;
            spec.seed = seed;
            spec.noise = noise;
            spec.rho = rho;
            return data::generate_synthetic(spec, conversations);
        },
        py::arg("conversations"), py::arg("seed") = 0, py::arg("noise") = 0.5, py::arg("rho") = 0.5);

    m.def(
        "evaluate",
        [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels, std::size_t classes) {
            return metrics_text(harness::evaluate(preds, labels, classes), {});
        },
        py::arg("preds"), py::arg("labels"), py::arg("classes"));

    m.def("parse_grid", &harness::parse_grid, py::arg("text"));

    m.def("default_config", [] { return harness::to_json(harness::ExperimentConfig{}).dump(); });

    m.def(
        "grad_check",
        [](std::uint64_t seed, std::size_t seeds) {
            harness::GradSuiteOptions opt;
            opt.seed = seed;
            opt.seeds = seeds;
            py::gil_scoped_release release;
            return harness::to_json(harness::run_grad_suite(opt)).dump();
        },
        py::arg("seed") = 0, py::arg("seeds") = 20);

    m.def(
        "protocol_run",
        [](const std::string& config, const data::Dataset& train, const data::Dataset& test, double eta,
           std::uint64_t seed, const std::string& mode) {
            const auto cfg = config_from_text(config);
            const auto parsed = pipeline::parse_ablation_mode(mode);
            harness::MetricsReport r;
            {
                py::gil_scoped_release release;
                r = harness::protocol_run(cfg, train, test, eta, seed, parsed);
            }
            return metrics_text(r, train.classes);
        },
        py::arg("config"), py::arg("train"), py::arg("test"), py::arg("eta"), py::arg("seed"),
        py::arg("mode") = "full");
}
