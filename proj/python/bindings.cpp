#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "azsl/error.hpp"
#include "azsl/eval.hpp"
#include "azsl/experiment.hpp"
#include "azsl/risk_log.hpp"

namespace py = pybind11;
using namespace azsl;

namespace {

py::array_t<double> to_numpy(const num::Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

py::dict report_dict(const eval::EvalReport& r) {
    py::dict d;
    d["task"] = std::string(eval::to_string(r.task));
    d["u"] = r.u;
    d["s"] = r.s;
    d["H"] = r.H;
    d["per_class"] = r.per_class;
    d["confusion"] = r.confusion;
    d["text"] = r.to_text();
    return d;
}

py::dict audit_dict(const cli::AuditSummary& s) {
    py::dict d;
    d["messages"] = s.messages;
    d["up"] = s.up;
    d["down"] = s.down;
    d["bytes_up"] = s.bytes_up;
    d["bytes_down"] = s.bytes_down;
    d["low"] = s.low;
    d["mid"] = s.mid;
    d["kinds"] = s.kinds;
    d["mid_kinds"] = s.mid_kinds;
    d["verdict"] = s.verdict();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Absolute zero-shot learning: synthetic data, teacher feedback, data-free client, evaluation";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<ProtocolError>(m, "ProtocolError", error.ptr());

    m.def("harmonic_mean", &eval::harmonic_mean, py::arg("u"), py::arg("s"));
    m.def(
        "per_class_top1",
        [](const std::vector<data::ClassId>& preds, const std::vector<data::ClassId>& labels,
           const std::vector<data::ClassId>& classes) { return eval::per_class_top1(preds, labels, classes); },
        py::arg("preds"), py::arg("labels"), py::arg("classes"));

    m.def(
        "make_synthetic",
        [](std::size_t num_classes, std::size_t seen_count, std::size_t feature_dim, std::size_t semantic_dim,
           std::size_t per_class, double separation, double noise, std::uint64_t seed) {
            data::SyntheticSpec spec;
            spec.num_classes = num_classes;
            spec.seen_count = seen_count;
            spec.feature_dim = feature_dim;
            spec.semantic_dim = semantic_dim;
            spec.per_class = per_class;
            spec.separation = separation;
            spec.noise = noise;
            const auto ds = data::make_synthetic(spec, seed);
            py::dict d;
            d["features"] = to_numpy(ds.features);
            d["labels"] = ds.labels;
            d["semantics"] = to_numpy(ds.semantics.rows);
            d["class_names"] = ds.class_names;
            return d;
        },
        py::arg("num_classes") = 10, py::arg("seen_count") = 8, py::arg("feature_dim") = 64,
        py::arg("semantic_dim") = 16, py::arg("per_class") = 200, py::arg("separation") = 1.0,
        py::arg("noise") = 0.2, py::arg("seed") = 0);

    py::class_<cli::ExperimentConfig>(m, "Config")
        .def_static(
            "from_text",
            [](const std::string& text, const std::filesystem::path& base_dir) {
                return cli::parse_config_text(text, base_dir);
            },
            py::arg("text"), py::arg("base_dir") = std::filesystem::path{})
        .def_static("from_file", &cli::parse_config, py::arg("path"))
        .def("to_text", &cli::emit_config)
        .def_readwrite("seed", &cli::ExperimentConfig::seed)
        .def_property_readonly("scenario",
                               [](const cli::ExperimentConfig& c) { return std::string(wire::to_string(c.scenario)); })
        .def_property_readonly(
            "teacher_mode", [](const cli::ExperimentConfig& c) { return std::string(data::to_string(c.teacher_mode)); })
        .def(py::self == py::self)
        .def("__repr__", [](const cli::ExperimentConfig& c) {
            return "<azsl.Config " + std::string(wire::to_string(c.scenario)) + "/" +
                   std::string(data::to_string(c.teacher_mode)) + " seed=" + std::to_string(c.seed) + ">";
        });

    m.def(
        "run_experiment",
        [](const cli::ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
            cli::RunResult res;
            {
                py::gil_scoped_release release;
                res = cli::run_experiment(cfg, cli::RunSeeds::from_master(cfg.seed), out_dir);
            }
            py::dict d;
            d["czsl"] = report_dict(res.czsl);
            d["gzsl"] = report_dict(res.gzsl);
            d["teacher_accuracy"] = res.teacher_test_accuracy;
            d["transcript"] = res.bundle.transcript.to_json();
            d["transcript_digest"] = res.bundle.transcript.digest();
            return d;
        },
        py::arg("config"), py::arg("out_dir") = std::filesystem::path{});

    m.def(
        "audit", [](const std::string& transcript_json) { return audit_dict(cli::audit(RiskLog::from_json(transcript_json))); },
        py::arg("transcript_json"));
    m.def(
        "audit_file", [](const std::filesystem::path& path) { return audit_dict(cli::audit(RiskLog::load(path))); },
        py::arg("path"));
}
