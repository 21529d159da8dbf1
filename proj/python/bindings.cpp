#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "conceptbp/adapters.hpp"
#include "conceptbp/board.hpp"
#include "conceptbp/maximiser.hpp"
#include "conceptbp/model.hpp"
#include "conceptbp/pipeline.hpp"
#include "conceptbp/probe.hpp"
#include "conceptbp/reports.hpp"

namespace py = pybind11;
using namespace conceptbp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

MaximiseConfig maximise_config(const py::dict& d) {
  MaximiseConfig c;
  for (auto [key, value] : d) {
    const auto k = key.cast<std::string>();
    if (k == "lambda1") c.lambda1 = value.cast<double>();
    else if (k == "lambda2") c.lambda2 = value.cast<double>();
    else if (k == "target") c.target = value.cast<double>();
    else if (k == "max_steps") c.max_steps = value.cast<std::size_t>();
    else if (k == "learning_rate") c.learning_rate = value.cast<double>();
    else if (k == "tolerance") c.tolerance = value.cast<double>();
    else if (k == "seed") c.seed = value.cast<std::uint64_t>();
    else throw ConfigError("unknown maximise setting '" + k + "'");
  }
  c.validate();
  return c;
}

py::dict result_dict(const PerturbationResult& r) {
  py::dict d;
  d["status"] = status_name(r.status);
  d["initial_probe"] = r.initial_probe;
  d["probe_output"] = r.probe_output;
  d["distance"] = r.distance;
  d["perturbed"] = to_array(r.perturbed);
  d["steps"] = r.trajectory.size();
  d["message"] = r.message;
  return d;
}

pipeline::Invocation invocation(const std::string& config_path, const std::filesystem::path& out) {
  return {config_path, out};
}

}  // namespace

PYBIND11_MODULE(_conceptbp, m) {
  m.doc() = "Concept probing and concept backpropagation";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_static("deserialize", [](const py::bytes& b) { return Model::deserialize(std::string(b)); })
      .def("serialize", [](const Model& model) { return py::bytes(model.serialize()); })
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("output_shape", &Model::output_shape)
      .def("taps", &Model::taps)
      .def("forward", [](const Model& model, const Array& batch) { return to_array(model.forward(to_tensor(batch))); })
      .def("activations", [](const Model& model, const std::string& tap, const Array& batch) {
        return to_array(model.activations(tap, to_tensor(batch)));
      });

  py::class_<Probe>(m, "Probe")
      .def_static("load", &Probe::load, py::arg("path"))
      .def_readonly("tap", &Probe::tap)
      .def_readonly("bias", &Probe::bias)
      .def_property_readonly("kind", [](const Probe& p) { return concept_kind_name(p.kind); })
      .def_property_readonly("weights", [](const Probe& p) { return to_array(p.weights); })
      .def("predict", [](const Probe& p, const Array& activation) { return p.predict(to_tensor(activation)); });

  m.def(
      "maximise_tabular",
      [](const Model& model, const Probe& probe, const Array& sample, const py::dict& settings) {
        const auto s = to_tensor(sample);
        TabularAdapter adapter(s.size());
        return result_dict(maximise(model, probe, adapter, s, maximise_config(settings)));
      },
      py::arg("model"), py::arg("probe"), py::arg("sample"), py::arg("settings") = py::dict());

  auto board = m.def_submodule("board", "6x6 chess boards");
  board.def("encode", [](const std::string& text) { return to_array(board::Board::from_text(text).encode()); });
  board.def("decode", [](const Array& planes) { return board::Board::decode(to_tensor(planes)).to_text(); });
  board.def("legality_violations",
            [](const std::string& text) { return board::legality_violations(board::Board::from_text(text)); });
  board.def("is_legal", [](const std::string& text) { return board::is_legal(board::Board::from_text(text)); });
  board.def("queen_threat", [](const std::string& text) { return board::queen_threat(board::Board::from_text(text)); });
  board.def("starting_position", [] { return board::Board::starting_position().to_text(); });
  board.def("generate", [](std::size_t n, std::uint64_t seed) {
    std::vector<std::string> out;
    for (const auto& b : board::generate_boards(n, seed)) out.push_back(b.to_text());
    return out;
  });

  m.def("format_pgm", [](const Array& image, const std::string& comment) {
    return py::bytes(format_pgm(to_tensor(image), comment));
  });
  m.def("parse_pgm", [](const py::bytes& bytes) { return to_array(parse_pgm(std::string(bytes))); });

  auto pl = m.def_submodule("pipeline", "End-to-end pipelines driven by a JSON config");
  py::class_<pipeline::Config>(pl, "Config")
      .def_property_readonly("pipeline", [](const pipeline::Config& c) { return pipeline::kind_name(c.pipeline); })
      .def_readwrite("seed", &pipeline::Config::seed);
  pl.def("load_config", &pipeline::load_config, py::arg("path"));
  pl.def("parse_config", [](const std::string& text) { return pipeline::parse_config(text); }, py::arg("text"));
  pl.def(
      "train",
      [](const pipeline::Config& c, const std::filesystem::path& out, const std::string& config_path) {
        const auto s = pipeline::run_train(c, invocation(config_path, out));
        py::dict d;
        d["held_out_loss"] = s.held_out_loss;
        d["loss_curve"] = s.loss_curve;
        d["reconstruction_mse"] = s.reconstruction_mse;
        d["legality_accuracy"] = s.legality_accuracy;
        d["start_position_illegality"] = s.start_position_illegality;
        return d;
      },
      py::arg("config"), py::arg("out"), py::arg("config_path") = "");
  pl.def(
      "probe",
      [](const pipeline::Config& c, const std::filesystem::path& out, const std::string& config_path) {
        const auto r = pipeline::run_probe(c, invocation(config_path, out));
        py::dict d;
        d["kind"] = concept_kind_name(r.kind);
        d["accuracy"] = r.accuracy;
        d["auc"] = r.auc;
        d["r2"] = r.r2;
        d["l1_mass"] = r.l1_mass;
        return d;
      },
      py::arg("config"), py::arg("out"), py::arg("config_path") = "");
  pl.def(
      "maximise",
      [](const pipeline::Config& c, const std::filesystem::path& out, const std::string& config_path) {
        py::list runs;
        for (const auto& r : pipeline::run_maximise(c, invocation(config_path, out))) {
          auto d = result_dict(r.result);
          d["pool_index"] = r.pool_index;
          d["concept_before"] = r.concept_before;
          d["concept_after"] = r.concept_after;
          runs.append(d);
        }
        return runs;
      },
      py::arg("config"), py::arg("out"), py::arg("config_path") = "");
  pl.def(
      "sweep",
      [](const pipeline::Config& c, const std::filesystem::path& out, const std::string& config_path) {
        const auto s = pipeline::run_sweep(c, invocation(config_path, out));
        py::dict d;
        for (std::size_t i = 0; i < s.lambda2s.size(); ++i) {
          py::list runs;
          for (const auto& r : s.runs[i]) runs.append(result_dict(r.result));
          d[py::float_(s.lambda2s[i])] = runs;
        }
        return d;
      },
      py::arg("config"), py::arg("out"), py::arg("config_path") = "");
}
