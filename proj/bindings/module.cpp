// Python bindings: dataset generators, checkpoint access, geometry metrics,
// and the experiment runner.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lcnn/checkpoint.hpp"
#include "lcnn/experiments.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/train.hpp"

namespace py = pybind11;
using namespace lcnn;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = std::size_t(a.shape(i));
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

}  // namespace

PYBIND11_MODULE(_lcnn, m) {
  m.doc() = "low-curvature network training and geometry metrics";

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("inputs",
                             [](const Dataset& d) { return array_from_tensor(d.inputs); })
      .def_readonly("labels", &Dataset::labels)
      .def_property_readonly("size", [](const Dataset& d) { return d.size(); })
      .def_property_readonly("num_classes",
                             [](const Dataset& d) { return d.num_classes(); });

  m.def("two_moons", &two_moons, py::arg("n"), py::arg("noise_std"), py::arg("seed"),
        py::arg("split") = "train");
  m.def("synthetic_images", &synthetic_images, py::arg("n"), py::arg("classes"),
        py::arg("height"), py::arg("width"), py::arg("noise_std"), py::arg("seed"),
        py::arg("split") = "train");

  py::class_<Model>(m, "Model")
      .def("logits",
           [](Model& model, const py::array_t<double>& x) {
             return array_from_tensor(model.logits(tensor_from_array(x)));
           })
      .def("predict",
           [](Model& model, const py::array_t<double>& x) {
             return model.predict(tensor_from_array(x));
           })
      .def("curvature_bound", [](const Model& model) { return theorem1_bound(model); })
      .def("normalized_curvature",
           [](Model& model, const py::array_t<double>& x, int target, int iters,
              std::uint64_t seed) {
             return normalized_curvature(model, tensor_from_array(x), target, iters, seed);
           },
           py::arg("x"), py::arg("target"), py::arg("iters") = 20, py::arg("seed") = 0)
      .def("save", [](Model& model, const std::string& path) { save_checkpoint(model, path); });

  // Model owns unique_ptr layers, so hand it to Python through a pointer.
  m.def("load_checkpoint",
        [](const std::string& path) { return std::make_unique<Model>(load_checkpoint(path)); },
        py::arg("manifest_path"));

  m.def("accuracy",
        [](Model& model, const Dataset& ds) { return accuracy(model, ds); });

  m.def("run_experiment",
        [](const py::dict& cfg) {
          ExperimentSpec spec;
          py::object dumps = py::module_::import("json").attr("dumps");
          nlohmann::json j = nlohmann::json::parse(py::cast<std::string>(dumps(cfg)));
          apply_json_overrides(spec, j);
          spec.command = j.value("command", std::string("train"));
          return run_experiment(spec);
        },
        "Run one experiment command from a config dict; returns the exit code.");
}
