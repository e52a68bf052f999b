#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <torch/torch.h>

#include "densemtl/config.hpp"
#include "densemtl/data.hpp"
#include "densemtl/experiments.hpp"
#include "densemtl/losses.hpp"
#include "densemtl/metrics.hpp"
#include "densemtl/model.hpp"
#include "densemtl/trainer.hpp"
#include "densemtl/uda.hpp"

namespace py = pybind11;
using namespace densemtl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<int64_t, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone();
}

torch::Tensor to_tensor(const LabelArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<int64_t*>(a.data()), shape, torch::kLong).clone();
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  const auto c = t.contiguous();
  py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), static_cast<size_t>(c.numel()) * sizeof(T));
  return out;
}

std::map<Task, double> task_map(const std::map<std::string, double>& in) {
  std::map<Task, double> out;
  for (const auto& [k, v] : in) out[parse_task(k)] = v;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dense multi-task learning with cross-task attention (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def(
      "delta_metric",
      [](const std::map<std::string, double>& model, const std::map<std::string, double>& baseline) {
        const auto mm = task_map(model);
        std::map<Task, MetricDirection> dir;
        for (const auto& [t, _] : mm) dir[t] = metric_direction(t);
        return delta_metric(mm, task_map(baseline), dir);
      },
      py::arg("model"), py::arg("baseline"),
      "Mean relative improvement (percent) over single-task baselines, keyed by task code.");

  m.def(
      "berhu",
      [](const Array& residual, std::optional<double> threshold) {
        return berhu(to_tensor(residual), threshold).item<double>();
      },
      py::arg("residual"), py::arg("threshold") = py::none());

  m.def(
      "weighted_self_information",
      [](const Array& probs) { return to_numpy<double>(weighted_self_information(to_tensor(probs))); },
      py::arg("probs"));

  m.def(
      "normals_from_depth",
      [](const Array& depth, double fx, double fy, double cx, double cy) {
        return to_numpy<float>(normals_from_depth(to_tensor(depth), Intrinsics{fx, fy, cx, cy}));
      },
      py::arg("depth"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"));

  m.def(
      "miou",
      [](const LabelArray& pred, const LabelArray& gt, int64_t num_classes) {
        return miou(to_tensor(pred), to_tensor(gt), num_classes);
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"));

  m.def(
      "mean_angular_error",
      [](const Array& pred, const Array& gt) { return mean_angular_error(to_tensor(pred), to_tensor(gt)); },
      py::arg("pred"), py::arg("gt"), "Mean angle in degrees between [B, 3, H, W] normal maps.");

  m.def(
      "synthetic_scene",
      [](uint64_t seed, int64_t size, int64_t num_classes) {
        const auto s = synthetic_scene(seed, size, num_classes);
        py::dict d;
        d["image"] = to_numpy<float>(s.image);
        d["seg"] = to_numpy<int64_t>(s.seg);
        d["depth"] = to_numpy<float>(s.depth);
        d["normals"] = to_numpy<float>(s.normals);
        d["edges"] = to_numpy<uint8_t>(s.edges);
        d["intrinsics"] = py::make_tuple(s.intrinsics.fx, s.intrinsics.fy, s.intrinsics.cx, s.intrinsics.cy);
        return d;
      },
      py::arg("seed"), py::arg("size") = 64, py::arg("num_classes") = 4);

  m.def(
      "canonical_config", [](const std::string& text) { return dump_config(parse_config(text)); },
      py::arg("text"), "Validated config in canonical JSON form.");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("text"));

  m.def(
      "parameter_count",
      [](const std::string& model_json) {
        const auto cfg = nlohmann::json::parse(model_json).get<ModelConfig>();
        return parameter_count(*build_model(cfg));
      },
      py::arg("model_json"));

  m.def(
      "ablation_labels",
      [](const std::string& axis) {
        std::vector<std::string> labels;
        for (const auto& v : ablation_variants(ExperimentConfig{}, parse_ablation_axis(axis))) labels.push_back(v.label);
        return labels;
      },
      py::arg("axis"));

  m.def(
      "train",
      [](const std::string& text, const std::string& out_dir) {
        const auto cfg = parse_config(text);
        RunReport r;
        {
          py::gil_scoped_release release;
          r = train(cfg, out_dir);
        }
        return nlohmann::json(r).dump();
      },
      py::arg("config"), py::arg("out_dir") = "", "Runs training and returns the run report as JSON text.");
}
