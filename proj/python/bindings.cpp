#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <torch/torch.h>

#include "nadapt/adapt.hpp"
#include "nadapt/cli.hpp"
#include "nadapt/config.hpp"
#include "nadapt/diffusion.hpp"
#include "nadapt/error.hpp"
#include "nadapt/image.hpp"
#include "nadapt/probe.hpp"
#include "nadapt/restorer.hpp"
#include "nadapt/trainer.hpp"

namespace py = pybind11;
using namespace nadapt;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const FloatArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

FloatArray to_array(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  FloatArray out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(c.numel()));
  return out;
}

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (C, H, W) array");
  return Image::from_tensor(to_tensor(a));
}

LossNorm norm_arg(const std::string& s) { return loss_norm_from_string(s); }

class PyRestorer {
 public:
  PyRestorer(const std::string& variant, int channels) : net_(build_restorer(variant_from_string(variant), channels)) {}
  explicit PyRestorer(Restorer net) : net_(std::move(net)) {}

  static PyRestorer load(const std::string& path) { return PyRestorer(load_restorer(path)); }
  void save(const std::string& path) const { save_restorer(net_, path, ""); }

  py::tuple restore_batch(const FloatArray& degraded) {
    torch::NoGradGuard guard;
    auto out = nadapt::restore(net_, to_tensor(degraded));
    return py::make_tuple(to_array(out.restored), to_array(out.residual));
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : net_->parameters()) n += static_cast<std::size_t>(p.numel());
    return n;
  }
  std::string variant() const { return to_string(net_->variant()); }

 private:
  Restorer net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of nadapt";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("lambda_schedule",
        [](int epoch, int total, double gamma, double beta) { return lambda_schedule({epoch, total, gamma, beta}); },
        py::arg("epoch"), py::arg("total_epochs"), py::arg("gamma") = 5.0, py::arg("beta") = 0.2);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("beta", &NoiseSchedule::beta)
      .def_readonly("alpha", &NoiseSchedule::alpha)
      .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
      .def_property_readonly("steps", &NoiseSchedule::steps);
  m.def("linear_schedule", &linear_schedule, py::arg("steps") = 1000, py::arg("beta_lo") = 1e-6,
        py::arg("beta_hi") = 1e-2);

  m.def(
      "forward_sample",
      [](const FloatArray& clean, const std::vector<int64_t>& t, const FloatArray& eps, const NoiseSchedule& s) {
        auto b = forward_sample(to_tensor(clean), torch::tensor(t, torch::kInt64), to_tensor(eps), s);
        return py::make_tuple(to_array(b.noisy), to_array(b.sqrt_alpha_bar));
      },
      py::arg("clean"), py::arg("t"), py::arg("eps"), py::arg("schedule"),
      "Returns (noisy, sqrt_alpha_bar) for zero-based timestep indices.");

  m.def(
      "charbonnier_loss",
      [](const FloatArray& pred, const FloatArray& target, double eps) {
        return charbonnier_loss(to_tensor(pred), to_tensor(target), eps).item<double>();
      },
      py::arg("pred"), py::arg("target"), py::arg("eps") = 1e-3);
  m.def(
      "contrastive_loss",
      [](const FloatArray& e, const FloatArray& pos, const FloatArray& neg, double delta, const std::string& norm) {
        return contrastive_loss(to_tensor(e), to_tensor(pos), to_tensor(neg), delta, norm_arg(norm)).item<double>();
      },
      py::arg("eps"), py::arg("eps_pos"), py::arg("eps_neg"), py::arg("delta") = 0.05, py::arg("norm") = "l2");
  m.def("combined_loss", py::overload_cast<double, double, double, double>(&combined_loss), py::arg("l_res"),
        py::arg("l_dif"), py::arg("l_con"), py::arg("lambda_dif"));

  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(to_image(a), to_image(b)); },
      py::arg("pred"), py::arg("target"));
  m.def(
      "ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(to_image(a), to_image(b)); },
      py::arg("pred"), py::arg("target"));
  m.def("spearman", &spearman, py::arg("x"), py::arg("y"));

  py::class_<PyRestorer>(m, "Restorer")
      .def(py::init<const std::string&, int>(), py::arg("variant") = "T", py::arg("channels") = 3)
      .def_static("load", &PyRestorer::load, py::arg("path"))
      .def("save", &PyRestorer::save, py::arg("path"))
      .def("restore", &PyRestorer::restore_batch, py::arg("degraded"),
           "Restores an (N, C, H, W) batch; returns (restored, residual).")
      .def_property_readonly("parameter_count", &PyRestorer::parameter_count)
      .def_property_readonly("variant", &PyRestorer::variant);

  m.def(
      "load_config_json",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return load_config(path, overrides).dump();
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "evaluate_json",
      [](const std::string& checkpoint, const std::string& root, const std::string& split, const std::string& task) {
        const auto r = evaluate(std::filesystem::path(checkpoint), load_eval_pairs(root, split), task_from_string(task));
        json j{{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"per_image", json::array()}};
        for (const auto& s : r.per_image) j["per_image"].push_back({{"image_id", s.image_id}, {"psnr_db", s.psnr_db}, {"ssim", s.ssim}});
        return j.dump();
      },
      py::arg("checkpoint"), py::arg("data_root"), py::arg("split") = "real", py::arg("task") = "denoise");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
