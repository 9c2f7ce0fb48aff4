#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "csunet/battery.hpp"
#include "csunet/data_io.hpp"
#include "csunet/parallel.hpp"
#include "csunet/run_config.hpp"

namespace py = pybind11;
using namespace csunet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  Array<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

Array<std::uint8_t> to_array(const std::vector<std::uint8_t>& v, Shape shape) {
  Array<std::uint8_t> out(std::vector<py::ssize_t>(shape.begin(), shape.end()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<std::uint8_t> to_labels(const Array<std::uint8_t>& a) { return {a.data(), a.data() + a.size()}; }

py::dict to_dict(const Metrics& m) {
  py::dict d;
  d["sen"] = m.sen;
  d["dsc"] = m.dsc;
  d["pre"] = m.pre;
  d["miou"] = m.miou;
  return d;
}

using Network = CSUNet3D<float>;

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Volumetric nodule segmentation network with a reverse-mode autodiff engine";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  m.def("set_thread_count", &set_thread_count, py::arg("n"),
        "Worker threads for convolution; 0 runs single-threaded and deterministic.");

  py::class_<Network>(m, "Network")
      .def(py::init([](const py::object& config) {
             const auto text = config.is_none() ? std::string("{}")
                                                : py::module_::import("json").attr("dumps")(config).cast<std::string>();
             return std::make_unique<Network>(nlohmann::json::parse(text).get<NetworkConfig>());
           }),
           py::arg("config") = py::none(), "Build from a configuration dict; missing keys take defaults.")
      .def_property_readonly("config",
                             [](const Network& n) {
                               return py::module_::import("json").attr("loads")(nlohmann::json(n.config()).dump());
                             })
      .def("parameter_count", &Network::parameter_count)
      .def("summary",
           [](const Network& n) {
             py::list out;
             for (const auto& s : n.summary()) out.append(py::make_tuple(s.name, s.input, s.output));
             return out;
           })
      .def("census",
           [](const Network& n) {
             const auto c = n.census();
             py::dict d;
             d["mini_us"] = c.mini_us;
             d["residual_adds"] = c.residual_adds;
             d["se_gates"] = c.se_gates;
             d["projections"] = c.projections;
             return d;
           })
      .def(
          "predict_logits",
          [](const Network& n, const Array<float>& x) {
            const auto t = to_tensor(x);
            Tensor<float> y;
            {
              py::gil_scoped_release release;
              y = n.predict_logits(t);
            }
            return to_array(y);
          },
          py::arg("x"))
      .def(
          "predict_labels",
          [](const Network& n, const Array<float>& x) {
            const auto logits = n.predict_logits(to_tensor(x));
            auto shape = logits.shape();
            shape[1] = 1;
            return to_array(argmax_labels(logits), shape);
          },
          py::arg("x"))
      .def(
          "evaluate",
          [](const Network& n, const std::filesystem::path& manifest) {
            const auto ev = evaluate(n, load_samples(manifest), LossConfig{});
            py::dict d = to_dict(ev.metrics);
            d["loss"] = ev.loss;
            return d;
          },
          py::arg("manifest"))
      .def("save", [](const Network& n, const std::filesystem::path& p) { save_checkpoint(n, p); }, py::arg("path"))
      .def_static(
          "load", [](const std::filesystem::path& p) { return std::make_unique<Network>(load_checkpoint<float>(p)); },
          py::arg("path"));

  m.def(
      "generate_phantom",
      [](std::int64_t extent, double radius, double contrast, double noise_sigma, std::uint64_t seed,
         std::optional<std::array<double, 3>> center) {
        PhantomSpec s;
        s.extent = extent;
        s.radius = radius;
        s.contrast = contrast;
        s.noise_sigma = noise_sigma;
        s.seed = seed;
        s.center = center;
        const auto p = generate_phantom(s);
        return py::make_tuple(to_array(p.image), to_array(p.mask), p.center);
      },
      py::arg("extent") = 32, py::arg("radius") = 4.0, py::arg("contrast") = kSolidContrast,
      py::arg("noise_sigma") = 0.1, py::arg("seed") = 0, py::arg("center") = py::none());

  m.def(
      "read_volume", [](const std::filesystem::path& p) { return to_array(read_volume(p)); }, py::arg("path"));
  m.def(
      "write_volume",
      [](const std::filesystem::path& p, const Array<float>& v, const std::string& dtype) {
        if (dtype != "float32" && dtype != "uint8") throw std::invalid_argument("dtype must be float32 or uint8");
        write_volume(p, to_tensor(v), dtype == "uint8" ? VolumeDType::uint8 : VolumeDType::float32);
      },
      py::arg("path"), py::arg("volume"), py::arg("dtype") = "float32");
  m.def("build_manifest", [](const std::filesystem::path& dir) { build_manifest(dir); }, py::arg("dir"));

  m.def(
      "conv3d",
      [](const Array<double>& x, const Array<double>& w, std::optional<Array<double>> bias, Triple stride,
         Triple padding, Triple dilation) {
        std::optional<Var<double>> b;
        if (bias) b = Var<double>::constant(to_tensor(*bias));
        return to_array(conv3d(Var<double>::constant(to_tensor(x)), Var<double>::constant(to_tensor(w)), b,
                               ConvOptions{stride, padding, dilation})
                            .value());
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = Triple{1, 1, 1},
      py::arg("padding") = Triple{0, 0, 0}, py::arg("dilation") = Triple{1, 1, 1});

  m.def(
      "dice_loss",
      [](const Array<double>& probs, const Array<double>& target, double eps) {
        LossConfig c;
        c.epsilon = eps;
        return dice_loss(Var<double>::constant(to_tensor(probs)), to_tensor(target), c).value().item();
      },
      py::arg("probs"), py::arg("target"), py::arg("epsilon") = 1e-5);
  m.def(
      "ce_loss",
      [](const Array<double>& logits, const Array<double>& onehot) {
        return ce_loss(Var<double>::constant(to_tensor(logits)), to_tensor(onehot), LossConfig{}).value().item();
      },
      py::arg("logits"), py::arg("onehot"));
  m.def(
      "metrics",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& target) {
        return to_dict(metrics(confusion_counts(to_labels(pred), to_labels(target))));
      },
      py::arg("pred"), py::arg("target"));

  m.def(
      "kfold_split",
      [](const std::vector<std::string>& ids, int k, std::uint64_t seed) {
        py::list out;
        for (const auto& f : kfold_split(ids, k, seed)) out.append(py::make_tuple(f.train_ids, f.val_ids));
        return out;
      },
      py::arg("ids"), py::arg("k"), py::arg("seed") = 0);

  m.def(
      "cross_validate",
      [](const std::string& run_config_json, const std::filesystem::path& manifest) {
        const auto cfg = parse_run_config(run_config_json);
        const auto samples = load_samples(manifest);
        CrossValidationReport report;
        {
          py::gil_scoped_release release;
          report = cross_validate<float>(samples, cfg.network, cfg.train, cfg.loss);
        }
        return nlohmann::json(report).dump();
      },
      py::arg("run_config_json"), py::arg("manifest"));

  m.def(
      "gradcheck_battery",
      [](double tol, std::uint64_t seed) {
        std::vector<BatteryItem> items;
        {
          py::gil_scoped_release release;
          items = run_gradcheck_battery(BatteryOptions{tol, seed});
        }
        py::list out;
        for (const auto& it : items) {
          py::dict d;
          d["name"] = it.name;
          d["kind"] = to_string(it.kind);
          d["tol"] = it.tol;
          d["max_rel_err"] = it.report.max_rel_err;
          d["pass"] = it.report.pass;
          d["seconds"] = it.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("tol") = 1e-4, py::arg("seed") = 7);
}
