// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "hsakd/cli.hpp"
#include "hsakd/config.hpp"
#include "hsakd/data.hpp"
#include "hsakd/errors.hpp"
#include "hsakd/eval.hpp"
#include "hsakd/losses.hpp"
#include "hsakd/training.hpp"
#include "hsakd/transforms.hpp"

namespace py = pybind11;
using namespace hsakd;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// 2-D float array to an f64 tensor.
Tensor to_tensor(const F64Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array of logits");
  const Shape shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
  return Tensor::from_values(shape, std::span<const double>(a.data(), a.size()), DType::f64);
}

std::vector<Tensor> to_tensors(const std::vector<F64Array>& arrays) {
  std::vector<Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

RunConfig make_config(const KeyValues& kv) {
  return apply_key_values(RunConfig{}, kv);
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["top1"] = r.top1;
  d["per_class"] = r.per_class;
  d["class_counts"] = r.class_counts;
  d["samples"] = r.samples;
  d["seconds"] = r.seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hsakd, m) {
  m.doc() = "Knowledge distillation through stage-wise rotation-label auxiliary classifiers.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::enum_<SplitTag>(m, "SplitTag").value("train", SplitTag::train).value("test", SplitTag::test);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("channels", &Dataset::channels)
      .def_readonly("side", &Dataset::side)
      .def("__len__", &Dataset::size)
      .def_property_readonly("labels",
                             [](const Dataset& d) {
                               return py::array_t<std::uint16_t>(d.labels.size(), d.labels.data());
                             })
      .def_property_readonly("images",
                             [](const Dataset& d) {
                               py::array_t<std::uint8_t> a({d.size(), d.channels, d.side, d.side});
                               std::memcpy(a.mutable_data(), d.pixels.data(), d.pixels.size());
                               return a;
                             })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; })
      .def("hash", &dataset_hash);

  m.def(
      "synth_generate",
      [](std::size_t classes, std::size_t per_class, std::size_t side, std::size_t channels,
         double noise_std, std::uint64_t seed, SplitTag split) {
        SynthOptions o;
        o.classes = classes;
        o.per_class = per_class;
        o.side = side;
        o.channels = channels;
        o.noise_std = noise_std;
        o.seed = seed;
        o.split = split;
        return synth_generate(o);
      },
      py::arg("classes") = SynthOptions{}.classes, py::arg("per_class") = SynthOptions{}.per_class,
      py::arg("side") = SynthOptions{}.side, py::arg("channels") = SynthOptions{}.channels,
      py::arg("noise_std") = SynthOptions{}.noise_std, py::arg("seed") = SynthOptions{}.seed,
      py::arg("split") = SplitTag::train);
  m.def("read_dataset", &read_dataset, py::arg("path"), py::arg("split") = SplitTag::train);
  m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("path"));
  m.def("few_shot_split", &few_shot_split, py::arg("dataset"), py::arg("fraction"),
        py::arg("seed") = 1);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("config_text", &Checkpoint::config_text)
      .def_property_readonly("parameter_names",
                             [](const Checkpoint& c) {
                               std::vector<std::string> names;
                               for (const auto& p : c.tensors) names.push_back(p.name);
                               return names;
                             })
      .def("hash", &checkpoint_hash);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", py::overload_cast<const Checkpoint&, const std::filesystem::path&>(
                               &save_checkpoint),
        py::arg("checkpoint"), py::arg("path"));

  m.def(
      "config_text", [](const KeyValues& kv) { return to_text(make_config(kv)); },
      py::arg("options") = KeyValues{});
  m.def(
      "train_teacher",
      [](const KeyValues& kv, const Dataset& data) {
        const RunConfig c = make_config(kv);
        py::gil_scoped_release release;
        return train_teacher(c, data).checkpoint;
      },
      py::arg("options"), py::arg("data"));
  m.def(
      "train_student",
      [](const KeyValues& kv, const Checkpoint& teacher, const Dataset& data) {
        const RunConfig c = make_config(kv);
        py::gil_scoped_release release;
        return train_student(c, teacher, data).checkpoint;
      },
      py::arg("options"), py::arg("teacher"), py::arg("data"));
  m.def(
      "evaluate",
      [](const Checkpoint& ckpt, const Dataset& data) {
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = evaluate_top1(ckpt, data);
        }
        return report_dict(r);
      },
      py::arg("checkpoint"), py::arg("data"));

  m.def(
      "cross_entropy",
      [](const F64Array& logits, const std::vector<std::size_t>& labels, double tau) {
        return cross_entropy(to_tensor(logits), labels, tau).item();
      },
      py::arg("logits"), py::arg("labels"), py::arg("tau") = 1.0);
  m.def(
      "kd_kl_loss",
      [](const F64Array& t, const F64Array& s, double tau) {
        return kd_kl_loss(to_tensor(t), to_tensor(s), tau).item();
      },
      py::arg("teacher"), py::arg("student"), py::arg("tau"));
  m.def(
      "loss_kl_q",
      [](const std::vector<F64Array>& t, const std::vector<F64Array>& s, double tau) {
        return loss_kl_q(to_tensors(t), to_tensors(s), tau).item();
      },
      py::arg("teacher_aux"), py::arg("student_aux"), py::arg("tau"));
  m.def(
      "loss_kl_p",
      [](const F64Array& t, const F64Array& s, double tau) {
        return loss_kl_p(to_tensor(t), to_tensor(s), tau).item();
      },
      py::arg("teacher"), py::arg("student"), py::arg("tau"));
  m.def(
      "ce_sad",
      [](const std::vector<F64Array>& aux, const std::vector<std::size_t>& joint, double tau) {
        return ce_sad(to_tensors(aux), joint, tau, aux.size()).item();
      },
      py::arg("aux_logits"), py::arg("joint_labels"), py::arg("tau") = 1.0);

  m.def(
      "joint_label",
      [](std::size_t y, std::size_t j, std::size_t classes, std::size_t transforms) {
        return joint_label(y, j, LabelSpace(classes, transforms));
      },
      py::arg("y"), py::arg("j"), py::arg("classes"), py::arg("transforms"));
  m.def(
      "split_label",
      [](std::size_t k, std::size_t classes, std::size_t transforms) {
        return split_label(k, LabelSpace(classes, transforms));
      },
      py::arg("k"), py::arg("classes"), py::arg("transforms"));
  m.def(
      "rotate_quarter",
      [](const U8Array& image, int turns) {
        if (image.ndim() != 3 || image.shape(1) != image.shape(2)) {
          throw py::value_error("expected a C x side x side uint8 image");
        }
        const auto c = static_cast<std::size_t>(image.shape(0));
        const auto s = static_cast<std::size_t>(image.shape(1));
        const auto out = rotate_quarter<std::uint8_t>(
            std::span<const std::uint8_t>(image.data(), image.size()), c, s, s, turns);
        py::array_t<std::uint8_t> a({c, s, s});
        std::memcpy(a.mutable_data(), out.data(), out.size());
        return a;
      },
      py::arg("image"), py::arg("turns"));

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "hsakd");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
