// Python bindings. Structured values cross the boundary as JSON text; the
// package wrapper turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "supra/app.hpp"
#include "supra/checkpoint.hpp"
#include "supra/errors.hpp"
#include "supra/ops.hpp"

namespace py = pybind11;
using namespace supra;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_values(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  FloatArray out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& text) {
  return text.empty() ? RunConfig{} : run_config_from_json(nlohmann::json::parse(text));
}

std::string frame_metrics_json(const FrameMetrics& m) {
  auto opt = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json());
    return a;
  };
  return nlohmann::json{{"accuracy", m.accuracy},
                        {"precision", opt(m.precision)},
                        {"recall", opt(m.recall)},
                        {"jaccard", opt(m.jaccard)}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Surgical phase recognition and anticipation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) {
    const RunConfig c = config_from(text);
    c.validate();
    return to_json(c).dump();
  });

  m.def("edit_score", [](std::vector<int> pred, std::vector<int> gt) { return edit_score(pred, gt); });
  m.def("f1_overlap", [](std::vector<int> pred, std::vector<int> gt, double threshold) {
    return f1_overlap(pred, gt, threshold);
  });
  m.def("frame_metrics", [](std::vector<int> pred, std::vector<int> gt, std::size_t n_classes) {
    return frame_metrics_json(frame_metrics(pred, gt, n_classes));
  });
  m.def("next_segment_labels", [](std::vector<int> gt, std::size_t k, int end_class) {
    return next_segment_labels(gt, k, end_class);
  });
  m.def("cumulative_max", [](const FloatArray& x) { return to_array(cumulative_max_time(to_tensor(x)).values); });

  m.def("generate", [](const std::string& config, const std::filesystem::path& out) {
    const Manifest man = generate_to_disk(config_from(config).generator, out);
    return man.videos.size();
  });

  m.def(
      "train",
      [](const std::string& config, const std::filesystem::path& manifest, const std::filesystem::path& run_dir,
         std::optional<std::size_t> max_epochs, std::optional<std::filesystem::path> resume) {
        TrainOptions o;
        o.manifest = manifest;
        o.run_dir = run_dir;
        o.max_epochs = max_epochs;
        o.resume = resume;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(config_from(config), o);
        }
        return py::make_tuple(r.final_checkpoint, r.epochs_completed, r.seconds);
      },
      py::arg("config"), py::arg("manifest"), py::arg("run_dir"), py::arg("max_epochs") = py::none(),
      py::arg("resume") = py::none());

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, const std::string& split,
         bool batch) {
        EvalOptions o;
        o.checkpoint = checkpoint;
        o.manifest = manifest;
        o.split = split;
        o.batch = batch;
        return evaluate_checkpoint(o).to_json().dump();
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test", py::arg("batch") = false);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config, std::uint64_t seed) {
             return Model(config_from(config).model, seed);
           }),
           py::arg("config") = "", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("config", [](const Model& model) { return to_json(model.config()).dump(); })
      .def("parameter_count",
           [](const Model& model) {
             std::size_t n = 0;
             for (const auto& p : model.parameters().items()) n += p.tensor.numel();
             return n;
           })
      .def("parameter_names",
           [](const Model& model) {
             std::vector<std::string> names;
             for (const auto& p : model.parameters().items()) names.push_back(p.name);
             return names;
           })
      .def(
          "predict",
          [](Model& model, const FloatArray& features, bool batch) {
            if (features.ndim() != 2) throw py::value_error("features must be [T, d_feat]");
            const auto preds = predict_video(model, to_tensor(features), batch);
            const std::size_t t = preds.size(), c = model.config().n_classes, nq = model.config().n_queries;
            py::array_t<int> phase(static_cast<py::ssize_t>(t));
            FloatArray probs({t, c});
            py::array_t<int> next({t, nq});
            FloatArray durations({t, nq});
            for (std::size_t i = 0; i < t; ++i) {
              phase.mutable_at(i) = preds[i].phase;
              std::copy(preds[i].probs.begin(), preds[i].probs.end(), probs.mutable_data(i));
              for (std::size_t q = 0; q < nq; ++q) {
                next.mutable_at(i, q) = preds[i].next_phases[q];
                durations.mutable_at(i, q) = preds[i].next_durations_sec[q];
              }
            }
            py::dict out;
            out["phase"] = phase;
            out["probs"] = probs;
            out["next_phase"] = next;
            out["next_duration_sec"] = durations;
            return out;
          },
          py::arg("features"), py::arg("batch") = false);
}
