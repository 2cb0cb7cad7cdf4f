#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "idaa/bench.hpp"
#include "idaa/weights_io.hpp"

namespace py = pybind11;
using namespace idaa;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_array(const FloatArray &a) {
  if (a.ndim() != 3) throw ValueError("expected a [C,H,W] array");
  Tensor<float> t(Shape{int(a.shape(0)), int(a.shape(1)), int(a.shape(2))});
  std::memcpy(t.data.data(), a.data(), t.data.size() * sizeof(float));
  return t;
}

py::array_t<float> array_from_tensor(const Tensor<float> &t) {
  std::vector<py::ssize_t> sh(t.shape.begin(), t.shape.end());
  py::array_t<float> a(sh);
  std::memcpy(a.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
  return a;
}

AttackConfig make_config(double eps, int iters, double alpha, int group,
                         double gamma, double beta1, double beta2, double delta,
                         double rho, int repeats, const std::string &loss,
                         double dim_prob, double mi_mu, uint64_t seed) {
  AttackConfig c;
  c.eps = eps;
  c.iters = iters;
  c.alpha = alpha;
  c.group = group;
  c.gamma = gamma;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.delta = delta;
  c.mixup.ratio = rho;
  c.mixup.repeats = repeats;
  if (loss == "triplet") c.loss = LossMode::triplet;
  else if (loss == "plain-ce") c.loss = LossMode::plain_ce;
  else throw ValueError("loss must be 'triplet' or 'plain-ce'");
  c.dim_prob = dim_prob;
  c.mi_mu = mi_mu;
  c.seed = seed;
  validate_attack_config(c);
  return c;
}

std::vector<const ModelWeights *> model_ptrs(const py::object &models) {
  std::vector<const ModelWeights *> out;
  if (py::isinstance<ModelWeights>(models)) {
    out.push_back(models.cast<ModelWeights *>());
    return out;
  }
  for (const py::handle &h : models) out.push_back(h.cast<ModelWeights *>());
  return out;
}

py::dict row_to_dict(const MetricsRow &r) {
  py::dict d;
  d["method"] = r.method;
  d["surrogates"] = r.surrogates;
  d["target"] = r.target;
  d["white_box"] = r.white_box;
  d["fsuc"] = r.fsuc;
  d["tsuc"] = r.tsuc;
  d["n"] = r.n;
  d["seed"] = r.seed;
  d["eps"] = r.eps;
  d["alpha"] = r.alpha;
  d["T"] = r.iters;
  d["N"] = r.group;
  d["gamma"] = r.gamma;
  d["beta1"] = r.beta1;
  d["beta2"] = r.beta2;
  d["rho"] = r.rho;
  d["K"] = r.repeats;
  return d;
}

std::vector<NamedModel> named_models(const py::object &pairs) {
  std::vector<NamedModel> out;
  for (const py::handle &h : pairs) {
    auto tup = h.cast<py::tuple>();
    if (tup.size() != 2) throw ValueError("models must be (name, model) pairs");
    out.push_back({tup[0].cast<std::string>(), *tup[1].cast<ModelWeights *>()});
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_idaa, m) {
  m.doc() = "transferable targeted adversarial example toolkit";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "ValueError", PyExc_ValueError);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("images",
                             [](const Dataset &ds) {
                               py::list out;
                               for (const auto &img : ds.images)
                                 out.append(array_from_tensor(img));
                               return out;
                             })
      .def_property_readonly("labels",
                             [](const Dataset &ds) { return ds.labels; })
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("provenance", &Dataset::provenance)
      .def("__len__", [](const Dataset &ds) { return ds.images.size(); });

  m.def("synth_dataset",
        static_cast<Dataset (*)(uint64_t, int, int, int, double)>(&synth_dataset),
        py::arg("seed"), py::arg("classes") = 10, py::arg("per_class") = 30,
        py::arg("size") = 28, py::arg("sigma") = 0.05,
        "Deterministic synthetic dataset of noisy geometric class templates.");
  m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"),
        py::arg("classes") = 10, "Load an IDX image/label pair.");

  py::class_<ModelWeights>(m, "Model")
      .def_property_readonly(
          "arch", [](const ModelWeights &w) { return arch_name(w.spec.arch); })
      .def_property_readonly("classes",
                             [](const ModelWeights &w) { return w.spec.classes; })
      .def_property_readonly("input_shape",
                             [](const ModelWeights &w) {
                               return py::make_tuple(w.spec.channels, w.spec.height,
                                                     w.spec.width);
                             })
      .def(
          "predict",
          [](const ModelWeights &w, const FloatArray &img) {
            return array_from_tensor(predict(w, tensor_from_array(img)));
          },
          py::arg("image"), "Logits for one [C,H,W] image.")
      .def(
          "predicted_class",
          [](const ModelWeights &w, const FloatArray &img) {
            return predicted_class(w, tensor_from_array(img));
          },
          py::arg("image"))
      .def("accuracy", &accuracy, py::arg("dataset"))
      .def(
          "save",
          [](const ModelWeights &w, const std::string &path) {
            save_weights(w, path);
          },
          py::arg("path"));

  m.def("load_model", &load_weights, py::arg("path"));

  m.def(
      "train",
      [](const std::string &arch, const Dataset &ds, int size, int channels,
         int epochs, double lr, uint64_t seed) {
        ModelSpec spec;
        spec.arch = arch_from_name(arch);
        spec.classes = ds.classes;
        spec.height = size;
        spec.width = size;
        spec.channels = channels;
        return train(spec, ds, epochs, lr, seed);
      },
      py::arg("arch"), py::arg("dataset"), py::arg("size") = 28,
      py::arg("channels") = 1, py::arg("epochs") = 20, py::arg("lr") = 0.1,
      py::arg("seed") = 0, "Train a classifier on the dataset.");

  m.def(
      "attack",
      [](const py::object &models, const FloatArray &image, int y_src, int y_tgt,
         const std::string &method, const std::string &precision, double eps,
         int iters, double alpha, int group, double gamma, double beta1,
         double beta2, double delta, double rho, int repeats,
         const std::string &loss, double dim_prob, double mi_mu, uint64_t seed) {
        AttackTask task;
        task.image = tensor_from_array(image);
        task.y_src = y_src;
        task.y_tgt = y_tgt;
        task.surrogates = model_ptrs(models);
        AttackConfig cfg =
            make_config(eps, iters, alpha, group, gamma, beta1, beta2, delta, rho,
                        repeats, loss, dim_prob, mi_mu, seed);
        AttackMethod am = method_from_name(method);
        AttackOutcome out;
        if (precision == "f64") out = run_attack<double>(task, cfg, am);
        else if (precision == "f32") out = run_attack<float>(task, cfg, am);
        else throw ValueError("precision must be 'f32' or 'f64'");
        py::dict d;
        d["x_adv"] = array_from_tensor(out.x_adv);
        d["step_losses"] = out.step_losses;
        d["step_rinf"] = out.step_rinf;
        d["steps"] = out.steps;
        return d;
      },
      py::arg("models"), py::arg("image"), py::arg("y_src"), py::arg("y_tgt"),
      py::arg("method") = "idaa", py::arg("precision") = "f32",
      py::arg("eps") = 0.07, py::arg("iters") = 10, py::arg("alpha") = 1.0,
      py::arg("group") = 10, py::arg("gamma") = 0.1, py::arg("beta1") = 0.99,
      py::arg("beta2") = 0.999, py::arg("delta") = 1e-8, py::arg("rho") = 0.7,
      py::arg("repeats") = 3, py::arg("loss") = "triplet",
      py::arg("dim_prob") = 0.7, py::arg("mi_mu") = 1.0, py::arg("seed") = 0,
      "Craft one targeted adversarial example and return the outcome.");

  m.def(
      "run_experiment",
      [](const py::object &surrogates, const py::object &targets,
         const Dataset &ds, const std::string &method, int samples, bool hold_out,
         uint64_t seed, int threads, const std::string &precision, double eps,
         int iters, double alpha, int group, double gamma, double beta1,
         double beta2, double delta, double rho, int repeats,
         const std::string &loss, double dim_prob, double mi_mu) {
        ExperimentConfig cfg;
        cfg.method = method_from_name(method);
        cfg.samples = samples;
        cfg.hold_out = hold_out;
        cfg.seed = seed;
        cfg.attack = make_config(eps, iters, alpha, group, gamma, beta1, beta2,
                                 delta, rho, repeats, loss, dim_prob, mi_mu, 0);
        std::vector<NamedModel> surr = named_models(surrogates);
        std::vector<NamedModel> tgts = named_models(targets);
        MetricsReport rep;
        if (precision == "f64")
          rep = run_experiment<double>(cfg, surr, tgts, ds, threads);
        else if (precision == "f32")
          rep = run_experiment<float>(cfg, surr, tgts, ds, threads);
        else throw ValueError("precision must be 'f32' or 'f64'");
        py::list rows;
        for (const auto &r : rep.rows) rows.append(row_to_dict(r));
        return py::make_tuple(rows, to_csv(rep));
      },
      py::arg("surrogates"), py::arg("targets"), py::arg("dataset"),
      py::arg("method") = "idaa", py::arg("samples") = 200,
      py::arg("hold_out") = false, py::arg("seed") = 0, py::arg("threads") = 1,
      py::arg("precision") = "f32", py::arg("eps") = 0.07, py::arg("iters") = 10,
      py::arg("alpha") = 1.0, py::arg("group") = 10, py::arg("gamma") = 0.1,
      py::arg("beta1") = 0.99, py::arg("beta2") = 0.999, py::arg("delta") = 1e-8,
      py::arg("rho") = 0.7, py::arg("repeats") = 3, py::arg("loss") = "triplet",
      py::arg("dim_prob") = 0.7, py::arg("mi_mu") = 1.0,
      "Run a surrogate/target grid; returns (rows, csv). surrogates and targets "
      "are sequences of (name, Model) pairs.");
}
