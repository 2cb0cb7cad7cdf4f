#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "idaa/dataset.hpp"
#include "idaa/error.hpp"
#include "idaa/rng.hpp"
#include "idaa/tape.hpp"
#include "idaa/tensor.hpp"

namespace idaa {

enum class Arch { mlp2, cnn_small, cnn_wide };

inline const char *arch_name(Arch a) {
  switch (a) {
    case Arch::mlp2: return "mlp-2";
    case Arch::cnn_small: return "cnn-small";
    case Arch::cnn_wide: return "cnn-wide";
  }
  return "?";
}

inline Arch arch_from_name(const std::string &name) {
  if (name == "mlp-2") return Arch::mlp2;
  if (name == "cnn-small") return Arch::cnn_small;
  if (name == "cnn-wide") return Arch::cnn_wide;
  throw ValueError("unknown architecture '" + name + "'");
}

// Fixed layer widths: mlp-2 hidden 64, cnn-small 8 filters, cnn-wide 8 then 16.
struct ModelSpec {
  Arch arch = Arch::cnn_small;
  int channels = 1;
  int height = 28;
  int width = 28;
  int classes = 10;
};

inline void validate_spec(const ModelSpec &s) {
  if (s.classes < 2) throw ValueError("model spec: class count must be >= 2");
  if (s.channels < 1 || s.height < 1 || s.width < 1)
    throw ValueError("model spec: bad input shape");
  if (s.arch != Arch::mlp2 && (s.height % 2 != 0 || s.width % 2 != 0))
    throw ValueError("model spec: conv architectures need even H,W for pooling");
}

// Declaration order doubles as the initialization draw order.
inline std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelSpec &s) {
  validate_spec(s);
  int flat = s.channels * s.height * s.width;
  int ph = s.height / 2, pw = s.width / 2;
  switch (s.arch) {
    case Arch::mlp2:
      return {{"fc1.w", {64, flat}},
              {"fc1.b", {64}},
              {"fc2.w", {s.classes, 64}},
              {"fc2.b", {s.classes}}};
    case Arch::cnn_small:
      return {{"conv1.k", {8, s.channels, 3, 3}},
              {"conv1.b", {8}},
              {"fc1.w", {s.classes, 8 * ph * pw}},
              {"fc1.b", {s.classes}}};
    case Arch::cnn_wide:
      return {{"conv1.k", {8, s.channels, 3, 3}},
              {"conv1.b", {8}},
              {"conv2.k", {16, 8, 3, 3}},
              {"conv2.b", {16}},
              {"fc1.w", {s.classes, 16 * ph * pw}},
              {"fc1.b", {s.classes}}};
  }
  throw ValueError("model spec: unknown architecture");
}

struct ModelWeights {
  ModelSpec spec;
  std::map<std::string, Tensor<float>> tensors;
};

inline void validate_weights(const ModelWeights &w) {
  auto expect = expected_shapes(w.spec);
  if (w.tensors.size() != expect.size())
    throw ShapeError("weights: expected " + std::to_string(expect.size()) +
                     " tensors, got " + std::to_string(w.tensors.size()));
  for (const auto &[name, shape] : expect) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end()) throw ShapeError("weights: missing tensor " + name);
    if (it->second.shape != shape)
      throw ShapeError("weights: " + name + " has shape " +
                       shape_str(it->second.shape) + ", expected " + shape_str(shape));
  }
}

inline int fan_in(const Shape &shape) {
  if (shape.size() == 2) return shape[1];                        // dense w
  if (shape.size() == 4) return shape[1] * shape[2] * shape[3];  // conv k
  return 1;
}

// Uniform [-s, s] with s = 1/sqrt(fan_in of the owning layer), drawn in
// declaration order. Biases follow their weight tensor and reuse its fan-in.
inline ModelWeights init_weights(const ModelSpec &spec, uint64_t seed) {
  ModelWeights w;
  w.spec = spec;
  Rng rng(mix_seed(seed, 11));
  int last_fan = 1;
  for (const auto &[name, shape] : expected_shapes(spec)) {
    if (shape.size() >= 2) last_fan = fan_in(shape);
    double s = 1.0 / std::sqrt(double(last_fan));
    Tensor<float> t(shape);
    for (auto &v : t.data) v = float(rng.uniform(-s, s));
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

// Records the forward pass of the architecture on the tape. Weight leaves get
// requires_grad = weights_need_grad; during attacks it stays false so backward
// skips all weight-gradient work.
struct TapedModel {
  int logits = -1;
  std::map<std::string, int> weight_nodes;
};

template <typename T>
TapedModel predict_on_tape(Tape<T> &tape, const ModelWeights &w, int image,
                           bool weights_need_grad = false) {
  validate_weights(w);
  const Shape in_shape = tape.value(image).shape;
  Shape want{w.spec.channels, w.spec.height, w.spec.width};
  if (in_shape != want)
    throw ShapeError("predict: image shape " + shape_str(in_shape) +
                     ", spec wants " + shape_str(want));
  TapedModel m;
  auto leaf = [&](const std::string &name) {
    int id = tape.leaf(cast_tensor<T>(w.tensors.at(name)), weights_need_grad);
    m.weight_nodes[name] = id;
    return id;
  };
  switch (w.spec.arch) {
    case Arch::mlp2: {
      int h = tape.relu(tape.dense(tape.flatten(image), leaf("fc1.w"), leaf("fc1.b")));
      m.logits = tape.dense(h, leaf("fc2.w"), leaf("fc2.b"));
      break;
    }
    case Arch::cnn_small: {
      int c1 = tape.relu(tape.conv2d(image, leaf("conv1.k"), leaf("conv1.b")));
      int feat = tape.flatten(tape.mean_pool(c1));
      m.logits = tape.dense(feat, leaf("fc1.w"), leaf("fc1.b"));
      break;
    }
    case Arch::cnn_wide: {
      int c1 = tape.relu(tape.conv2d(image, leaf("conv1.k"), leaf("conv1.b")));
      int c2 = tape.relu(tape.conv2d(c1, leaf("conv2.k"), leaf("conv2.b")));
      int feat = tape.flatten(tape.mean_pool(c2));
      m.logits = tape.dense(feat, leaf("fc1.w"), leaf("fc1.b"));
      break;
    }
  }
  return m;
}

template <typename T>
Tensor<T> predict(const ModelWeights &w, const Tensor<T> &image) {
  Tape<T> tape;
  int img = tape.leaf(image);
  return tape.value(predict_on_tape(tape, w, img).logits);
}

inline int argmax(const std::vector<float> &v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[size_t(i)] > v[size_t(best)]) best = i;  // ties keep the lowest index
  return best;
}

template <typename T>
int predicted_class(const ModelWeights &w, const Tensor<T> &image) {
  Tensor<T> logits = predict(w, image);
  int best = 0;
  for (int i = 1; i < int(logits.data.size()); ++i)
    if (logits.data[size_t(i)] > logits.data[size_t(best)]) best = i;
  return best;
}

inline double accuracy(const ModelWeights &w, const Dataset &ds) {
  if (ds.images.empty()) return 0.0;
  int hits = 0;
  for (size_t i = 0; i < ds.images.size(); ++i)
    if (predicted_class(w, ds.images[i]) == ds.labels[i]) ++hits;
  return double(hits) / double(ds.images.size());
}

struct TrainStats {
  std::vector<double> epoch_losses;  // mean CE over the train set after each epoch
  double train_accuracy = 0.0;
  double eval_accuracy = -1.0;  // -1 when no eval set given
};

inline double mean_dataset_loss(const ModelWeights &w, const Dataset &ds) {
  double total = 0.0;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    Tape<double> tape;
    int img = tape.leaf(cast_tensor<double>(ds.images[i]));
    auto m = predict_on_tape(tape, w, img);
    total += tape.value(tape.softmax_cross_entropy(m.logits, ds.labels[i])).data[0];
  }
  return total / double(ds.images.size());
}

// Plain minibatch gradient descent, batch 32. Weights stay f32 (the storage
// type); per-batch gradients accumulate in f64. Deterministic for a fixed
// seed. Epoch losses are full-train-set means evaluated after the epoch.
inline ModelWeights train(const ModelSpec &spec, const Dataset &ds, int epochs,
                          double lr, uint64_t seed, TrainStats *stats = nullptr,
                          const Dataset *eval_set = nullptr) {
  validate_dataset(ds);
  if (ds.images.empty()) throw ValueError("train: dataset is empty");
  if (ds.classes != spec.classes)
    throw ValueError("train: dataset has " + std::to_string(ds.classes) +
                     " classes, spec wants " + std::to_string(spec.classes));
  if (epochs < 0) throw ValueError("train: epochs must be >= 0");

  ModelWeights w = init_weights(spec, seed);
  Rng shuffle_rng(mix_seed(seed, 13));
  const int batch = 32;
  std::vector<size_t> order(ds.images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = size_t(shuffle_rng.uniform_int(0, int(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t start = 0; start < order.size(); start += batch) {
      size_t stop = std::min(order.size(), start + batch);
      std::map<std::string, Tensor<double>> acc;
      for (const auto &[name, t] : w.tensors) acc.emplace(name, Tensor<double>(t.shape));
      for (size_t bi = start; bi < stop; ++bi) {
        size_t idx = order[bi];
        Tape<double> tape;
        int img = tape.leaf(cast_tensor<double>(ds.images[idx]));
        auto m = predict_on_tape(tape, w, img, true);
        int loss = tape.softmax_cross_entropy(m.logits, ds.labels[idx]);
        tape.backward(loss);
        for (const auto &[name, node] : m.weight_nodes) {
          const auto &g = tape.grad(node);
          auto &a = acc.at(name).data;
          for (size_t k = 0; k < a.size(); ++k) a[k] += g.data[k];
        }
      }
      double scale = lr / double(stop - start);
      for (auto &[name, t] : w.tensors) {
        const auto &a = acc.at(name).data;
        for (size_t k = 0; k < t.data.size(); ++k)
          t.data[k] = float(double(t.data[k]) - scale * a[k]);
      }
    }
    if (stats) stats->epoch_losses.push_back(mean_dataset_loss(w, ds));
  }

  if (stats) {
    stats->train_accuracy = accuracy(w, ds);
    if (eval_set) stats->eval_accuracy = accuracy(w, *eval_set);
  }
  return w;
}

}  // namespace idaa
