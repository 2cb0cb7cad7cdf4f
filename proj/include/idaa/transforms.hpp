#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "idaa/error.hpp"
#include "idaa/rng.hpp"
#include "idaa/tape.hpp"
#include "idaa/tensor.hpp"

namespace idaa {

enum class TransformKind {
  identity,
  hflip,
  resize_pad,
  rotate,
  translate,
  brightness,
  gauss_noise,
  pixel_dropout,
};

inline const char *kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::identity: return "identity";
    case TransformKind::hflip: return "hflip";
    case TransformKind::resize_pad: return "resize-pad";
    case TransformKind::rotate: return "rotate";
    case TransformKind::translate: return "translate";
    case TransformKind::brightness: return "brightness";
    case TransformKind::gauss_noise: return "gauss-noise";
    case TransformKind::pixel_dropout: return "pixel-dropout";
  }
  return "?";
}

inline TransformKind kind_from_name(const std::string &name) {
  static const std::pair<const char *, TransformKind> table[] = {
      {"identity", TransformKind::identity},
      {"hflip", TransformKind::hflip},
      {"resize-pad", TransformKind::resize_pad},
      {"rotate", TransformKind::rotate},
      {"translate", TransformKind::translate},
      {"brightness", TransformKind::brightness},
      {"gauss-noise", TransformKind::gauss_noise},
      {"pixel-dropout", TransformKind::pixel_dropout},
  };
  for (const auto &[n, k] : table)
    if (name == n) return k;
  throw ValueError("unknown transform kind '" + name + "'");
}

inline const std::vector<TransformKind> &canonical_transform_set() {
  static const std::vector<TransformKind> set = {
      TransformKind::identity,     TransformKind::hflip,
      TransformKind::resize_pad,   TransformKind::rotate,
      TransformKind::translate,    TransformKind::brightness,
      TransformKind::gauss_noise,  TransformKind::pixel_dropout,
  };
  return set;
}

// All randomness is frozen at sample time: scalar draws live here directly,
// per-pixel fields (noise, dropout mask) are regenerated from sub_seed so the
// spec stays independent of image shape. Applying a spec twice is identical.
struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  double scale = 1.0;       // resize-pad, in [0.75, 1]
  double u_off_y = 0.0;     // resize-pad placement draws in [0,1)
  double u_off_x = 0.0;
  double angle_deg = 0.0;   // rotate, in [-15, 15]
  int shift_y = 0;          // translate, in [-3, 3]
  int shift_x = 0;
  double factor = 1.0;      // brightness, in [0.8, 1.2]
  double sigma = 0.0;       // gauss-noise, in [0, 0.05]
  double rate = 0.0;        // pixel-dropout, in [0, 0.1]
  uint64_t sub_seed = 0;    // gauss-noise / pixel-dropout field
};

struct TransformPlan {
  std::vector<TransformSpec> specs;
};

inline TransformSpec sample_spec(TransformKind kind, Rng &rng) {
  TransformSpec s;
  s.kind = kind;
  switch (kind) {
    case TransformKind::identity:
    case TransformKind::hflip:
      break;
    case TransformKind::resize_pad:
      s.scale = rng.uniform(0.75, 1.0);
      s.u_off_y = rng.uniform();
      s.u_off_x = rng.uniform();
      break;
    case TransformKind::rotate:
      s.angle_deg = rng.uniform(-15.0, 15.0);
      break;
    case TransformKind::translate:
      s.shift_y = rng.uniform_int(-3, 3);
      s.shift_x = rng.uniform_int(-3, 3);
      break;
    case TransformKind::brightness:
      s.factor = rng.uniform(0.8, 1.2);
      break;
    case TransformKind::gauss_noise:
      s.sigma = rng.uniform(0.0, 0.05);
      s.sub_seed = rng.next_u64();
      break;
    case TransformKind::pixel_dropout:
      s.rate = rng.uniform(0.0, 0.1);
      s.sub_seed = rng.next_u64();
      break;
  }
  return s;
}

// Variant i gets kind set[i mod |set|]; parameter draws are sequential, so the
// plan is a pure function of the rng state.
inline TransformPlan sample_plan(Rng &rng, int group_size,
                                 const std::vector<TransformKind> &set) {
  if (group_size < 1) throw ValueError("sample_plan: group size must be >= 1");
  if (set.empty()) throw ValueError("sample_plan: transform set is empty");
  TransformPlan plan;
  plan.specs.reserve(size_t(group_size));
  for (int i = 0; i < group_size; ++i)
    plan.specs.push_back(sample_spec(set[size_t(i) % set.size()], rng));
  return plan;
}

// Warp grids. Coordinates are doubles regardless of tape precision so the
// geometry is identical across f32/f64 runs.
inline std::shared_ptr<WarpGrid> hflip_grid(int h, int w) {
  auto g = std::make_shared<WarpGrid>();
  g->out_h = h;
  g->out_w = w;
  g->src_y.resize(size_t(h) * w);
  g->src_x.resize(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g->src_y[size_t(y * w + x)] = y;
      g->src_x[size_t(y * w + x)] = w - 1 - x;
    }
  return g;
}

inline std::shared_ptr<WarpGrid> translate_grid(int h, int w, int dy, int dx) {
  auto g = std::make_shared<WarpGrid>();
  g->out_h = h;
  g->out_w = w;
  g->src_y.resize(size_t(h) * w);
  g->src_x.resize(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g->src_y[size_t(y * w + x)] = y - dy;
      g->src_x[size_t(y * w + x)] = x - dx;
    }
  return g;
}

inline std::shared_ptr<WarpGrid> rotate_grid(int h, int w, double angle_deg) {
  auto g = std::make_shared<WarpGrid>();
  g->out_h = h;
  g->out_w = w;
  g->src_y.resize(size_t(h) * w);
  g->src_x.resize(size_t(h) * w);
  double th = angle_deg * std::acos(-1.0) / 180.0;
  double c = std::cos(th), s = std::sin(th);
  double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double ry = y - cy, rx = x - cx;
      // inverse rotation: sample where the output pixel came from
      g->src_y[size_t(y * w + x)] = cy + c * ry - s * rx;
      g->src_x[size_t(y * w + x)] = cx + s * ry + c * rx;
    }
  return g;
}

inline int round_half_up(double v) { return int(std::floor(v + 0.5)); }

// Shrink to round(scale*side) by center-aligned bilinear resampling, then
// place the small image on a zero canvas at an offset chosen by the frozen
// placement draws. Single warp: pixels outside the placed patch sample far
// out of bounds and read 0.
inline std::shared_ptr<WarpGrid> resize_pad_grid(int h, int w, double scale,
                                                 double u_off_y, double u_off_x) {
  int nh = std::max(1, round_half_up(scale * h));
  int nw = std::max(1, round_half_up(scale * w));
  if (nh > h) nh = h;
  if (nw > w) nw = w;
  int off_y = std::min(h - nh, int(u_off_y * (h - nh + 1)));
  int off_x = std::min(w - nw, int(u_off_x * (w - nw + 1)));
  auto g = std::make_shared<WarpGrid>();
  g->out_h = h;
  g->out_w = w;
  g->src_y.assign(size_t(h) * w, -1e9);
  g->src_x.assign(size_t(h) * w, -1e9);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      g->src_y[size_t((y + off_y) * w + (x + off_x))] = (y + 0.5) * h / nh - 0.5;
      g->src_x[size_t((y + off_y) * w + (x + off_x))] = (x + 0.5) * w / nw - 0.5;
    }
  return g;
}

// clamp01(v) = relu(v - relu(v - 1)), exact identity on [0,1]
template <typename T>
int clamp01_on_tape(Tape<T> &tape, int v) {
  Tensor<T> neg_ones(tape.value(v).shape, T(-1));
  int over = tape.relu(tape.add(v, tape.leaf(std::move(neg_ones))));
  return tape.relu(tape.add(v, tape.scalar_mul(over, T(-1))));
}

template <typename T>
Tensor<T> noise_field(const Shape &shape, double sigma, uint64_t sub_seed) {
  Rng rng(sub_seed);
  Tensor<T> t(shape);
  for (auto &v : t.data) v = T(sigma * rng.normal());
  return t;
}

template <typename T>
Tensor<T> dropout_mask(const Shape &shape, double rate, uint64_t sub_seed) {
  Rng rng(sub_seed);
  Tensor<T> t(shape);
  for (auto &v : t.data) v = rng.uniform() < rate ? T(0) : T(1);
  return t;
}

// Apply one frozen transform on the tape; gradients flow to the input image
// only (geometry and noise are constants).
template <typename T>
int apply_on_tape(Tape<T> &tape, int img, const TransformSpec &spec) {
  const Shape sh = tape.value(img).shape;  // by value: recording may reallocate nodes
  if (sh.size() != 3)
    throw ShapeError("transform: need [C,H,W], got " + shape_str(sh));
  int h = sh[1], w = sh[2];
  switch (spec.kind) {
    case TransformKind::identity:
      return img;
    case TransformKind::hflip:
      return tape.bilinear_warp(img, hflip_grid(h, w));
    case TransformKind::resize_pad:
      return tape.bilinear_warp(
          img, resize_pad_grid(h, w, spec.scale, spec.u_off_y, spec.u_off_x));
    case TransformKind::rotate:
      return tape.bilinear_warp(img, rotate_grid(h, w, spec.angle_deg));
    case TransformKind::translate:
      return tape.bilinear_warp(img, translate_grid(h, w, spec.shift_y, spec.shift_x));
    case TransformKind::brightness:
      return clamp01_on_tape(tape, tape.scalar_mul(img, T(spec.factor)));
    case TransformKind::gauss_noise: {
      int noise = tape.leaf(noise_field<T>(sh, spec.sigma, spec.sub_seed));
      return clamp01_on_tape(tape, tape.add(img, noise));
    }
    case TransformKind::pixel_dropout: {
      int mask = tape.leaf(dropout_mask<T>(sh, spec.rate, spec.sub_seed));
      return tape.mul(img, mask);
    }
  }
  throw ValueError("transform: unknown kind");
}

// Tensor-level convenience wrapper over the tape path.
template <typename T>
Tensor<T> apply_transform(const Tensor<T> &img, const TransformSpec &spec) {
  Tape<T> tape;
  return tape.value(apply_on_tape(tape, tape.leaf(img), spec));
}

}  // namespace idaa
