#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "idaa/error.hpp"
#include "idaa/rng.hpp"
#include "idaa/tensor.hpp"

namespace idaa {

// Images are stored f32; compute layers widen as needed.
struct Dataset {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  int classes = 0;
  std::string provenance;
};

inline void validate_dataset(const Dataset &ds) {
  if (ds.images.size() != ds.labels.size())
    throw ValueError("dataset: " + std::to_string(ds.images.size()) + " images vs " +
                     std::to_string(ds.labels.size()) + " labels");
  if (ds.classes < 2) throw ValueError("dataset: class count must be >= 2");
  for (int l : ds.labels)
    if (l < 0 || l >= ds.classes)
      throw ValueError("dataset: label " + std::to_string(l) + " outside " +
                       std::to_string(ds.classes) + " classes");
}

namespace detail {

inline uint32_t read_be32(std::istream &in, const std::string &what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4))
    throw FormatError(what + ": truncated header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
         uint32_t(b[3]);
}

inline uint32_t read_le32(std::istream &in, const std::string &what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4))
    throw FormatError(what + ": truncated header");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

inline void write_le32(std::ostream &out, uint32_t v) {
  unsigned char b[4] = {
      (unsigned char)(v & 0xff),
      (unsigned char)((v >> 8) & 0xff),
      (unsigned char)((v >> 16) & 0xff),
      (unsigned char)((v >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char *>(b), 4);
}

inline void write_le_f32(std::ostream &out, float f) {
  write_le32(out, std::bit_cast<uint32_t>(f));
}

inline void write_be32(std::ostream &out, uint32_t v) {
  unsigned char b[4] = {
      (unsigned char)((v >> 24) & 0xff),
      (unsigned char)((v >> 16) & 0xff),
      (unsigned char)((v >> 8) & 0xff),
      (unsigned char)(v & 0xff),
  };
  out.write(reinterpret_cast<const char *>(b), 4);
}

inline float read_le_f32(std::istream &in, const std::string &what) {
  return std::bit_cast<float>(read_le32(in, what));
}

}  // namespace detail

// IDX pair (big-endian headers, u8 pixels scaled by /255).
inline Dataset load_idx(const std::string &images_path, const std::string &labels_path,
                        int classes = 10) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw FormatError(images_path + ": cannot open");
  if (detail::read_be32(fi, images_path) != 0x00000803u)
    throw FormatError(images_path + ": bad magic, expected IDX u8 images");
  uint32_t n = detail::read_be32(fi, images_path);
  uint32_t rows = detail::read_be32(fi, images_path);
  uint32_t cols = detail::read_be32(fi, images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw FormatError(labels_path + ": cannot open");
  if (detail::read_be32(fl, labels_path) != 0x00000801u)
    throw FormatError(labels_path + ": bad magic, expected IDX u8 labels");
  uint32_t nl = detail::read_be32(fl, labels_path);
  if (n != nl)
    throw FormatError("idx pair: " + std::to_string(n) + " images vs " +
                      std::to_string(nl) + " labels");

  Dataset ds;
  ds.classes = classes;
  ds.provenance = "idx-file";
  std::vector<unsigned char> buf(size_t(rows) * cols);
  for (uint32_t i = 0; i < n; ++i) {
    if (!fi.read(reinterpret_cast<char *>(buf.data()), std::streamsize(buf.size())))
      throw FormatError(images_path + ": truncated at image " + std::to_string(i));
    Tensor<float> img(Shape{1, int(rows), int(cols)});
    for (size_t p = 0; p < buf.size(); ++p) img.data[p] = float(buf[p]) / 255.0f;
    ds.images.push_back(std::move(img));
    char lb;
    if (!fl.get(lb))
      throw FormatError(labels_path + ": truncated at label " + std::to_string(i));
    ds.labels.push_back(int((unsigned char)lb));
  }
  validate_dataset(ds);
  return ds;
}

// Class shapes are analytic predicates over centered coordinates, so one
// shape can be rendered at any sub-pixel registration. Every shape is mirror
// symmetric about the vertical axis: horizontally flipping a rendered frame
// yields another valid frame of the same class. Background and foreground sit
// close together so a small pixel budget can move probability mass between
// classes.
inline Tensor<float> render_template(int cls, int size, double center_y,
                                     double center_x, double scale) {
  if (cls < 0 || cls > 9) throw ValueError("render_template: class outside 0..9");
  if (!(scale > 0.0)) throw ValueError("render_template: scale must be positive");
  const float bg = 0.44f, fg = 0.56f;
  Tensor<float> img(Shape{1, size, size}, bg);
  int thick = std::max(1, size / 7);
  // reach keeps strokes nonempty at sizes where pixel centers sit half a
  // pixel off the continuous center
  double reach = std::max(thick / 2.0, 0.75);
  double q = size / 4.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double dy = (y - center_y) / scale, dx = (x - center_x) / scale;
      double ay = std::fabs(dy), ax = std::fabs(dx);
      double rad = std::sqrt(dy * dy + dx * dx);
      double cheb = std::max(ay, ax);
      bool on = false;
      switch (cls) {
        case 0: on = ay < reach; break;                      // horizontal bar
        case 1: on = ax < reach; break;                      // vertical bar
        case 2: on = std::fabs(ay - q) < reach; break;       // double horizontal
        case 3: on = std::fabs(ax - q) < reach; break;       // double vertical
        case 4: on = ay < reach || ax < reach; break;        // cross
        case 5: on = std::fabs(ay - ax) < reach; break;      // X
        case 6: on = rad < size / 4.0; break;                // disc
        case 7: on = std::fabs(rad - size / 3.0) < reach; break;  // ring
        case 8: {                                            // frame
          double m = 0.3 * size;
          on = cheb < m && cheb >= m - thick;
          break;
        }
        case 9: on = cheb < size / 4.0; break;               // block
      }
      if (on) img.data[size_t(y * size + x)] = fg;
    }
  }
  return img;
}

inline Tensor<float> class_template(int cls, int size) {
  double c = (size - 1) / 2.0;
  return render_template(cls, size, c, c, 1.0);
}

// Acquisition geometry for one dataset draw. frame_* pick a fixed
// registration bias for the whole draw (an offset in pixels and a scale from
// [1 - frame_scale_spread, 1]); sample_* jitter each image around that bias;
// fixed_pattern_sigma adds a static per-class pixel overlay, the synthetic
// analogue of sensor fixed-pattern noise. neutral_frame pins the draw to the
// centered mid-scale registration instead of drawing one, for evaluation
// pools that should not prefer any draw's bias. All-zero fields reduce the
// generator to plain template-plus-noise.
struct Acquisition {
  double frame_offset = 0.0;
  double frame_scale_spread = 0.0;
  double sample_offset = 0.0;
  double sample_scale = 0.0;
  double fixed_pattern_sigma = 0.0;
  bool neutral_frame = false;
};

inline void validate_acquisition(const Acquisition &a) {
  if (a.frame_offset < 0 || a.sample_offset < 0)
    throw ValueError("acquisition: offsets must be >= 0");
  if (a.frame_scale_spread < 0 || a.frame_scale_spread >= 1)
    throw ValueError("acquisition: frame_scale_spread must be in [0,1)");
  if (a.sample_scale < 0 || a.sample_scale >= 1)
    throw ValueError("acquisition: sample_scale must be in [0,1)");
  if (a.fixed_pattern_sigma < 0)
    throw ValueError("acquisition: fixed_pattern_sigma must be >= 0");
}

// Deterministic synthetic dataset: per-class analytic template rendered at
// the draw's registration, plus the per-class overlay and per-sample Gaussian
// noise, clamped to [0,1]. The rng stream layout is invariant across
// parameter choices (draws are always consumed, scaled by the knobs), so the
// same seed yields pixel noise in common across acquisition settings. Order:
// frame offset/scale, then per class the overlay, then per sample the jitter
// and pixel noise.
inline Dataset synth_dataset(uint64_t seed, int classes, int per_class, int size,
                             double sigma, const Acquisition &acq) {
  if (classes < 2) throw ValueError("synth_dataset: class count must be >= 2");
  if (classes > 10) throw ValueError("synth_dataset: at most 10 distinct classes");
  if (per_class < 1) throw ValueError("synth_dataset: per-class count must be >= 1");
  if (sigma < 0) throw ValueError("synth_dataset: sigma must be >= 0");
  validate_acquisition(acq);
  Dataset ds;
  ds.classes = classes;
  ds.provenance = "synthetic-seed:" + std::to_string(seed);
  Rng rng(mix_seed(seed, 7));
  double ctr = (size - 1) / 2.0;
  double u1 = rng.uniform() * 2 - 1, u2 = rng.uniform() * 2 - 1, u3 = rng.uniform();
  double frame_dy = acq.neutral_frame ? 0.0 : u1 * acq.frame_offset;
  double frame_dx = acq.neutral_frame ? 0.0 : u2 * acq.frame_offset;
  double frame_s = acq.neutral_frame ? 1.0 - acq.frame_scale_spread / 2.0
                                     : 1.0 - u3 * acq.frame_scale_spread;
  for (int c = 0; c < classes; ++c) {
    std::vector<float> overlay(size_t(size) * size_t(size));
    for (auto &v : overlay) v = float(acq.fixed_pattern_sigma * rng.normal());
    for (int i = 0; i < per_class; ++i) {
      double jy = (rng.uniform() * 2 - 1) * acq.sample_offset;
      double jx = (rng.uniform() * 2 - 1) * acq.sample_offset;
      double js = 1.0 + (rng.uniform() * 2 - 1) * acq.sample_scale;
      Tensor<float> img = render_template(c, size, ctr + frame_dy + jy,
                                          ctr + frame_dx + jx, frame_s * js);
      for (size_t p = 0; p < img.data.size(); ++p) {
        double noisy = double(img.data[p]) + double(overlay[p]) + sigma * rng.normal();
        img.data[p] = float(std::clamp(noisy, 0.0, 1.0));
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

inline Dataset synth_dataset(uint64_t seed, int classes, int per_class, int size,
                             double sigma = 0.05) {
  return synth_dataset(seed, classes, per_class, size, sigma, Acquisition{});
}

// IDX pair writer, the inverse of load_idx up to u8 quantization
// (round(v*255)). Only single-channel square images fit the IDX layout.
inline void dump_idx(const Dataset &ds, const std::string &images_path,
                     const std::string &labels_path) {
  validate_dataset(ds);
  if (ds.images.empty()) throw ValueError("idx dump: dataset is empty");
  const Shape &sh = ds.images[0].shape;
  if (sh.size() != 3 || sh[0] != 1)
    throw ShapeError("idx dump: need [1,H,W] images, got " + shape_str(sh));
  for (const auto &img : ds.images)
    if (img.shape != sh)
      throw ShapeError("idx dump: mixed image shapes");

  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw FormatError(images_path + ": cannot open for writing");
  detail::write_be32(imgs, 0x00000803u);
  detail::write_be32(imgs, uint32_t(ds.images.size()));
  detail::write_be32(imgs, uint32_t(sh[1]));
  detail::write_be32(imgs, uint32_t(sh[2]));
  for (const auto &img : ds.images)
    for (float v : img.data) {
      int q = int(std::lround(double(v) * 255.0));
      q = std::clamp(q, 0, 255);
      imgs.put(char(static_cast<unsigned char>(q)));
    }
  if (!imgs) throw FormatError(images_path + ": write failed");

  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw FormatError(labels_path + ": cannot open for writing");
  detail::write_be32(labs, 0x00000801u);
  detail::write_be32(labs, uint32_t(ds.labels.size()));
  for (int l : ds.labels) labs.put(char(static_cast<unsigned char>(l)));
  if (!labs) throw FormatError(labels_path + ": write failed");
}

// Raw adversarial image dump: magic "ADVI", u32 LE C,H,W, then f32 LE pixels.
inline void dump_advi(const std::string &path, const Tensor<float> &img) {
  if (img.shape.size() != 3)
    throw ShapeError("advi dump: need [C,H,W], got " + shape_str(img.shape));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("ADVI", 4);
  detail::write_le32(out, uint32_t(img.shape[0]));
  detail::write_le32(out, uint32_t(img.shape[1]));
  detail::write_le32(out, uint32_t(img.shape[2]));
  for (float v : img.data) detail::write_le_f32(out, v);
  if (!out) throw FormatError(path + ": write failed");
}

inline Tensor<float> load_advi(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "ADVI")
    throw FormatError(path + ": bad magic, expected ADVI");
  int c = int(detail::read_le32(in, path));
  int h = int(detail::read_le32(in, path));
  int w = int(detail::read_le32(in, path));
  Tensor<float> img(Shape{c, h, w});
  for (auto &v : img.data) v = detail::read_le_f32(in, path);
  return img;
}

}  // namespace idaa
