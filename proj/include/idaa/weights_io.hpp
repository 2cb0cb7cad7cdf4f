#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "idaa/dataset.hpp"  // little-endian stream helpers
#include "idaa/error.hpp"
#include "idaa/nn.hpp"
#include "json.hpp"

namespace idaa {

// ADVW container: magic "ADVW", u32 LE version=1, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 ndim, ndim u32 dims, payload.
// The first tensor is "__spec__": ndim=1, dims[0] = JSON byte count, payload
// is the raw UTF-8 JSON of the model spec. All other payloads are f32 LE
// row-major with dims[0]*...*dims[n-1] elements.
inline constexpr uint32_t kAdvwVersion = 1;

inline std::string spec_to_json(const ModelSpec &s) {
  nlohmann::json j;
  j["arch"] = arch_name(s.arch);
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["classes"] = s.classes;
  return j.dump();
}

inline ModelSpec spec_from_json(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("weights: spec header is not valid JSON: ") +
                      e.what());
  }
  ModelSpec s;
  try {
    s.arch = arch_from_name(j.at("arch").get<std::string>());
    s.channels = j.at("channels").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.classes = j.at("classes").get<int>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("weights: spec header missing field: ") + e.what());
  }
  validate_spec(s);
  return s;
}

inline void save_weights(const ModelWeights &w, const std::string &path) {
  validate_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("ADVW", 4);
  detail::write_le32(out, kAdvwVersion);
  detail::write_le32(out, uint32_t(w.tensors.size() + 1));

  std::string spec_json = spec_to_json(w.spec);
  std::string spec_name = "__spec__";
  detail::write_le32(out, uint32_t(spec_name.size()));
  out.write(spec_name.data(), std::streamsize(spec_name.size()));
  detail::write_le32(out, 1);
  detail::write_le32(out, uint32_t(spec_json.size()));
  out.write(spec_json.data(), std::streamsize(spec_json.size()));

  for (const auto &[name, t] : w.tensors) {
    detail::write_le32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    detail::write_le32(out, uint32_t(t.shape.size()));
    for (int d : t.shape) detail::write_le32(out, uint32_t(d));
    for (float v : t.data) detail::write_le_f32(out, v);
  }
  if (!out) throw FormatError(path + ": write failed");
}

inline ModelWeights load_weights(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "ADVW")
    throw FormatError(path + ": bad magic, expected ADVW");
  uint32_t version = detail::read_le32(in, path);
  if (version != kAdvwVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  uint32_t count = detail::read_le32(in, path);
  if (count < 1) throw FormatError(path + ": no tensors");

  ModelWeights w;
  bool have_spec = false;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::read_le32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), std::streamsize(name_len)))
      throw FormatError(path + ": truncated tensor name");
    uint32_t ndim = detail::read_le32(in, path);
    std::vector<uint32_t> dims(ndim);
    for (auto &d : dims) d = detail::read_le32(in, path);

    if (name == "__spec__") {
      if (i != 0) throw FormatError(path + ": __spec__ must be the first tensor");
      if (ndim != 1) throw FormatError(path + ": __spec__ must be one-dimensional");
      std::string text(dims[0], '\0');
      if (!in.read(text.data(), std::streamsize(dims[0])))
        throw FormatError(path + ": truncated spec header");
      w.spec = spec_from_json(text);
      have_spec = true;
      continue;
    }
    if (!have_spec) throw FormatError(path + ": first tensor must be __spec__");

    Shape shape;
    size_t numel = 1;
    for (uint32_t d : dims) {
      shape.push_back(int(d));
      numel *= d;
    }
    Tensor<float> t(shape);
    for (size_t k = 0; k < numel; ++k) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char *>(b), 4))
        throw FormatError(path + ": truncated data in tensor " + name);
      uint32_t u = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                   (uint32_t(b[3]) << 24);
      t.data[k] = std::bit_cast<float>(u);
    }
    if (!w.tensors.emplace(name, std::move(t)).second)
      throw FormatError(path + ": duplicate tensor " + name);
  }
  validate_weights(w);
  return w;
}

}  // namespace idaa
