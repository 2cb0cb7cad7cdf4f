#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "idaa/error.hpp"

namespace idaa {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape &s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape &s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. The scalar type selects the precision mode:
// Tensor<double> for verification runs, Tensor<float> for production attacks.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(size_t(shape_numel(shape)), fill) {}

  static Tensor from(Shape s, std::vector<T> d) {
    if (shape_numel(s) != int64_t(d.size()))
      throw ShapeError("tensor: " + shape_str(s) + " incompatible with " +
                       std::to_string(d.size()) + " values");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  int64_t size() const { return int64_t(data.size()); }
  bool is_scalar() const { return data.size() == 1; }

  T &operator[](int64_t i) { return data[size_t(i)]; }
  const T &operator[](int64_t i) const { return data[size_t(i)]; }
};

template <typename T>
bool same_shape(const Tensor<T> &a, const Tensor<T> &b) {
  return a.shape == b.shape;
}

// Exact element-wise widening/narrowing between precision modes.
template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From> &t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.reserve(t.data.size());
  for (From v : t.data) out.data.push_back(To(v));
  return out;
}

}  // namespace idaa
