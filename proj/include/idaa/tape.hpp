#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "idaa/error.hpp"
#include "idaa/tensor.hpp"

namespace idaa {

// Per-output-pixel source coordinates for bilinear sampling, shared across
// channels. Out-of-bounds source reads are zero. Coordinates are frozen
// transform parameters; gradients flow to sampled pixel values only.
struct WarpGrid {
  int out_h = 0;
  int out_w = 0;
  std::vector<double> src_y;  // out_h*out_w
  std::vector<double> src_x;
};

enum class Op {
  leaf,
  add,
  scalar_mul,
  mul,
  relu,
  tanh_fn,
  dense,
  conv2d,
  mean_pool,
  flatten,
  bilinear_warp,
  softmax_xent,
};

inline const char *op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::scalar_mul: return "scalar-mul";
    case Op::mul: return "elementwise-mul";
    case Op::relu: return "relu";
    case Op::tanh_fn: return "tanh";
    case Op::dense: return "dense";
    case Op::conv2d: return "conv2d";
    case Op::mean_pool: return "mean-pool";
    case Op::flatten: return "flatten";
    case Op::bilinear_warp: return "bilinear-warp";
    case Op::softmax_xent: return "softmax-cross-entropy";
  }
  return "?";
}

Op op_from_name(const std::string &name);

// Operation tape. Nodes are recorded in topological order by construction;
// one backward pass walks them once in reverse. Single-owner during
// recording; disjoint tapes may run concurrently.
template <typename T>
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    std::array<int, 3> in{-1, -1, -1};
    Tensor<T> value;
    bool needs_grad = false;
    T scalar = T(0);                       // scalar_mul
    int target = -1;                       // softmax_xent
    std::shared_ptr<const WarpGrid> grid;  // bilinear_warp
  };

  int leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    return push(std::move(n));
  }

  int add(int a, int b) {
    check_same("add", a, b);
    Node n = binary(Op::add, a, b, Tensor<T>(node(a).value.shape));
    const auto &x = node(a).value.data;
    const auto &y = node(b).value.data;
    for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] + y[i];
    return push(std::move(n));
  }

  int scalar_mul(int a, T s) {
    Node n = unary(Op::scalar_mul, a, Tensor<T>(node(a).value.shape));
    n.scalar = s;
    const auto &x = node(a).value.data;
    for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = s * x[i];
    return push(std::move(n));
  }

  int mul(int a, int b) {
    check_same("elementwise-mul", a, b);
    Node n = binary(Op::mul, a, b, Tensor<T>(node(a).value.shape));
    const auto &x = node(a).value.data;
    const auto &y = node(b).value.data;
    for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] * y[i];
    return push(std::move(n));
  }

  int relu(int a) {
    Node n = unary(Op::relu, a, Tensor<T>(node(a).value.shape));
    const auto &x = node(a).value.data;
    for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] > T(0) ? x[i] : T(0);
    return push(std::move(n));
  }

  int tanh_fn(int a) {
    Node n = unary(Op::tanh_fn, a, Tensor<T>(node(a).value.shape));
    const auto &x = node(a).value.data;
    for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = std::tanh(x[i]);
    return push(std::move(n));
  }

  // y = W x + b with x:[K], W:[M,K], b:[M]
  int dense(int x, int w, int b) {
    const auto &xv = node(x).value;
    const auto &wv = node(w).value;
    const auto &bv = node(b).value;
    if (xv.shape.size() != 1 || wv.shape.size() != 2 || bv.shape.size() != 1 ||
        wv.shape[1] != xv.shape[0] || wv.shape[0] != bv.shape[0])
      throw ShapeError(std::string("dense: x") + shape_str(xv.shape) + " W" +
                       shape_str(wv.shape) + " b" + shape_str(bv.shape));
    int m = wv.shape[0], k = wv.shape[1];
    Node n;
    n.op = Op::dense;
    n.in = {x, w, b};
    n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
    n.value = Tensor<T>({m});
    for (int i = 0; i < m; ++i) {
      T acc = bv.data[size_t(i)];
      const T *row = wv.data.data() + size_t(i) * k;
      for (int j = 0; j < k; ++j) acc += row[j] * xv.data[size_t(j)];
      n.value.data[size_t(i)] = acc;
    }
    return push(std::move(n));
  }

  // 3x3 kernel, stride 1, zero padding 1; x:[C,H,W], k:[F,C,3,3], b:[F]
  int conv2d(int x, int k, int b) {
    const auto &xv = node(x).value;
    const auto &kv = node(k).value;
    const auto &bv = node(b).value;
    if (xv.shape.size() != 3 || kv.shape.size() != 4 || bv.shape.size() != 1 ||
        kv.shape[1] != xv.shape[0] || kv.shape[2] != 3 || kv.shape[3] != 3 ||
        kv.shape[0] != bv.shape[0])
      throw ShapeError(std::string("conv2d: x") + shape_str(xv.shape) + " k" +
                       shape_str(kv.shape) + " b" + shape_str(bv.shape));
    int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2], f = kv.shape[0];
    Node n;
    n.op = Op::conv2d;
    n.in = {x, k, b};
    n.needs_grad = node(x).needs_grad || node(k).needs_grad || node(b).needs_grad;
    n.value = Tensor<T>({f, h, w});
    for (int of = 0; of < f; ++of) {
      for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
          T acc = bv.data[size_t(of)];
          for (int ic = 0; ic < c; ++ic) {
            for (int ky = 0; ky < 3; ++ky) {
              int iy = oy + ky - 1;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int ix = ox + kx - 1;
                if (ix < 0 || ix >= w) continue;
                acc += kv.data[size_t(((of * c + ic) * 3 + ky) * 3 + kx)] *
                       xv.data[size_t((ic * h + iy) * w + ix)];
              }
            }
          }
          n.value.data[size_t((of * h + oy) * w + ox)] = acc;
        }
      }
    }
    return push(std::move(n));
  }

  // 2x2 window, stride 2; requires even spatial dims
  int mean_pool(int a) {
    const auto &xv = node(a).value;
    if (xv.shape.size() != 3 || xv.shape[1] % 2 != 0 || xv.shape[2] % 2 != 0)
      throw ShapeError("mean-pool: need [C,H,W] with even H,W, got " +
                       shape_str(xv.shape));
    int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    Node n = unary(Op::mean_pool, a, Tensor<T>({c, h / 2, w / 2}));
    for (int ic = 0; ic < c; ++ic)
      for (int oy = 0; oy < h / 2; ++oy)
        for (int ox = 0; ox < w / 2; ++ox) {
          T acc = xv.data[size_t((ic * h + 2 * oy) * w + 2 * ox)] +
                  xv.data[size_t((ic * h + 2 * oy) * w + 2 * ox + 1)] +
                  xv.data[size_t((ic * h + 2 * oy + 1) * w + 2 * ox)] +
                  xv.data[size_t((ic * h + 2 * oy + 1) * w + 2 * ox + 1)];
          n.value.data[size_t((ic * (h / 2) + oy) * (w / 2) + ox)] = acc / T(4);
        }
    return push(std::move(n));
  }

  int flatten(int a) {
    const auto &xv = node(a).value;
    Node n = unary(Op::flatten, a, Tensor<T>({int(xv.size())}));
    n.value.data = xv.data;
    return push(std::move(n));
  }

  int bilinear_warp(int a, std::shared_ptr<const WarpGrid> grid) {
    const auto &xv = node(a).value;
    if (xv.shape.size() != 3)
      throw ShapeError("bilinear-warp: need [C,H,W], got " + shape_str(xv.shape));
    if (int64_t(grid->src_y.size()) != int64_t(grid->out_h) * grid->out_w ||
        grid->src_x.size() != grid->src_y.size())
      throw ShapeError("bilinear-warp: grid size mismatch");
    int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    Node n = unary(Op::bilinear_warp, a, Tensor<T>({c, grid->out_h, grid->out_w}));
    n.grid = grid;
    for (int64_t p = 0; p < int64_t(grid->out_h) * grid->out_w; ++p) {
      T fy = T(grid->src_y[size_t(p)]);
      T fx = T(grid->src_x[size_t(p)]);
      int y0 = int(std::floor(fy)), x0 = int(std::floor(fx));
      T wy = fy - T(y0), wx = fx - T(x0);
      for (int ic = 0; ic < c; ++ic) {
        T acc = T(0);
        for (int dy = 0; dy < 2; ++dy) {
          int sy = y0 + dy;
          if (sy < 0 || sy >= h) continue;
          T ry = dy ? wy : T(1) - wy;
          for (int dx = 0; dx < 2; ++dx) {
            int sx = x0 + dx;
            if (sx < 0 || sx >= w) continue;
            T rx = dx ? wx : T(1) - wx;
            acc += ry * rx * xv.data[size_t((ic * h + sy) * w + sx)];
          }
        }
        n.value.data[size_t(ic) * grid->src_y.size() + size_t(p)] = acc;
      }
    }
    return push(std::move(n));
  }

  // scalar loss; backward gives softmax(logits) - onehot(target)
  int softmax_cross_entropy(int logits, int target) {
    const auto &lv = node(logits).value;
    if (lv.shape.size() != 1 || lv.shape[0] < 2)
      throw ShapeError("softmax-cross-entropy: need logits [n>=2], got " +
                       shape_str(lv.shape));
    if (target < 0 || target >= lv.shape[0])
      throw ValueError("softmax-cross-entropy: target " + std::to_string(target) +
                       " out of range for " + shape_str(lv.shape));
    Node n = unary(Op::softmax_xent, logits, Tensor<T>({1}));
    n.target = target;
    T mx = lv.data[0];
    for (T v : lv.data)
      if (v > mx) mx = v;
    T sum = T(0);
    for (T v : lv.data) sum += std::exp(v - mx);
    n.value.data[0] = std::log(sum) + mx - lv.data[size_t(target)];
    return push(std::move(n));
  }

  int size() const { return int(nodes_.size()); }

  const Tensor<T> &value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).needs_grad; }

  // Reverse pass from a scalar node. Each recorded node is visited at most
  // once, in reverse order; gradients accumulate only along paths that need
  // them. Gradients from any previous backward call are discarded.
  void backward(int loss) {
    if (loss < 0 || loss >= size()) throw ValueError("backward: node not on tape");
    if (!node(loss).value.is_scalar())
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(node(loss).value.shape));
    grads_.assign(nodes_.size(), Tensor<T>{});
    touched_.assign(nodes_.size(), 0);
    touch(loss).data[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      if (!touched_[size_t(id)] || !node(id).needs_grad) continue;
      step_backward(id);
    }
  }

  // dLoss/dNode for the most recent backward(); zeros if the node was not
  // reached.
  const Tensor<T> &grad(int id) {
    if (id < 0 || id >= size()) throw ValueError("grad: node not on tape");
    if (grads_.size() != nodes_.size()) grads_.assign(nodes_.size(), Tensor<T>{});
    auto &g = grads_[size_t(id)];
    if (g.data.empty()) g = Tensor<T>(node(id).value.shape);
    return g;
  }

 private:
  const Node &node(int id) const {
    if (id < 0 || id >= size()) throw ValueError("tape: node id out of range");
    return nodes_[size_t(id)];
  }

  Node unary(Op op, int a, Tensor<T> value) {
    Node n;
    n.op = op;
    n.in = {a, -1, -1};
    n.needs_grad = node(a).needs_grad;
    n.value = std::move(value);
    return n;
  }

  Node binary(Op op, int a, int b, Tensor<T> value) {
    Node n;
    n.op = op;
    n.in = {a, b, -1};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = std::move(value);
    return n;
  }

  void check_same(const char *op, int a, int b) {
    if (!same_shape(node(a).value, node(b).value))
      throw ShapeError(std::string(op) + ": shape mismatch " +
                       shape_str(node(a).value.shape) + " vs " +
                       shape_str(node(b).value.shape));
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  Tensor<T> &touch(int id) {
    touched_[size_t(id)] = 1;
    auto &g = grads_[size_t(id)];
    if (g.data.empty()) g = Tensor<T>(nodes_[size_t(id)].value.shape);
    return g;
  }

  bool wants(int id) const { return id >= 0 && nodes_[size_t(id)].needs_grad; }

  void step_backward(int id) {
    const Node &n = nodes_[size_t(id)];
    const Tensor<T> &gy = grads_[size_t(id)];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add: {
        for (int side = 0; side < 2; ++side) {
          int in = n.in[size_t(side)];
          if (!wants(in)) continue;
          auto &gi = touch(in);
          for (size_t i = 0; i < gy.data.size(); ++i) gi.data[i] += gy.data[i];
        }
        break;
      }
      case Op::scalar_mul: {
        if (!wants(n.in[0])) break;
        auto &gi = touch(n.in[0]);
        for (size_t i = 0; i < gy.data.size(); ++i) gi.data[i] += n.scalar * gy.data[i];
        break;
      }
      case Op::mul: {
        const auto &a = nodes_[size_t(n.in[0])].value.data;
        const auto &b = nodes_[size_t(n.in[1])].value.data;
        if (wants(n.in[0])) {
          auto &gi = touch(n.in[0]);
          for (size_t i = 0; i < gy.data.size(); ++i) gi.data[i] += gy.data[i] * b[i];
        }
        if (wants(n.in[1])) {
          auto &gi = touch(n.in[1]);
          for (size_t i = 0; i < gy.data.size(); ++i) gi.data[i] += gy.data[i] * a[i];
        }
        break;
      }
      case Op::relu: {
        if (!wants(n.in[0])) break;
        const auto &x = nodes_[size_t(n.in[0])].value.data;
        auto &gi = touch(n.in[0]);
        // subgradient at exactly 0 is 0
        for (size_t i = 0; i < gy.data.size(); ++i)
          if (x[i] > T(0)) gi.data[i] += gy.data[i];
        break;
      }
      case Op::tanh_fn: {
        if (!wants(n.in[0])) break;
        auto &gi = touch(n.in[0]);
        for (size_t i = 0; i < gy.data.size(); ++i)
          gi.data[i] += gy.data[i] * (T(1) - n.value.data[i] * n.value.data[i]);
        break;
      }
      case Op::dense: {
        const auto &xv = nodes_[size_t(n.in[0])].value;
        const auto &wv = nodes_[size_t(n.in[1])].value;
        int m = wv.shape[0], k = wv.shape[1];
        if (wants(n.in[0])) {
          auto &gx = touch(n.in[0]);
          for (int i = 0; i < m; ++i) {
            const T *row = wv.data.data() + size_t(i) * k;
            T g = gy.data[size_t(i)];
            for (int j = 0; j < k; ++j) gx.data[size_t(j)] += g * row[j];
          }
        }
        if (wants(n.in[1])) {
          auto &gw = touch(n.in[1]);
          for (int i = 0; i < m; ++i) {
            T g = gy.data[size_t(i)];
            T *row = gw.data.data() + size_t(i) * k;
            for (int j = 0; j < k; ++j) row[j] += g * xv.data[size_t(j)];
          }
        }
        if (wants(n.in[2])) {
          auto &gb = touch(n.in[2]);
          for (int i = 0; i < m; ++i) gb.data[size_t(i)] += gy.data[size_t(i)];
        }
        break;
      }
      case Op::conv2d: {
        const auto &xv = nodes_[size_t(n.in[0])].value;
        const auto &kv = nodes_[size_t(n.in[1])].value;
        int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2], f = kv.shape[0];
        Tensor<T> *gx = wants(n.in[0]) ? &touch(n.in[0]) : nullptr;
        Tensor<T> *gk = wants(n.in[1]) ? &touch(n.in[1]) : nullptr;
        Tensor<T> *gb = wants(n.in[2]) ? &touch(n.in[2]) : nullptr;
        for (int of = 0; of < f; ++of) {
          for (int oy = 0; oy < h; ++oy) {
            for (int ox = 0; ox < w; ++ox) {
              T g = gy.data[size_t((of * h + oy) * w + ox)];
              if (gb) gb->data[size_t(of)] += g;
              for (int ic = 0; ic < c; ++ic) {
                for (int ky = 0; ky < 3; ++ky) {
                  int iy = oy + ky - 1;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < 3; ++kx) {
                    int ix = ox + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    size_t ki = size_t(((of * c + ic) * 3 + ky) * 3 + kx);
                    size_t xi = size_t((ic * h + iy) * w + ix);
                    if (gx) gx->data[xi] += g * kv.data[ki];
                    if (gk) gk->data[ki] += g * xv.data[xi];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::mean_pool: {
        if (!wants(n.in[0])) break;
        const auto &xs = nodes_[size_t(n.in[0])].value.shape;
        int c = xs[0], h = xs[1], w = xs[2];
        auto &gi = touch(n.in[0]);
        for (int ic = 0; ic < c; ++ic)
          for (int oy = 0; oy < h / 2; ++oy)
            for (int ox = 0; ox < w / 2; ++ox) {
              T g = gy.data[size_t((ic * (h / 2) + oy) * (w / 2) + ox)] / T(4);
              gi.data[size_t((ic * h + 2 * oy) * w + 2 * ox)] += g;
              gi.data[size_t((ic * h + 2 * oy) * w + 2 * ox + 1)] += g;
              gi.data[size_t((ic * h + 2 * oy + 1) * w + 2 * ox)] += g;
              gi.data[size_t((ic * h + 2 * oy + 1) * w + 2 * ox + 1)] += g;
            }
        break;
      }
      case Op::flatten: {
        if (!wants(n.in[0])) break;
        auto &gi = touch(n.in[0]);
        for (size_t i = 0; i < gy.data.size(); ++i) gi.data[i] += gy.data[i];
        break;
      }
      case Op::bilinear_warp: {
        if (!wants(n.in[0])) break;
        const auto &xs = nodes_[size_t(n.in[0])].value.shape;
        int c = xs[0], h = xs[1], w = xs[2];
        const WarpGrid &grid = *n.grid;
        auto &gi = touch(n.in[0]);
        for (int64_t p = 0; p < int64_t(grid.out_h) * grid.out_w; ++p) {
          T fy = T(grid.src_y[size_t(p)]);
          T fx = T(grid.src_x[size_t(p)]);
          int y0 = int(std::floor(fy)), x0 = int(std::floor(fx));
          T wy = fy - T(y0), wx = fx - T(x0);
          for (int ic = 0; ic < c; ++ic) {
            T g = gy.data[size_t(ic) * grid.src_y.size() + size_t(p)];
            for (int dy = 0; dy < 2; ++dy) {
              int sy = y0 + dy;
              if (sy < 0 || sy >= h) continue;
              T ry = dy ? wy : T(1) - wy;
              for (int dx = 0; dx < 2; ++dx) {
                int sx = x0 + dx;
                if (sx < 0 || sx >= w) continue;
                T rx = dx ? wx : T(1) - wx;
                gi.data[size_t((ic * h + sy) * w + sx)] += g * ry * rx;
              }
            }
          }
        }
        break;
      }
      case Op::softmax_xent: {
        if (!wants(n.in[0])) break;
        const auto &lv = nodes_[size_t(n.in[0])].value;
        auto &gi = touch(n.in[0]);
        T mx = lv.data[0];
        for (T v : lv.data)
          if (v > mx) mx = v;
        T sum = T(0);
        for (T v : lv.data) sum += std::exp(v - mx);
        T g = gy.data[0];
        for (size_t i = 0; i < lv.data.size(); ++i) {
          T p = std::exp(lv.data[i] - mx) / sum;
          gi.data[i] += g * (p - (int(i) == n.target ? T(1) : T(0)));
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<char> touched_;
};

inline Op op_from_name(const std::string &name) {
  static const std::pair<const char *, Op> table[] = {
      {"add", Op::add},
      {"scalar-mul", Op::scalar_mul},
      {"elementwise-mul", Op::mul},
      {"relu", Op::relu},
      {"tanh", Op::tanh_fn},
      {"dense", Op::dense},
      {"conv2d", Op::conv2d},
      {"mean-pool", Op::mean_pool},
      {"flatten", Op::flatten},
      {"bilinear-warp", Op::bilinear_warp},
      {"softmax-cross-entropy", Op::softmax_xent},
  };
  for (const auto &[n, op] : table)
    if (name == n) return op;
  throw ValueError("unknown op '" + name + "'");
}

// Parameters for the generic forward entry point.
template <typename T>
struct OpParams {
  T scalar = T(0);
  int target = -1;
  std::shared_ptr<const WarpGrid> grid;
};

// String/enum-driven dispatch over the fixed op set.
template <typename T>
int forward(Tape<T> &tape, Op op, const std::vector<int> &inputs,
            const OpParams<T> &params = {}) {
  auto arity = [&](size_t n) {
    if (inputs.size() != n)
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
  };
  switch (op) {
    case Op::leaf: throw ValueError("forward: leaf is not an op");
    case Op::add: arity(2); return tape.add(inputs[0], inputs[1]);
    case Op::scalar_mul: arity(1); return tape.scalar_mul(inputs[0], params.scalar);
    case Op::mul: arity(2); return tape.mul(inputs[0], inputs[1]);
    case Op::relu: arity(1); return tape.relu(inputs[0]);
    case Op::tanh_fn: arity(1); return tape.tanh_fn(inputs[0]);
    case Op::dense: arity(3); return tape.dense(inputs[0], inputs[1], inputs[2]);
    case Op::conv2d: arity(3); return tape.conv2d(inputs[0], inputs[1], inputs[2]);
    case Op::mean_pool: arity(1); return tape.mean_pool(inputs[0]);
    case Op::flatten: arity(1); return tape.flatten(inputs[0]);
    case Op::bilinear_warp: arity(1); return tape.bilinear_warp(inputs[0], params.grid);
    case Op::softmax_xent:
      arity(1);
      return tape.softmax_cross_entropy(inputs[0], params.target);
  }
  throw ValueError("forward: unknown op id");
}

}  // namespace idaa
