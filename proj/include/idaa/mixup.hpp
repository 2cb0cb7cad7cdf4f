#pragma once

#include <utility>
#include <vector>

#include "idaa/error.hpp"
#include "idaa/rng.hpp"
#include "idaa/tape.hpp"
#include "idaa/tensor.hpp"
#include "idaa/transforms.hpp"

namespace idaa {

// One pairwise mixing region: content of b at R2 blends into a at R1.
struct RegionSpec {
  int r1_y = 0;
  int r1_x = 0;
  int r2_y = 0;
  int r2_x = 0;
  int height = 0;
  int width = 0;
  double lambda = 1.0;
};

struct MixupConfig {
  double ratio = 0.7;
  int repeats = 3;
  double beta_a = 1.0;
  double beta_b = 1.0;
};

inline int region_side(double ratio, int side) {
  int s = round_half_up(ratio * side);
  if (s < 1) s = 1;
  if (s > side) s = side;
  return s;
}

// Uniform random permutation pairing: pair i is (i, perm[i]).
inline std::vector<std::pair<int, int>> pair_groups(int group_size, Rng &rng) {
  if (group_size < 1) throw ValueError("pair_groups: group is empty");
  std::vector<int> perm(static_cast<size_t>(group_size));
  for (int i = 0; i < group_size; ++i) perm[size_t(i)] = i;
  for (int i = group_size - 1; i > 0; --i) {
    int j = rng.uniform_int(0, i);
    std::swap(perm[size_t(i)], perm[size_t(j)]);
  }
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(size_t(group_size));
  for (int i = 0; i < group_size; ++i) pairs.emplace_back(i, perm[size_t(i)]);
  return pairs;
}

inline void validate_region(const RegionSpec &r, const Shape &shape) {
  int h = shape[1], w = shape[2];
  if (r.height < 1 || r.width < 1 || r.r1_y < 0 || r.r1_x < 0 || r.r2_y < 0 ||
      r.r2_x < 0 || r.r1_y + r.height > h || r.r2_y + r.height > h ||
      r.r1_x + r.width > w || r.r2_x + r.width > w)
    throw ValueError("mix_once: region out of bounds for " + shape_str(shape));
  if (!(r.lambda >= 0.0 && r.lambda <= 1.0))
    throw ValueError("mix_once: lambda must be in [0,1]");
}

// out = a outside R1; inside R1, lambda*a[R1] + (1-lambda)*b[R2]. Built from
// masked elementwise ops plus an integer-shift warp that moves R2 over R1, so
// gradients flow to both sources.
template <typename T>
int mix_once_on_tape(Tape<T> &tape, int a, int b, const RegionSpec &r) {
  const Shape sh = tape.value(a).shape;  // by value: recording may reallocate nodes
  if (sh.size() != 3)
    throw ShapeError("mix_once: need [C,H,W], got " + shape_str(sh));
  if (!same_shape(tape.value(a), tape.value(b)))
    throw ShapeError("mix_once: shape mismatch " + shape_str(sh) + " vs " +
                     shape_str(tape.value(b).shape));
  validate_region(r, sh);
  int c = sh[0], h = sh[1], w = sh[2];
  T q = T(1) - T(r.lambda);
  Tensor<T> keep(sh, T(1));   // 1 outside R1, lambda inside
  Tensor<T> take(sh, T(0));   // 0 outside R1, 1-lambda inside
  for (int ic = 0; ic < c; ++ic)
    for (int y = r.r1_y; y < r.r1_y + r.height; ++y)
      for (int x = r.r1_x; x < r.r1_x + r.width; ++x) {
        keep.data[size_t((ic * h + y) * w + x)] = T(r.lambda);
        take.data[size_t((ic * h + y) * w + x)] = q;
      }
  int moved = tape.bilinear_warp(
      b, translate_grid(h, w, r.r1_y - r.r2_y, r.r1_x - r.r2_x));
  return tape.add(tape.mul(a, tape.leaf(std::move(keep))),
                  tape.mul(moved, tape.leaf(std::move(take))));
}

// K rounds. Each round: fresh permutation, then per pair the region corners
// (R1 then R2, row before column) and lambda, in that draw order. All reads
// within a round see the pre-round group.
template <typename T>
std::vector<int> local_mixup_on_tape(Tape<T> &tape, std::vector<int> group,
                                     const MixupConfig &cfg, Rng &rng) {
  if (group.empty()) throw ValueError("local_mixup: group is empty");
  if (cfg.repeats < 0) throw ValueError("local_mixup: repeats must be >= 0");
  if (!(cfg.ratio > 0.0 && cfg.ratio <= 1.0))
    throw ValueError("local_mixup: ratio must be in (0,1]");
  if (!(cfg.beta_a > 0.0) || !(cfg.beta_b > 0.0))
    throw ValueError("local_mixup: beta parameters must be > 0");
  const Shape sh = tape.value(group[0]).shape;  // by value: see mix_once_on_tape
  int side_h = region_side(cfg.ratio, sh[1]);
  int side_w = region_side(cfg.ratio, sh[2]);
  for (int round = 0; round < cfg.repeats; ++round) {
    auto pairs = pair_groups(int(group.size()), rng);
    std::vector<int> next(group.size());
    for (const auto &[ia, ib] : pairs) {
      RegionSpec r;
      r.height = side_h;
      r.width = side_w;
      r.r1_y = rng.uniform_int(0, sh[1] - side_h);
      r.r1_x = rng.uniform_int(0, sh[2] - side_w);
      r.r2_y = rng.uniform_int(0, sh[1] - side_h);
      r.r2_x = rng.uniform_int(0, sh[2] - side_w);
      r.lambda = rng.beta(cfg.beta_a, cfg.beta_b);
      next[size_t(ia)] = mix_once_on_tape(tape, group[size_t(ia)], group[size_t(ib)], r);
    }
    group = std::move(next);
  }
  return group;
}

template <typename T>
Tensor<T> mix_once(const Tensor<T> &a, const Tensor<T> &b, const RegionSpec &r) {
  Tape<T> tape;
  return tape.value(mix_once_on_tape(tape, tape.leaf(a), tape.leaf(b), r));
}

template <typename T>
std::vector<Tensor<T>> local_mixup(const std::vector<Tensor<T>> &group,
                                   const MixupConfig &cfg, Rng &rng) {
  Tape<T> tape;
  std::vector<int> ids;
  ids.reserve(group.size());
  for (const auto &g : group) ids.push_back(tape.leaf(g));
  std::vector<int> out = local_mixup_on_tape(tape, std::move(ids), cfg, rng);
  std::vector<Tensor<T>> res;
  res.reserve(out.size());
  for (int id : out) res.push_back(tape.value(id));
  return res;
}

}  // namespace idaa
