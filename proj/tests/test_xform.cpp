#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "idaa/rng.hpp"
#include "idaa/transforms.hpp"

using namespace idaa;
using testutil::fd_compare;

namespace {

Tensor<double> rand_image(Shape shape, Rng &rng, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto &v : t.data) v = rng.uniform(lo, hi);
  return t;
}

bool same_spec(const TransformSpec &a, const TransformSpec &b) {
  return a.kind == b.kind && a.scale == b.scale && a.u_off_y == b.u_off_y &&
         a.u_off_x == b.u_off_x && a.angle_deg == b.angle_deg &&
         a.shift_y == b.shift_y && a.shift_x == b.shift_x && a.factor == b.factor &&
         a.sigma == b.sigma && a.rate == b.rate && a.sub_seed == b.sub_seed;
}

}  // namespace

TEST_CASE("sample_plan assigns kinds circularly") {
  Rng rng(42);
  const auto &set = canonical_transform_set();
  TransformPlan plan = sample_plan(rng, 10, set);
  REQUIRE(plan.specs.size() == 10);
  for (int i = 0; i < 10; ++i)
    CHECK(plan.specs[size_t(i)].kind == set[size_t(i) % set.size()]);
  CHECK(plan.specs[8].kind == TransformKind::identity);
  CHECK(plan.specs[9].kind == TransformKind::hflip);
}

TEST_CASE("sample_plan single identity and reproducibility") {
  Rng a(7);
  TransformPlan p1 = sample_plan(a, 1, {TransformKind::identity});
  CHECK(p1.specs.size() == 1);
  CHECK(p1.specs[0].kind == TransformKind::identity);
  Rng b(123), c(123);
  TransformPlan p2 = sample_plan(b, 10, canonical_transform_set());
  TransformPlan p3 = sample_plan(c, 10, canonical_transform_set());
  for (size_t i = 0; i < 10; ++i) CHECK(same_spec(p2.specs[i], p3.specs[i]));
}

TEST_CASE("sample_plan rejects bad arguments") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_plan(rng, 5, {}), ValueError);
  CHECK_THROWS_AS(sample_plan(rng, 0, canonical_transform_set()), ValueError);
}

TEST_CASE("sampled parameters stay in declared ranges") {
  Rng rng(2024);
  for (int i = 0; i < 500; ++i) {
    for (TransformKind k : canonical_transform_set()) {
      TransformSpec s = sample_spec(k, rng);
      CHECK(s.scale >= 0.75);
      CHECK(s.scale <= 1.0);
      CHECK(s.angle_deg >= -15.0);
      CHECK(s.angle_deg <= 15.0);
      CHECK(s.shift_y >= -3);
      CHECK(s.shift_y <= 3);
      CHECK(s.shift_x >= -3);
      CHECK(s.shift_x <= 3);
      CHECK(s.factor >= 0.8);
      CHECK(s.factor <= 1.2);
      CHECK(s.sigma >= 0.0);
      CHECK(s.sigma <= 0.05);
      CHECK(s.rate >= 0.0);
      CHECK(s.rate <= 0.1);
    }
  }
}

TEST_CASE("hflip is an involution") {
  Rng rng(5);
  Tensor<double> img = rand_image({2, 5, 4}, rng);
  TransformSpec s;
  s.kind = TransformKind::hflip;
  Tensor<double> once = apply_transform(img, s);
  CHECK(once.data != img.data);
  Tensor<double> twice = apply_transform(once, s);
  CHECK(twice.data == img.data);
}

TEST_CASE("identity parameters reproduce the input exactly") {
  Rng rng(6);
  Tensor<double> img = rand_image({1, 6, 6}, rng);
  TransformSpec rot;
  rot.kind = TransformKind::rotate;
  rot.angle_deg = 0.0;
  CHECK(apply_transform(img, rot).data == img.data);
  TransformSpec tr;
  tr.kind = TransformKind::translate;
  CHECK(apply_transform(img, tr).data == img.data);
  TransformSpec br;
  br.kind = TransformKind::brightness;
  br.factor = 1.0;
  CHECK(apply_transform(img, br).data == img.data);
  TransformSpec id;
  CHECK(apply_transform(img, id).data == img.data);
}

TEST_CASE("translate shifts content with zero fill") {
  Tensor<double> img = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});
  TransformSpec s;
  s.kind = TransformKind::translate;
  s.shift_y = 1;
  s.shift_x = 0;
  Tensor<double> out = apply_transform(img, s);
  CHECK(out.data == std::vector<double>{0, 0, 1, 2});
}

TEST_CASE("resize-pad matches per-pixel interpolation script") {
  Rng rng(77);
  Tensor<double> img = rand_image({1, 4, 4}, rng);
  TransformSpec s;
  s.kind = TransformKind::resize_pad;
  s.scale = 0.75;  // 4 -> 3
  s.u_off_y = 0.9;  // offset 1 of {0, 1}
  s.u_off_x = 0.9;
  Tensor<double> out = apply_transform(img, s);

  // independent straight-line oracle: center-aligned bilinear 4->3, pasted at
  // (1,1) on a zero canvas
  std::vector<double> expect(16, 0.0);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      double sy = (y + 0.5) * 4.0 / 3.0 - 0.5;
      double sx = (x + 0.5) * 4.0 / 3.0 - 0.5;
      int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
      double ty = sy - y0, tx = sx - x0;
      double v00 = img.data[size_t(y0 * 4 + x0)];
      double v01 = img.data[size_t(y0 * 4 + x0 + 1)];
      double v10 = img.data[size_t((y0 + 1) * 4 + x0)];
      double v11 = img.data[size_t((y0 + 1) * 4 + x0 + 1)];
      double top = v00 * (1.0 - tx) + v01 * tx;
      double bot = v10 * (1.0 - tx) + v11 * tx;
      expect[size_t((y + 1) * 4 + (x + 1))] = top * (1.0 - ty) + bot * ty;
    }
  }
  for (size_t i = 0; i < 16; ++i)
    CHECK(out.data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  // border stays zero
  CHECK(out.data[0] == 0.0);
  CHECK(out.data[5] != 0.0);
}

TEST_CASE("half-pixel bilinear sample averages the two neighbours") {
  // 2-wide shrink of a 4-wide row lands exactly between pixel pairs
  auto g = resize_pad_grid(1, 4, 0.5, 0.0, 0.0);
  CHECK(g->src_x[0] == doctest::Approx(0.5));
  CHECK(g->src_x[1] == doctest::Approx(2.5));
  Tape<double> tape;
  int x = tape.leaf(Tensor<double>::from({1, 1, 4}, {0.2, 0.6, 0.1, 0.9}));
  Tensor<double> out = tape.value(tape.bilinear_warp(x, g));
  CHECK(out.data[0] == doctest::Approx(0.4));
  CHECK(out.data[1] == doctest::Approx(0.5));
}

TEST_CASE("applying a spec twice is bit-identical") {
  Rng rng(11);
  Tensor<double> img = rand_image({1, 5, 5}, rng);
  Rng draws(99);
  for (TransformKind k : canonical_transform_set()) {
    TransformSpec s = sample_spec(k, draws);
    Tensor<double> a = apply_transform(img, s);
    Tensor<double> b = apply_transform(img, s);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("outputs stay inside the unit interval and keep shape") {
  Rng rng(13);
  Rng draws(14);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> img = rand_image({2, 6, 6}, rng);
    for (TransformKind k : canonical_transform_set()) {
      TransformSpec s = sample_spec(k, draws);
      Tensor<double> out = apply_transform(img, s);
      CHECK(out.shape == img.shape);
      for (double v : out.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("gauss-noise passes gradients through unchanged on interior pixels") {
  Rng rng(21);
  Tensor<double> img = rand_image({1, 4, 4}, rng, 0.3, 0.7);
  TransformSpec s;
  s.kind = TransformKind::gauss_noise;
  s.sigma = 0.02;
  s.sub_seed = 424242;
  Tape<double> tape;
  int x = tape.leaf(img, true);
  int y = apply_on_tape(tape, x, s);
  // interior: nothing clamps, so dy/dx is the identity
  for (double v : tape.value(y).data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  int w = tape.leaf(Tensor<double>::from({2, 16}, std::vector<double>(32, 0.3)));
  int loss = tape.softmax_cross_entropy(
      tape.dense(tape.flatten(y), w, tape.leaf(Tensor<double>::from({2}, {0.1, -0.1}))), 0);
  tape.backward(loss);
  CHECK(tape.grad(x).data == tape.grad(y).data);
}

TEST_CASE("pixel-dropout backward is multiplication by the frozen mask") {
  Rng rng(31);
  Tensor<double> img = rand_image({1, 4, 4}, rng);
  TransformSpec s;
  s.kind = TransformKind::pixel_dropout;
  s.rate = 0.35;  // outside the sampled range on purpose: denser mask exercise
  s.sub_seed = 777;
  Tensor<double> mask = dropout_mask<double>(img.shape, s.rate, s.sub_seed);
  bool any_zero = false, any_one = false;
  for (double m : mask.data) (m == 0.0 ? any_zero : any_one) = true;
  CHECK(any_zero);
  CHECK(any_one);
  Tape<double> tape;
  int x = tape.leaf(img, true);
  int y = apply_on_tape(tape, x, s);
  Rng wr(3);
  int w = tape.leaf(rand_image({2, 16}, wr, -0.5, 0.5));
  int loss = tape.softmax_cross_entropy(
      tape.dense(tape.flatten(y), w, tape.leaf(Tensor<double>(Shape{2}))), 1);
  tape.backward(loss);
  const auto &gx = tape.grad(x);
  const auto &gy = tape.grad(y);
  for (size_t i = 0; i < gx.data.size(); ++i)
    CHECK(gx.data[i] == gy.data[i] * mask.data[i]);
}

TEST_CASE("every transform kind is differentiable wrt pixels") {
  for (TransformKind k : canonical_transform_set()) {
    CAPTURE(kind_name(k));
    int used = 0;
    for (uint64_t seed = 1; used < 2 && seed < 64; ++seed) {
      Rng rng(seed);
      Rng draws(seed + 1000);
      TransformSpec s = sample_spec(k, draws);
      std::vector<Tensor<double>> leaves;
      leaves.push_back(rand_image({1, 4, 4}, rng, 0.1, 0.7));
      leaves.push_back(rand_image({3, 16}, rng, -0.5, 0.5));
      leaves.push_back(rand_image({3}, rng, -0.2, 0.2));
      double kink_clearance = 1e9;
      auto build = [&](Tape<double> &tape, const std::vector<int> &ids) {
        int y = apply_on_tape(tape, ids[0], s);
        for (double v : tape.value(y).data)
          kink_clearance =
              std::min(kink_clearance, std::min(std::fabs(v), std::fabs(v - 1.0)));
        return tape.softmax_cross_entropy(tape.dense(tape.flatten(y), ids[1], ids[2]), 2);
      };
      testutil::eval_loss(leaves, build);
      bool geometric = k == TransformKind::identity || k == TransformKind::hflip ||
                       k == TransformKind::resize_pad || k == TransformKind::rotate ||
                       k == TransformKind::translate ||
                       k == TransformKind::pixel_dropout;
      // clamping kinds: keep clear of the clamp kinks for finite differences
      if (!geometric && kink_clearance < 1e-3) continue;
      auto rep = fd_compare(leaves, {true, true, true}, build);
      CAPTURE(seed);
      CHECK(rep.max_rel_err <= 1e-5);
      ++used;
    }
    CHECK(used == 2);
  }
}

TEST_CASE("transform kind names round trip") {
  for (TransformKind k : canonical_transform_set())
    CHECK(kind_from_name(kind_name(k)) == k);
  CHECK_THROWS_WITH_AS(kind_from_name("swirl"), doctest::Contains("swirl"), ValueError);
}
