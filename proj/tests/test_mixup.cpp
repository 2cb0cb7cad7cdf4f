#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "idaa/mixup.hpp"
#include "idaa/rng.hpp"

using namespace idaa;
using testutil::fd_compare;

namespace {

Tensor<double> rand_image(Shape shape, Rng &rng, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto &v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("pair_groups of one is the self pair") {
  Rng rng(1);
  auto pairs = pair_groups(1, rng);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0] == std::pair{0, 0});
  CHECK_THROWS_AS(pair_groups(0, rng), ValueError);
}

TEST_CASE("pair_groups is a permutation and reproducible") {
  Rng a(55), b(55);
  auto p1 = pair_groups(6, a);
  auto p2 = pair_groups(6, b);
  CHECK(p1 == p2);
  std::vector<int> seen(6, 0);
  for (auto &[i, j] : p1) seen[size_t(j)]++;
  for (int c : seen) CHECK(c == 1);
  for (size_t i = 0; i < 6; ++i) CHECK(p1[i].first == int(i));
}

TEST_CASE("pair_groups permutation frequencies pass a 3-sigma uniformity band") {
  const int draws = 10000;
  const int n = 4;
  std::map<std::vector<int>, int> freq;
  Rng rng(20240817);
  for (int d = 0; d < draws; ++d) {
    auto pairs = pair_groups(n, rng);
    std::vector<int> perm(n);
    for (auto &[i, j] : pairs) perm[size_t(i)] = j;
    freq[perm]++;
  }
  CHECK(freq.size() == 24);
  double p = 1.0 / 24.0;
  double mean = draws * p;
  double sigma = std::sqrt(draws * p * (1.0 - p));
  for (const auto &[perm, count] : freq) {
    CHECK(count > mean - 3.0 * sigma);
    CHECK(count < mean + 3.0 * sigma);
  }
}

TEST_CASE("mix_once at lambda one returns the first image exactly") {
  Rng rng(9);
  Tensor<double> a = rand_image({1, 4, 4}, rng);
  Tensor<double> b = rand_image({1, 4, 4}, rng);
  RegionSpec r;
  r.height = 2;
  r.width = 2;
  r.r1_y = 1;
  r.r1_x = 1;
  r.r2_y = 0;
  r.r2_x = 2;
  r.lambda = 1.0;
  CHECK(mix_once(a, b, r).data == a.data);
}

TEST_CASE("mix_once at lambda zero pastes region R2 of b into R1") {
  Rng rng(10);
  Tensor<double> a = rand_image({1, 4, 4}, rng);
  Tensor<double> b = rand_image({1, 4, 4}, rng);
  RegionSpec r;
  r.height = 2;
  r.width = 2;
  r.r1_y = 0;
  r.r1_x = 0;
  r.r2_y = 2;
  r.r2_x = 2;
  r.lambda = 0.0;
  Tensor<double> out = mix_once(a, b, r);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double got = out.data[size_t(y * 4 + x)];
      if (y < 2 && x < 2)
        CHECK(got == b.data[size_t((y + 2) * 4 + (x + 2))]);
      else
        CHECK(got == a.data[size_t(y * 4 + x)]);
    }
}

TEST_CASE("mix_once full-image region is a global blend") {
  Rng rng(11);
  Tensor<double> a = rand_image({2, 3, 3}, rng);
  Tensor<double> b = rand_image({2, 3, 3}, rng);
  RegionSpec r;
  r.height = 3;
  r.width = 3;
  r.lambda = 0.3;
  Tensor<double> out = mix_once(a, b, r);
  for (size_t i = 0; i < out.data.size(); ++i)
    CHECK(out.data[i] ==
          doctest::Approx(0.3 * a.data[i] + 0.7 * b.data[i]).epsilon(1e-12));
}

TEST_CASE("mix_once quarter blend on a single pixel") {
  Tensor<double> a(Shape{1, 2, 2}, 0.0);
  Tensor<double> b(Shape{1, 2, 2}, 1.0);
  RegionSpec r;
  r.height = 1;
  r.width = 1;
  r.r1_y = 0;
  r.r1_x = 0;
  r.r2_y = 1;
  r.r2_x = 1;
  r.lambda = 0.25;
  Tensor<double> out = mix_once(a, b, r);
  CHECK(out.data == std::vector<double>{0.75, 0.0, 0.0, 0.0});
}

TEST_CASE("mix_once rejects bad regions") {
  Tensor<double> a(Shape{1, 4, 4}, 0.5);
  RegionSpec r;
  r.height = 3;
  r.width = 3;
  r.r1_y = 2;  // 2+3 > 4
  CHECK_THROWS_WITH_AS(mix_once(a, a, r), doctest::Contains("region"), ValueError);
  r.r1_y = 0;
  r.r2_x = 2;
  CHECK_THROWS_AS(mix_once(a, a, r), ValueError);
  r.r2_x = 0;
  r.lambda = 1.5;
  CHECK_THROWS_AS(mix_once(a, a, r), ValueError);
  Tensor<double> c(Shape{1, 3, 3}, 0.5);
  RegionSpec ok;
  ok.height = 1;
  ok.width = 1;
  CHECK_THROWS_AS(mix_once(a, c, ok), ShapeError);
}

TEST_CASE("local_mixup with zero repeats returns the group unchanged") {
  Rng rng(12), draws(13);
  std::vector<Tensor<double>> group;
  for (int i = 0; i < 4; ++i) group.push_back(rand_image({1, 4, 4}, rng));
  MixupConfig cfg;
  cfg.repeats = 0;
  auto out = local_mixup(group, cfg, draws);
  REQUIRE(out.size() == group.size());
  for (size_t i = 0; i < group.size(); ++i) CHECK(out[i].data == group[i].data);
}

TEST_CASE("local_mixup default config is reproducible and shape preserving") {
  Rng rng(14);
  std::vector<Tensor<double>> group;
  for (int i = 0; i < 5; ++i) group.push_back(rand_image({1, 6, 6}, rng));
  MixupConfig cfg;  // ratio 0.7, repeats 3
  Rng d1(777), d2(777);
  auto o1 = local_mixup(group, cfg, d1);
  auto o2 = local_mixup(group, cfg, d2);
  REQUIRE(o1.size() == 5);
  bool changed = false;
  for (size_t i = 0; i < 5; ++i) {
    CHECK(o1[i].shape == group[i].shape);
    CHECK(o1[i].data == o2[i].data);
    changed = changed || o1[i].data != group[i].data;
  }
  CHECK(changed);
}

TEST_CASE("local_mixup keeps values inside the unit interval") {
  Rng rng(15), draws(16);
  std::vector<Tensor<double>> group;
  for (int i = 0; i < 6; ++i) group.push_back(rand_image({1, 5, 5}, rng));
  MixupConfig cfg;
  cfg.repeats = 4;
  auto out = local_mixup(group, cfg, draws);
  for (const auto &img : out)
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
}

TEST_CASE("mixing spatially uniform variants changes nothing") {
  std::vector<Tensor<double>> group(3, Tensor<double>(Shape{1, 4, 4}, 0.37));
  MixupConfig cfg;
  cfg.repeats = 5;
  Rng draws(17);
  auto out = local_mixup(group, cfg, draws);
  for (const auto &img : out)
    for (double v : img.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("local_mixup validates its configuration") {
  std::vector<Tensor<double>> group(2, Tensor<double>(Shape{1, 4, 4}, 0.5));
  Rng rng(1);
  MixupConfig bad;
  bad.ratio = 0.0;
  CHECK_THROWS_AS(local_mixup(group, bad, rng), ValueError);
  bad.ratio = 1.5;
  CHECK_THROWS_AS(local_mixup(group, bad, rng), ValueError);
  bad = MixupConfig{};
  bad.repeats = -1;
  CHECK_THROWS_AS(local_mixup(group, bad, rng), ValueError);
  bad = MixupConfig{};
  bad.beta_a = 0.0;
  CHECK_THROWS_AS(local_mixup(group, bad, rng), ValueError);
  CHECK_THROWS_AS(local_mixup(std::vector<Tensor<double>>{}, MixupConfig{}, rng),
                  ValueError);
}

TEST_CASE("region side uses round half up and clamps to one pixel") {
  CHECK(region_side(0.7, 6) == 4);   // 4.2
  CHECK(region_side(0.75, 6) == 5);  // 4.5 rounds up
  CHECK(region_side(0.7, 28) == 20);
  CHECK(region_side(0.01, 4) == 1);  // 0.04 clamps to 1
  CHECK(region_side(1.0, 4) == 4);
}

TEST_CASE("mix_once gradients match finite differences") {
  Rng rng(18);
  std::vector<Tensor<double>> leaves;
  leaves.push_back(rand_image({1, 4, 4}, rng));
  leaves.push_back(rand_image({1, 4, 4}, rng));
  leaves.push_back(rand_image({3, 16}, rng, -0.5, 0.5));
  RegionSpec r;
  r.height = 3;
  r.width = 2;
  r.r1_y = 1;
  r.r1_x = 0;
  r.r2_y = 0;
  r.r2_x = 2;
  r.lambda = 0.4;
  auto build = [&](Tape<double> &tape, const std::vector<int> &ids) {
    int mixed = mix_once_on_tape(tape, ids[0], ids[1], r);
    return tape.softmax_cross_entropy(
        tape.dense(tape.flatten(mixed), ids[2], tape.leaf(Tensor<double>(Shape{3}))), 1);
  };
  auto rep = fd_compare(leaves, {true, true, true}, build);
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("local_mixup gradients reach every source image") {
  Rng rng(19);
  std::vector<Tensor<double>> leaves;
  for (int i = 0; i < 3; ++i) leaves.push_back(rand_image({1, 4, 4}, rng));
  leaves.push_back(rand_image({3, 16}, rng, -0.5, 0.5));
  MixupConfig cfg;
  cfg.repeats = 2;
  auto build = [&](Tape<double> &tape, const std::vector<int> &ids) {
    Rng draws(40);
    std::vector<int> group = {ids[0], ids[1], ids[2]};
    auto mixed = local_mixup_on_tape(tape, group, cfg, draws);
    int s01 = tape.add(mixed[0], mixed[1]);
    int all = tape.add(s01, mixed[2]);
    return tape.softmax_cross_entropy(
        tape.dense(tape.flatten(all), ids[3], tape.leaf(Tensor<double>(Shape{3}))), 0);
  };
  auto rep = fd_compare(leaves, {true, true, true, true}, build);
  CHECK(rep.max_rel_err <= 1e-5);
}
