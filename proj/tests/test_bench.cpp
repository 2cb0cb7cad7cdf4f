#include <atomic>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "idaa/bench.hpp"
#include "idaa/weights_io.hpp"

using namespace idaa;

namespace {

struct Grid {
  Dataset ds;
  NamedModel m1, m2, m3;
};

// Small trained grid shared across cases; training is deterministic so every
// case sees identical models.
const Grid &grid() {
  static Grid g = [] {
    Grid f;
    f.ds = synth_dataset(3301, 3, 8, 8);
    ModelSpec cnn;
    cnn.arch = Arch::cnn_small;
    cnn.height = 8;
    cnn.width = 8;
    cnn.classes = 3;
    ModelSpec mlp = cnn;
    mlp.arch = Arch::mlp2;
    f.m1 = {"m1", train(cnn, f.ds, 30, 0.2, 1)};
    f.m2 = {"m2", train(cnn, f.ds, 30, 0.2, 2)};
    f.m3 = {"m3", train(mlp, f.ds, 30, 0.2, 3)};
    return f;
  }();
  return g;
}

AttackTask fake_task(int y_src, int y_tgt) {
  AttackTask t;
  t.image = Tensor<float>({1, 2, 2});
  t.y_src = y_src;
  t.y_tgt = y_tgt;
  return t;
}

ExperimentConfig quick_cfg(AttackMethod method, int samples) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.samples = samples;
  cfg.seed = 99;
  cfg.attack.iters = 2;
  cfg.attack.group = 3;
  if (method == AttackMethod::mi || method == AttackMethod::dim)
    cfg.attack = baseline_config(cfg.attack);
  return cfg;
}

}  // namespace

TEST_CASE("attack set selection keeps only correctly classified images") {
  const Grid &g = grid();
  REQUIRE(accuracy(g.m1.weights, g.ds) >= 0.9);
  Rng rng(404);
  std::vector<const ModelWeights *> models{&g.m1.weights};
  auto tasks = select_attack_set(g.ds, models, 10, rng);
  REQUIRE(tasks.size() == 10);
  for (const auto &t : tasks) {
    CHECK(predicted_class(g.m1.weights, t.image) == t.y_src);
    CHECK(t.y_tgt != t.y_src);
    CHECK(t.y_tgt >= 0);
    CHECK(t.y_tgt < g.ds.classes);
  }
}

TEST_CASE("attack set selection names the shortfall") {
  const Grid &g = grid();
  Rng rng(405);
  std::vector<const ModelWeights *> models{&g.m1.weights};
  CHECK_THROWS_WITH_AS(
      select_attack_set(g.ds, models, int(g.ds.images.size()) + 5, rng),
      doctest::Contains("correctly classified"), ValueError);
}

TEST_CASE("two-class datasets force the other target label") {
  Dataset ds = synth_dataset(77, 2, 10, 8);
  ModelSpec spec;
  spec.arch = Arch::cnn_small;
  spec.height = 8;
  spec.width = 8;
  spec.classes = 2;
  ModelWeights w = train(spec, ds, 12, 0.15, 4);
  REQUIRE(accuracy(w, ds) >= 0.9);
  Rng rng(406);
  auto tasks = select_attack_set(ds, {&w}, 8, rng);
  for (const auto &t : tasks) CHECK(t.y_tgt == 1 - t.y_src);
}

TEST_CASE("attack set selection is reproducible") {
  const Grid &g = grid();
  std::vector<const ModelWeights *> models{&g.m1.weights};
  Rng r1(407), r2(407);
  auto a = select_attack_set(g.ds, models, 6, r1);
  auto b = select_attack_set(g.ds, models, 6, r2);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].y_src == b[i].y_src);
    CHECK(a[i].y_tgt == b[i].y_tgt);
    CHECK(std::memcmp(a[i].image.data.data(), b[i].image.data.data(),
                      a[i].image.data.size() * sizeof(float)) == 0);
  }
  // without replacement: no task repeats another's image
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = i + 1; j < a.size(); ++j)
      CHECK(std::memcmp(a[i].image.data.data(), a[j].image.data.data(),
                        a[i].image.data.size() * sizeof(float)) != 0);
}

TEST_CASE("evaluate counts follow the worked examples") {
  std::vector<AttackTask> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(fake_task(0, 1));

  EvalResult all_hit = evaluate_predictions(tasks, {1, 1, 1, 1});
  CHECK(all_hit.fsuc == 1.0);
  CHECK(all_hit.tsuc == 1.0);

  EvalResult none = evaluate_predictions(tasks, {0, 0, 0, 0});
  CHECK(none.fsuc == 0.0);
  CHECK(none.tsuc == 0.0);

  EvalResult half = evaluate_predictions(tasks, {2, 2, 1, 1});
  CHECK(half.fsuc == 1.0);
  CHECK(half.tsuc == 0.5);

  CHECK_THROWS_AS(evaluate_predictions({}, {}), ValueError);
  CHECK_THROWS_AS(evaluate_predictions(tasks, {1, 1}), ValueError);
}

TEST_CASE("targeted success never exceeds fooling success") {
  Rng rng(408);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<AttackTask> tasks;
    std::vector<int> preds;
    int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i) {
      int src = rng.uniform_int(0, 4);
      int tgt = rng.uniform_int(0, 3);
      if (tgt >= src) ++tgt;
      tasks.push_back(fake_task(src, tgt));
      preds.push_back(rng.uniform_int(0, 5));
    }
    EvalResult r = evaluate_predictions(tasks, preds);
    CHECK(r.tsuc <= r.fsuc);
  }
}

TEST_CASE("experiment rows reuse outcomes across targets and flag white-box") {
  const Grid &g = grid();
  ExperimentConfig cfg = quick_cfg(AttackMethod::mi, 6);
  MetricsReport rep = run_experiment<double>(cfg, {g.m1}, {g.m1, g.m2}, g.ds);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].target == "m1");
  CHECK(rep.rows[0].white_box);
  CHECK(rep.rows[1].target == "m2");
  CHECK_FALSE(rep.rows[1].white_box);
  for (const auto &r : rep.rows) {
    CHECK(r.method == "mi");
    CHECK(r.surrogates == "m1");
    CHECK(r.n == 6);
    CHECK(r.seed == 99);
    CHECK(r.tsuc <= r.fsuc);
    CHECK(r.fsuc >= 0.0);
    CHECK(r.fsuc <= 1.0);
  }

  MetricsReport again = run_experiment<double>(cfg, {g.m1}, {g.m1, g.m2}, g.ds);
  CHECK(to_csv(rep) == to_csv(again));
}

TEST_CASE("hold-out mode pits the other models against each target") {
  const Grid &g = grid();
  ExperimentConfig cfg = quick_cfg(AttackMethod::mi, 4);
  cfg.hold_out = true;
  MetricsReport rep = run_experiment<double>(cfg, {g.m1, g.m2, g.m3}, {}, g.ds);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].target == "m1");
  CHECK(rep.rows[0].surrogates == "m2+m3");
  CHECK(rep.rows[1].target == "m2");
  CHECK(rep.rows[1].surrogates == "m1+m3");
  CHECK(rep.rows[2].target == "m3");
  CHECK(rep.rows[2].surrogates == "m1+m2");
  for (const auto &r : rep.rows) {
    CHECK_FALSE(r.white_box);
    CHECK(r.tsuc <= r.fsuc);
  }
}

TEST_CASE("w-space method runs through the experiment driver") {
  const Grid &g = grid();
  ExperimentConfig cfg = quick_cfg(AttackMethod::idaa, 3);
  MetricsReport rep = run_experiment<double>(cfg, {g.m1}, {g.m2}, g.ds);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].method == "idaa");
  CHECK(rep.rows[0].tsuc <= rep.rows[0].fsuc);
}

TEST_CASE("threaded and serial experiments produce identical csv") {
  const Grid &g = grid();
  ExperimentConfig cfg = quick_cfg(AttackMethod::mi, 8);
  MetricsReport serial = run_experiment<double>(cfg, {g.m1}, {g.m2}, g.ds, 1);
  MetricsReport threaded = run_experiment<double>(cfg, {g.m1}, {g.m2}, g.ds, 4);
  CHECK(to_csv(serial) == to_csv(threaded));
}

TEST_CASE("experiment driver rejects bad setups") {
  const Grid &g = grid();
  ExperimentConfig cfg = quick_cfg(AttackMethod::mi, 4);
  CHECK_THROWS_AS(run_experiment<double>(cfg, {}, {g.m1}, g.ds), ValueError);
  CHECK_THROWS_AS(run_experiment<double>(cfg, {g.m1}, {}, g.ds), ValueError);
  cfg.hold_out = true;
  CHECK_THROWS_AS(run_experiment<double>(cfg, {g.m1}, {}, g.ds), ValueError);
  cfg.hold_out = false;
  cfg.samples = 0;
  CHECK_THROWS_AS(run_experiment<double>(cfg, {g.m1}, {g.m2}, g.ds), ValueError);
}

TEST_CASE("ablation sweeps share the task and seed set") {
  const Grid &g = grid();
  ExperimentConfig base = quick_cfg(AttackMethod::mi, 4);
  base.attack.loss = LossMode::plain_ce;  // gamma has no effect on this loss
  auto reports = run_ablation<double>(base, "gamma", nlohmann::json::array({0.0, 0.1}),
                                      {g.m1}, {g.m2}, g.ds);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].rows[0].gamma == 0.0);
  CHECK(reports[1].rows[0].gamma == 0.1);
  CHECK(reports[0].rows[0].fsuc == reports[1].rows[0].fsuc);
  CHECK(reports[0].rows[0].tsuc == reports[1].rows[0].tsuc);
}

TEST_CASE("ablation axes map onto the echoed config") {
  const Grid &g = grid();
  ExperimentConfig base = quick_cfg(AttackMethod::mi, 2);

  auto ks = run_ablation<double>(base, "K", nlohmann::json::array({0, 2}), {g.m1},
                                 {g.m2}, g.ds);
  CHECK(ks[0].rows[0].repeats == 0);
  CHECK(ks[1].rows[0].repeats == 2);

  auto betas = run_ablation<double>(
      base, "beta", nlohmann::json::array({{0.99, 0.999}, {0.0, 0.1}}), {g.m1},
      {g.m2}, g.ds);
  CHECK(betas[0].rows[0].beta1 == 0.99);
  CHECK(betas[0].rows[0].beta2 == 0.999);
  CHECK(betas[1].rows[0].beta1 == 0.0);
  CHECK(betas[1].rows[0].beta2 == 0.1);

  auto methods = run_ablation<double>(
      base, "method", nlohmann::json::array({"mi", "idaa-mi"}), {g.m1}, {g.m2}, g.ds);
  CHECK(methods[0].rows[0].method == "mi");
  CHECK(methods[1].rows[0].method == "idaa-mi");

  auto rhos = run_ablation<double>(base, "rho", nlohmann::json::array({0.3, 0.9}),
                                   {g.m1}, {g.m2}, g.ds);
  CHECK(rhos[0].rows[0].rho == 0.3);
  CHECK(rhos[1].rows[0].rho == 0.9);

  CHECK_THROWS_AS(run_ablation<double>(base, "tau", nlohmann::json::array({1.0}),
                                       {g.m1}, {g.m2}, g.ds),
                  ValueError);
  CHECK_THROWS_AS(run_ablation<double>(base, "beta", nlohmann::json::array({0.5}),
                                       {g.m1}, {g.m2}, g.ds),
                  ValueError);
  CHECK_THROWS_AS(run_ablation<double>(base, "alpha", nlohmann::json::array(),
                                       {g.m1}, {g.m2}, g.ds),
                  ValueError);
}

TEST_CASE("json configs round trip with defaults") {
  AttackConfig d = attack_config_from_json(nlohmann::json::object());
  CHECK(d.eps == 0.07);
  CHECK(d.iters == 10);
  CHECK(d.group == 10);
  CHECK(d.gamma == 0.1);
  CHECK(d.mixup.ratio == 0.7);
  CHECK(d.mixup.repeats == 3);

  nlohmann::json j = attack_config_to_json(d);
  AttackConfig back = attack_config_from_json(j);
  CHECK(back.eps == d.eps);
  CHECK(back.beta1 == d.beta1);
  CHECK(back.beta2 == d.beta2);
  CHECK(back.loss == LossMode::triplet);

  j["loss"] = "plain-ce";
  CHECK(attack_config_from_json(j).loss == LossMode::plain_ce);
  j["loss"] = "hinge";
  CHECK_THROWS_AS(attack_config_from_json(j), FormatError);
  CHECK_THROWS_AS(attack_config_from_json({{"epz", 0.1}}), FormatError);

  nlohmann::json e{{"method", "dim"},
                   {"samples", 12},
                   {"hold_out", true},
                   {"seed", 5},
                   {"dataset", {{"synthetic", true}}},
                   {"attack", {{"eps", 0.05}}}};
  ExperimentConfig cfg = experiment_from_json(e);
  CHECK(cfg.method == AttackMethod::dim);
  CHECK(cfg.samples == 12);
  CHECK(cfg.hold_out);
  CHECK(cfg.seed == 5);
  CHECK(cfg.attack.eps == 0.05);
  e["mystery"] = 1;
  CHECK_THROWS_AS(experiment_from_json(e), FormatError);
}

TEST_CASE("csv layout is stable") {
  MetricsRow r;
  r.method = "idaa";
  r.surrogates = "m1";
  r.target = "m2";
  r.white_box = false;
  r.fsuc = 0.5;
  r.tsuc = 0.25;
  r.n = 8;
  r.seed = 7;
  r.eps = 0.07;
  r.alpha = 1.0;
  r.iters = 10;
  r.group = 10;
  r.gamma = 0.1;
  r.beta1 = 0.99;
  r.beta2 = 0.999;
  r.rho = 0.7;
  r.repeats = 3;
  MetricsReport rep;
  rep.rows.push_back(r);
  CHECK(to_csv(rep) ==
        "method,surrogates,target,white_box,fsuc,tsuc,n,seed,eps,alpha,T,N,"
        "gamma,beta1,beta2,rho,K\n"
        "idaa,m1,m2,0,0.5,0.25,8,7,0.07,1,10,10,0.1,0.99,0.999,0.7,3\n");
}

TEST_CASE("idx pair writer round trips through the loader") {
  Dataset ds = synth_dataset(515, 3, 4, 8);
  dump_idx(ds, "bench_images.idx", "bench_labels.idx");
  Dataset back = load_idx("bench_images.idx", "bench_labels.idx", ds.classes);
  REQUIRE(back.images.size() == ds.images.size());
  CHECK(back.classes == ds.classes);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.labels[i] == ds.labels[i]);
    REQUIRE(back.images[i].shape == ds.images[i].shape);
    for (size_t p = 0; p < ds.images[i].data.size(); ++p) {
      double diff = std::fabs(double(back.images[i].data[p]) -
                              double(ds.images[i].data[p]));
      CHECK(diff <= 0.5 / 255.0 + 1e-6);
    }
  }

  Dataset empty;
  empty.classes = 2;
  CHECK_THROWS_AS(dump_idx(empty, "a.idx", "b.idx"), ValueError);
}

TEST_CASE("parallel_for covers every index once and propagates errors") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](int i) { hits[size_t(i)] += 1; });
  for (int h : hits) CHECK(h == 1);

  std::atomic<int> ran{0};
  CHECK_THROWS_AS(parallel_for(50, 4,
                               [&](int i) {
                                 ran.fetch_add(1);
                                 if (i == 37) throw ValueError("boom");
                               }),
                  ValueError);
  CHECK(ran.load() >= 1);
}
