#pragma once

#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "idaa/attack.hpp"
#include "idaa/dataset.hpp"
#include "idaa/error.hpp"
#include "idaa/nn.hpp"
#include "idaa/rng.hpp"

#include "json.hpp"

namespace idaa {

struct NamedModel {
  std::string name;
  ModelWeights weights;
};

struct ExperimentConfig {
  std::vector<std::string> surrogate_paths;
  std::vector<std::string> target_paths;
  AttackMethod method = AttackMethod::idaa;
  AttackConfig attack;  // per-task seeds are derived from the experiment seed
  int samples = 200;
  bool hold_out = false;
  uint64_t seed = 0;
};

// One report row; the attack configuration is echoed so sweep points stay
// distinguishable in a concatenated CSV.
struct MetricsRow {
  std::string method;
  std::string surrogates;
  std::string target;
  bool white_box = false;
  double fsuc = 0.0;
  double tsuc = 0.0;
  int n = 0;
  uint64_t seed = 0;
  double eps = 0.0;
  double alpha = 0.0;
  int iters = 0;
  int group = 0;
  double gamma = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double rho = 0.0;
  int repeats = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
};

struct EvalResult {
  double fsuc = 0.0;
  double tsuc = 0.0;
  int n = 0;
};

// ---- configuration JSON ----------------------------------------------------

inline AttackConfig attack_config_from_json(const nlohmann::json &j) {
  AttackConfig c;
  if (!j.is_object()) throw FormatError("attack config: expected a JSON object");
  for (const auto &[key, val] : j.items()) {
    if (key == "eps") c.eps = val.get<double>();
    else if (key == "T") c.iters = val.get<int>();
    else if (key == "alpha") c.alpha = val.get<double>();
    else if (key == "N") c.group = val.get<int>();
    else if (key == "gamma") c.gamma = val.get<double>();
    else if (key == "beta1") c.beta1 = val.get<double>();
    else if (key == "beta2") c.beta2 = val.get<double>();
    else if (key == "delta") c.delta = val.get<double>();
    else if (key == "rho") c.mixup.ratio = val.get<double>();
    else if (key == "K") c.mixup.repeats = val.get<int>();
    else if (key == "beta_a") c.mixup.beta_a = val.get<double>();
    else if (key == "beta_b") c.mixup.beta_b = val.get<double>();
    else if (key == "loss") {
      std::string s = val.get<std::string>();
      if (s == "triplet") c.loss = LossMode::triplet;
      else if (s == "plain-ce") c.loss = LossMode::plain_ce;
      else throw FormatError("attack config: unknown loss '" + s + "'");
    } else if (key == "dim_prob") c.dim_prob = val.get<double>();
    else if (key == "mi_mu") c.mi_mu = val.get<double>();
    else throw FormatError("attack config: unknown key '" + key + "'");
  }
  validate_attack_config(c);
  return c;
}

inline nlohmann::json attack_config_to_json(const AttackConfig &c) {
  nlohmann::json j;
  j["eps"] = c.eps;
  j["T"] = c.iters;
  j["alpha"] = c.alpha;
  j["N"] = c.group;
  j["gamma"] = c.gamma;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["delta"] = c.delta;
  j["rho"] = c.mixup.ratio;
  j["K"] = c.mixup.repeats;
  j["beta_a"] = c.mixup.beta_a;
  j["beta_b"] = c.mixup.beta_b;
  j["loss"] = c.loss == LossMode::triplet ? "triplet" : "plain-ce";
  j["dim_prob"] = c.dim_prob;
  j["mi_mu"] = c.mi_mu;
  return j;
}

// Known top-level keys outside the core config (dataset, out, sweep, dump)
// belong to the CLI and are skipped here.
inline ExperimentConfig experiment_from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw FormatError("experiment config: expected a JSON object");
  ExperimentConfig c;
  for (const auto &[key, val] : j.items()) {
    if (key == "surrogates") c.surrogate_paths = val.get<std::vector<std::string>>();
    else if (key == "targets") c.target_paths = val.get<std::vector<std::string>>();
    else if (key == "method") c.method = method_from_name(val.get<std::string>());
    else if (key == "attack") c.attack = attack_config_from_json(val);
    else if (key == "samples") c.samples = val.get<int>();
    else if (key == "hold_out") c.hold_out = val.get<bool>();
    else if (key == "seed") c.seed = val.get<uint64_t>();
    else if (key == "dataset" || key == "out" || key == "sweep" ||
             key == "dump_outcomes") continue;
    else throw FormatError("experiment config: unknown key '" + key + "'");
  }
  if (c.samples < 1) throw ValueError("experiment config: samples must be >= 1");
  return c;
}

// ---- task selection and evaluation -----------------------------------------

// Keep only images every listed model classifies correctly, subsample `count`
// of them without replacement, then draw each target label uniformly from the
// other classes. Draw order: the partial shuffle first, then one target draw
// per task.
inline std::vector<AttackTask> select_attack_set(
    const Dataset &ds, const std::vector<const ModelWeights *> &models, int count,
    Rng &rng) {
  if (count < 1) throw ValueError("select_attack_set: count must be >= 1");
  if (models.empty()) throw ValueError("select_attack_set: no models given");
  std::vector<int> pool;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    bool ok = true;
    for (const ModelWeights *m : models)
      if (predicted_class(*m, ds.images[i]) != ds.labels[i]) {
        ok = false;
        break;
      }
    if (ok) pool.push_back(int(i));
  }
  if (int(pool.size()) < count)
    throw ValueError("select_attack_set: need " + std::to_string(count) +
                     " correctly classified samples, found " +
                     std::to_string(pool.size()));
  for (int i = 0; i < count; ++i) {
    int j = rng.uniform_int(i, int(pool.size()) - 1);
    std::swap(pool[size_t(i)], pool[size_t(j)]);
  }
  std::vector<AttackTask> tasks;
  tasks.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    AttackTask t;
    t.image = ds.images[size_t(pool[size_t(i)])];
    t.y_src = ds.labels[size_t(pool[size_t(i)])];
    int k = rng.uniform_int(0, ds.classes - 2);
    t.y_tgt = k >= t.y_src ? k + 1 : k;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

// Pure counting layer so metric identities can be checked on fabricated
// prediction lists.
inline EvalResult evaluate_predictions(const std::vector<AttackTask> &tasks,
                                       const std::vector<int> &preds) {
  if (tasks.empty()) throw ValueError("evaluate: no outcomes");
  if (tasks.size() != preds.size())
    throw ValueError("evaluate: prediction count mismatch");
  EvalResult r;
  r.n = int(tasks.size());
  int fooled = 0, hit = 0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    if (preds[i] != tasks[i].y_src) ++fooled;
    if (preds[i] == tasks[i].y_tgt) ++hit;
  }
  r.fsuc = double(fooled) / double(r.n);
  r.tsuc = double(hit) / double(r.n);
  return r;
}

inline EvalResult evaluate_outcomes(const std::vector<AttackTask> &tasks,
                                    const std::vector<AttackOutcome> &outcomes,
                                    const ModelWeights &target) {
  if (tasks.size() != outcomes.size())
    throw ValueError("evaluate: outcome count mismatch");
  std::vector<int> preds;
  preds.reserve(outcomes.size());
  for (const auto &o : outcomes) preds.push_back(predicted_class(target, o.x_adv));
  return evaluate_predictions(tasks, preds);
}

// ---- parallel task execution ------------------------------------------------

inline void parallel_for(int n, int threads, const std::function<void(int)> &fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      {
        std::lock_guard<std::mutex> lock(err_mu);
        if (err) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  int tcount = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(tcount));
  for (int t = 0; t < tcount; ++t) pool.emplace_back(worker);
  for (auto &th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---- experiment driver ------------------------------------------------------

namespace detail {

inline MetricsRow echo_row(const ExperimentConfig &cfg) {
  MetricsRow r;
  r.method = method_name(cfg.method);
  r.seed = cfg.seed;
  r.eps = cfg.attack.eps;
  r.alpha = cfg.attack.alpha;
  r.iters = cfg.attack.iters;
  r.group = cfg.attack.group;
  r.gamma = cfg.attack.gamma;
  r.beta1 = cfg.attack.beta1;
  r.beta2 = cfg.attack.beta2;
  r.rho = cfg.attack.mixup.ratio;
  r.repeats = cfg.attack.mixup.repeats;
  return r;
}

inline std::string join_names(const std::vector<const NamedModel *> &models) {
  std::string s;
  for (size_t i = 0; i < models.size(); ++i) {
    if (i) s += '+';
    s += models[i]->name;
  }
  return s;
}

}  // namespace detail

// Selected tasks plus the raw outcomes per attack set, for callers that dump
// adversarial images to disk.
struct ExperimentArtifacts {
  std::vector<AttackTask> tasks;
  std::vector<std::pair<std::string, std::vector<AttackOutcome>>> outcome_sets;
};

// Each attack set runs every task once; rows then reuse those outcomes for all
// target models. Per-task attack seeds depend only on (experiment seed, set
// index, task index), so scheduling cannot change results.
template <typename T>
MetricsReport run_experiment(const ExperimentConfig &cfg,
                             const std::vector<NamedModel> &surrogates,
                             const std::vector<NamedModel> &targets,
                             const Dataset &ds, int threads = 1,
                             ExperimentArtifacts *artifacts = nullptr) {
  if (cfg.samples < 1) throw ValueError("run_experiment: samples must be >= 1");
  if (surrogates.empty()) throw ValueError("run_experiment: surrogate set is empty");
  if (cfg.hold_out) {
    if (surrogates.size() < 2)
      throw ValueError("run_experiment: hold-out needs at least 2 models");
  } else if (targets.empty()) {
    throw ValueError("run_experiment: target set is empty");
  }
  validate_attack_config(cfg.attack);
  validate_dataset(ds);

  std::vector<const ModelWeights *> filter;
  for (const auto &m : surrogates) filter.push_back(&m.weights);
  if (!cfg.hold_out)
    for (const auto &m : targets) filter.push_back(&m.weights);
  Rng select_rng(mix_seed(cfg.seed, 31));
  std::vector<AttackTask> tasks =
      select_attack_set(ds, filter, cfg.samples, select_rng);

  struct AttackSet {
    std::vector<const NamedModel *> attackers;
    std::vector<const NamedModel *> evals;
  };
  std::vector<AttackSet> sets;
  if (cfg.hold_out) {
    for (size_t h = 0; h < surrogates.size(); ++h) {
      AttackSet s;
      for (size_t i = 0; i < surrogates.size(); ++i)
        if (i != h) s.attackers.push_back(&surrogates[i]);
      s.evals = {&surrogates[h]};
      sets.push_back(std::move(s));
    }
  } else {
    for (const auto &s : surrogates) {
      AttackSet one;
      one.attackers = {&s};
      for (const auto &t : targets) one.evals.push_back(&t);
      sets.push_back(std::move(one));
    }
  }

  MetricsReport report;
  for (size_t si = 0; si < sets.size(); ++si) {
    const AttackSet &set = sets[si];
    std::vector<const ModelWeights *> attack_models;
    for (const NamedModel *m : set.attackers) attack_models.push_back(&m->weights);

    std::vector<AttackOutcome> outcomes(tasks.size());
    uint64_t set_seed = mix_seed(cfg.seed, 1000 + uint64_t(si));
    parallel_for(int(tasks.size()), threads, [&](int ti) {
      AttackTask t = tasks[size_t(ti)];
      t.surrogates = attack_models;
      AttackConfig acfg = cfg.attack;
      acfg.seed = mix_seed(set_seed, uint64_t(ti));
      outcomes[size_t(ti)] = run_attack<T>(t, acfg, cfg.method);
    });

    std::string set_name = detail::join_names(set.attackers);
    for (const NamedModel *tgt : set.evals) {
      EvalResult er = evaluate_outcomes(tasks, outcomes, tgt->weights);
      MetricsRow row = detail::echo_row(cfg);
      row.surrogates = set_name;
      row.target = tgt->name;
      row.white_box =
          set.attackers.size() == 1 && set.attackers[0]->name == tgt->name;
      row.fsuc = er.fsuc;
      row.tsuc = er.tsuc;
      row.n = er.n;
      report.rows.push_back(std::move(row));
    }
    if (artifacts) artifacts->outcome_sets.emplace_back(set_name, std::move(outcomes));
  }
  if (artifacts) artifacts->tasks = std::move(tasks);
  return report;
}

// One report per sweep point; the shared experiment seed keeps the task set
// and per-task attack seeds identical across points.
template <typename T>
std::vector<MetricsReport> run_ablation(const ExperimentConfig &base,
                                        const std::string &axis,
                                        const nlohmann::json &values,
                                        const std::vector<NamedModel> &surrogates,
                                        const std::vector<NamedModel> &targets,
                                        const Dataset &ds, int threads = 1) {
  if (!values.is_array() || values.empty())
    throw ValueError("run_ablation: sweep values must be a non-empty array");
  std::vector<MetricsReport> out;
  for (const auto &v : values) {
    ExperimentConfig cfg = base;
    if (axis == "alpha") cfg.attack.alpha = v.get<double>();
    else if (axis == "eps") cfg.attack.eps = v.get<double>();
    else if (axis == "N") cfg.attack.group = v.get<int>();
    else if (axis == "gamma") cfg.attack.gamma = v.get<double>();
    else if (axis == "rho") cfg.attack.mixup.ratio = v.get<double>();
    else if (axis == "K") cfg.attack.mixup.repeats = v.get<int>();
    else if (axis == "beta") {
      if (!v.is_array() || v.size() != 2)
        throw ValueError("run_ablation: beta points must be [beta1, beta2] pairs");
      cfg.attack.beta1 = v[0].get<double>();
      cfg.attack.beta2 = v[1].get<double>();
    } else if (axis == "method") {
      cfg.method = method_from_name(v.get<std::string>());
    } else {
      throw ValueError("run_ablation: unknown axis '" + axis + "'");
    }
    out.push_back(run_experiment<T>(cfg, surrogates, targets, ds, threads));
  }
  return out;
}

// ---- CSV --------------------------------------------------------------------

inline std::string csv_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline const char *csv_header() {
  return "method,surrogates,target,white_box,fsuc,tsuc,n,seed,eps,alpha,T,N,"
         "gamma,beta1,beta2,rho,K";
}

inline std::string to_csv(const MetricsReport &report) {
  std::string out = csv_header();
  out += '\n';
  for (const MetricsRow &r : report.rows) {
    out += r.method;
    out += ',';
    out += r.surrogates;
    out += ',';
    out += r.target;
    out += ',';
    out += r.white_box ? '1' : '0';
    out += ',';
    out += csv_num(r.fsuc);
    out += ',';
    out += csv_num(r.tsuc);
    out += ',';
    out += std::to_string(r.n);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += csv_num(r.eps);
    out += ',';
    out += csv_num(r.alpha);
    out += ',';
    out += std::to_string(r.iters);
    out += ',';
    out += std::to_string(r.group);
    out += ',';
    out += csv_num(r.gamma);
    out += ',';
    out += csv_num(r.beta1);
    out += ',';
    out += csv_num(r.beta2);
    out += ',';
    out += csv_num(r.rho);
    out += ',';
    out += std::to_string(r.repeats);
    out += '\n';
  }
  return out;
}

}  // namespace idaa
