#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "idaa/error.hpp"
#include "idaa/mixup.hpp"
#include "idaa/nn.hpp"
#include "idaa/rng.hpp"
#include "idaa/tape.hpp"
#include "idaa/tensor.hpp"
#include "idaa/transforms.hpp"

namespace idaa {

// Every pixel clip in the direct-space baselines goes through these, so tests
// can assert that the tanh-projection path executes zero clips.
inline thread_local uint64_t tl_clip_count = 0;

inline uint64_t clip_count() { return tl_clip_count; }
inline void reset_clip_count() { tl_clip_count = 0; }

template <typename T>
T counted_clip(T v, T lo, T hi) {
  ++tl_clip_count;
  return v < lo ? lo : (v > hi ? hi : v);
}

enum class AttackMethod { idaa, idaa_mi, mi, dim, da_variant };

inline const char *method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::idaa: return "idaa";
    case AttackMethod::idaa_mi: return "idaa-mi";
    case AttackMethod::mi: return "mi";
    case AttackMethod::dim: return "dim";
    case AttackMethod::da_variant: return "da-variant";
  }
  return "?";
}

inline AttackMethod method_from_name(const std::string &name) {
  if (name == "idaa") return AttackMethod::idaa;
  if (name == "idaa-mi") return AttackMethod::idaa_mi;
  if (name == "mi") return AttackMethod::mi;
  if (name == "dim") return AttackMethod::dim;
  if (name == "da-variant") return AttackMethod::da_variant;
  throw ValueError("unknown attack method '" + name + "'");
}

enum class LossMode { triplet, plain_ce };

struct AttackConfig {
  double eps = 0.07;
  int iters = 10;
  double alpha = 1.0;  // w-space step; baselines use eps/iters instead
  int group = 10;
  double gamma = 0.1;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double delta = 1e-8;
  MixupConfig mixup;  // ratio 0.7, repeats 3, Beta(1,1)
  std::vector<TransformKind> transform_set = canonical_transform_set();
  LossMode loss = LossMode::triplet;
  double dim_prob = 0.7;  // resize-pad probability for dim / da-variant
  double mi_mu = 1.0;     // momentum decay of the MI-style updates
  uint64_t seed = 0;
};

inline void validate_attack_config(const AttackConfig &c) {
  if (!(c.eps > 0.0 && c.eps < 1.0)) throw ValueError("attack: eps must be in (0,1)");
  if (c.iters < 1) throw ValueError("attack: iterations must be >= 1");
  if (!(c.alpha > 0.0)) throw ValueError("attack: alpha must be > 0");
  if (c.group < 1) throw ValueError("attack: group size must be >= 1");
  if (c.gamma < 0.0) throw ValueError("attack: gamma must be >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ValueError("attack: beta coefficients must be in [0,1)");
  if (c.delta < 0.0) throw ValueError("attack: delta must be >= 0");
  if (!(c.dim_prob >= 0.0 && c.dim_prob <= 1.0))
    throw ValueError("attack: diversity probability must be in [0,1]");
  if (c.transform_set.empty()) throw ValueError("attack: transform set is empty");
}

struct AttackTask {
  Tensor<float> image;
  int y_src = 0;
  int y_tgt = 1;
  std::vector<const ModelWeights *> surrogates;
};

inline void validate_task(const AttackTask &t) {
  if (t.y_src == t.y_tgt) throw ValueError("attack: source and target labels match");
  if (t.surrogates.empty()) throw ValueError("attack: surrogate set is empty");
}

struct AttackOutcome {
  Tensor<float> x_adv;
  std::vector<double> step_losses;  // group-mean loss per iteration
  std::vector<double> step_rinf;    // max-norm of r after each iteration
  int steps = 0;
};

template <typename T>
struct PerturbationState {
  Tensor<T> w, m, v, bnd_lower, bnd_upper;
  int t = 0;
};

// bnd_lower = -min(x, eps), bnd_upper = min(1-x, eps)
template <typename T>
std::pair<Tensor<T>, Tensor<T>> perturbation_bounds(const Tensor<T> &x, double eps) {
  if (!(eps > 0.0 && eps < 1.0))
    throw ValueError("perturbation_bounds: eps must be in (0,1)");
  for (T v : x.data)
    if (!(v >= T(0) && v <= T(1)))
      throw ValueError("perturbation_bounds: image values outside [0,1]");
  Tensor<T> lo(x.shape), hi(x.shape);
  T e = T(eps);
  for (size_t i = 0; i < x.data.size(); ++i) {
    lo.data[i] = -(x.data[i] < e ? x.data[i] : e);
    T room = T(1) - x.data[i];
    hi.data[i] = room < e ? room : e;
  }
  return {std::move(lo), std::move(hi)};
}

// r = bnd_lower + (bnd_upper - bnd_lower) * (tanh(w)/2 + 0.5); all constants
// enter as leaves, so the only gradient path is through tanh.
template <typename T>
int project_on_tape(Tape<T> &tape, int w, const Tensor<T> &bnd_lower,
                    const Tensor<T> &bnd_upper) {
  if (tape.value(w).shape != bnd_lower.shape || bnd_lower.shape != bnd_upper.shape)
    throw ShapeError("project: shape mismatch");
  Tensor<T> bnd(bnd_lower.shape);
  for (size_t i = 0; i < bnd.data.size(); ++i)
    bnd.data[i] = bnd_upper.data[i] - bnd_lower.data[i];
  int s = tape.add(tape.scalar_mul(tape.tanh_fn(w), T(0.5)),
                   tape.leaf(Tensor<T>(bnd_lower.shape, T(0.5))));
  int scaled = tape.mul(s, tape.leaf(std::move(bnd)));
  return tape.add(scaled, tape.leaf(bnd_lower));
}

template <typename T>
Tensor<T> project(const Tensor<T> &w, const Tensor<T> &bnd_lower,
                  const Tensor<T> &bnd_upper) {
  Tape<T> tape;
  return tape.value(project_on_tape(tape, tape.leaf(w), bnd_lower, bnd_upper));
}

// CE(logits, y_tgt) - gamma * CE(logits, y_src)
template <typename T>
int triplet_loss_on_tape(Tape<T> &tape, int logits, int y_src, int y_tgt, double gamma) {
  if (y_src == y_tgt)
    throw ValueError("triplet_loss: source and target labels match");
  int pos = tape.softmax_cross_entropy(logits, y_tgt);
  int neg = tape.softmax_cross_entropy(logits, y_src);
  return tape.add(pos, tape.scalar_mul(neg, T(-gamma)));
}

template <typename T>
Tensor<T> triplet_loss(const Tensor<T> &logits, int y_src, int y_tgt, double gamma) {
  Tape<T> tape;
  return tape.value(triplet_loss_on_tape(tape, tape.leaf(logits), y_src, y_tgt, gamma));
}

// Mean over variants of grad/||grad||_1; an all-zero gradient contributes a
// zero term rather than 0/0.
template <typename T>
Tensor<T> averaged_gradient(const std::vector<Tensor<T>> &grads) {
  if (grads.empty()) throw ValueError("averaged_gradient: empty list");
  Tensor<T> out(grads[0].shape);
  for (const auto &g : grads) {
    if (!same_shape(g, out))
      throw ShapeError("averaged_gradient: shape mismatch");
    T l1 = T(0);
    for (T v : g.data) l1 += v < T(0) ? -v : v;
    if (l1 == T(0)) continue;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += g.data[i] / l1;
  }
  T inv = T(1) / T(grads.size());
  for (auto &v : out.data) v *= inv;
  return out;
}

// m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2; w <- w - alpha * m/sqrt(v+d).
// No bias correction. The update multiplies alpha onto m/sqrt last, so with
// b1=b2=delta=0 the step is exactly alpha*sign(g) wherever g != 0.
template <typename T>
void momentum_step(PerturbationState<T> &state, const Tensor<T> &g,
                   const AttackConfig &cfg) {
  if (!same_shape(state.w, g)) throw ShapeError("momentum_step: shape mismatch");
  T b1 = T(cfg.beta1), b2 = T(cfg.beta2), a = T(cfg.alpha), d = T(cfg.delta);
  for (size_t i = 0; i < g.data.size(); ++i) {
    state.m.data[i] = b1 * state.m.data[i] + (T(1) - b1) * g.data[i];
    state.v.data[i] = b2 * state.v.data[i] + (T(1) - b2) * g.data[i] * g.data[i];
    state.w.data[i] -= a * (state.m.data[i] / std::sqrt(state.v.data[i] + d));
  }
  state.t += 1;
}

template <typename T>
Tensor<T> aggregate_ensemble(const std::vector<Tensor<T>> &logits_list) {
  if (logits_list.empty()) throw ValueError("aggregate_ensemble: empty list");
  Tensor<T> out(logits_list[0].shape);
  for (const auto &l : logits_list) {
    if (!same_shape(l, out))
      throw ShapeError("aggregate_ensemble: length mismatch");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += l.data[i];
  }
  T inv = T(1) / T(logits_list.size());
  for (auto &v : out.data) v *= inv;
  return out;
}

// Logit averaging on the tape; a single model passes through untouched.
template <typename T>
int ensemble_logits_on_tape(Tape<T> &tape, const std::vector<const ModelWeights *> &models,
                            int image) {
  int acc = predict_on_tape(tape, *models[0], image).logits;
  for (size_t k = 1; k < models.size(); ++k)
    acc = tape.add(acc, predict_on_tape(tape, *models[k], image).logits);
  if (models.size() > 1) acc = tape.scalar_mul(acc, T(1) / T(models.size()));
  return acc;
}

namespace detail {

template <typename T>
int loss_on_tape(Tape<T> &tape, int logits, const AttackTask &task,
                 const AttackConfig &cfg) {
  if (cfg.loss == LossMode::triplet)
    return triplet_loss_on_tape<T>(tape, logits, task.y_src, task.y_tgt, cfg.gamma);
  return tape.softmax_cross_entropy(logits, task.y_tgt);
}

template <typename T>
double linf(const Tensor<T> &a) {
  T mx = T(0);
  for (T v : a.data) {
    T av = v < T(0) ? -v : v;
    if (av > mx) mx = av;
  }
  return double(mx);
}

template <typename T>
T sign(T v) {
  return T((v > T(0)) - (v < T(0)));
}

// Shared w-space driver: IDAA (adaptive), IDAA-MI (MI step on the averaged
// gradient), DA-variant (DIM-style transform draws instead of the circular
// plan). The projection guarantees the box constraint, so this path never
// clips.
template <typename T>
AttackOutcome run_w_space(const AttackTask &task, const AttackConfig &cfg,
                          AttackMethod method) {
  validate_task(task);
  validate_attack_config(cfg);
  Tensor<T> x = cast_tensor<T>(task.image);
  auto [bnd_lower, bnd_upper] = perturbation_bounds<T>(x, cfg.eps);

  Rng rng(mix_seed(cfg.seed, 101));
  PerturbationState<T> st;
  st.w = Tensor<T>(x.shape);
  for (auto &v : st.w.data) v = T(rng.normal());
  st.m = Tensor<T>(x.shape);
  st.v = Tensor<T>(x.shape);
  st.bnd_lower = bnd_lower;
  st.bnd_upper = bnd_upper;

  AttackOutcome out;
  Tensor<T> mi_accum(x.shape);  // idaa-mi accumulator

  for (int step = 0; step < cfg.iters; ++step) {
    Tape<T> tape;
    int w_leaf = tape.leaf(st.w, true);
    int r = project_on_tape(tape, w_leaf, bnd_lower, bnd_upper);
    int x_adv = tape.add(tape.leaf(x), r);

    std::vector<int> variants;
    variants.reserve(size_t(cfg.group));
    if (method == AttackMethod::da_variant) {
      for (int i = 0; i < cfg.group; ++i) {
        TransformSpec spec;  // identity unless the diversity draw fires
        if (rng.uniform() < cfg.dim_prob)
          spec = sample_spec(TransformKind::resize_pad, rng);
        variants.push_back(apply_on_tape(tape, x_adv, spec));
      }
    } else {
      TransformPlan plan = sample_plan(rng, cfg.group, cfg.transform_set);
      for (const auto &spec : plan.specs)
        variants.push_back(apply_on_tape(tape, x_adv, spec));
    }
    std::vector<int> mixed = local_mixup_on_tape(tape, variants, cfg.mixup, rng);

    std::vector<int> losses;
    losses.reserve(mixed.size());
    for (int node : mixed) {
      int logits = ensemble_logits_on_tape<T>(tape, task.surrogates, node);
      losses.push_back(loss_on_tape<T>(tape, logits, task, cfg));
    }

    double loss_sum = 0.0;
    std::vector<Tensor<T>> grads;
    grads.reserve(losses.size());
    for (int loss : losses) {
      loss_sum += double(tape.value(loss).data[0]);
      tape.backward(loss);
      grads.push_back(tape.grad(w_leaf));
    }
    Tensor<T> g = averaged_gradient(grads);

    if (method == AttackMethod::idaa_mi) {
      T l1 = T(0);
      for (T v : g.data) l1 += v < T(0) ? -v : v;
      T mu = T(cfg.mi_mu);
      for (size_t i = 0; i < g.data.size(); ++i) {
        mi_accum.data[i] = mu * mi_accum.data[i] + (l1 == T(0) ? T(0) : g.data[i] / l1);
        st.w.data[i] -= T(cfg.alpha) * sign(mi_accum.data[i]);
      }
      st.t += 1;
    } else {
      momentum_step(st, g, cfg);
    }

    out.step_losses.push_back(loss_sum / double(losses.size()));
    out.step_rinf.push_back(linf(project(st.w, bnd_lower, bnd_upper)));
  }

  Tensor<T> r_final = project(st.w, bnd_lower, bnd_upper);
  Tensor<T> x_adv(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    x_adv.data[i] = x.data[i] + r_final.data[i];
  out.x_adv = cast_tensor<float>(x_adv);
  out.steps = cfg.iters;
  return out;
}

// Direct-space driver: MI, and DIM when each step's diversity draw can route
// the input through a fresh resize-pad. Box constraints are enforced by the
// two explicit (counted) clips.
template <typename T>
AttackOutcome run_direct_space(const AttackTask &task, const AttackConfig &cfg,
                               AttackMethod method) {
  validate_task(task);
  validate_attack_config(cfg);
  Tensor<T> x = cast_tensor<T>(task.image);
  for (T v : x.data)
    if (!(v >= T(0) && v <= T(1)))
      throw ValueError("attack: image values outside [0,1]");

  Rng rng(mix_seed(cfg.seed, 101));
  Tensor<T> x_cur = x;
  Tensor<T> accum(x.shape);
  AttackOutcome out;
  T e = T(cfg.eps), a = T(cfg.alpha), mu = T(cfg.mi_mu);

  for (int step = 0; step < cfg.iters; ++step) {
    Tape<T> tape;
    int x_leaf = tape.leaf(x_cur, true);
    int input = x_leaf;
    if (method == AttackMethod::dim && rng.uniform() < cfg.dim_prob)
      input = apply_on_tape(tape, x_leaf, sample_spec(TransformKind::resize_pad, rng));
    int logits = ensemble_logits_on_tape<T>(tape, task.surrogates, input);
    int loss = loss_on_tape<T>(tape, logits, task, cfg);
    tape.backward(loss);
    const Tensor<T> &g = tape.grad(x_leaf);

    T l1 = T(0);
    for (T v : g.data) l1 += v < T(0) ? -v : v;
    for (size_t i = 0; i < accum.data.size(); ++i)
      accum.data[i] = mu * accum.data[i] + (l1 == T(0) ? T(0) : g.data[i] / l1);

    for (size_t i = 0; i < x_cur.data.size(); ++i) {
      T r = x_cur.data[i] - a * sign(accum.data[i]) - x.data[i];
      r = counted_clip(r, -e, e);
      x_cur.data[i] = counted_clip(x.data[i] + r, T(0), T(1));
    }

    out.step_losses.push_back(double(tape.value(loss).data[0]));
    Tensor<T> diff(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) diff.data[i] = x_cur.data[i] - x.data[i];
    out.step_rinf.push_back(linf(diff));
  }

  out.x_adv = cast_tensor<float>(x_cur);
  out.steps = cfg.iters;
  return out;
}

}  // namespace detail

template <typename T>
AttackOutcome run_attack(const AttackTask &task, const AttackConfig &cfg,
                         AttackMethod method) {
  switch (method) {
    case AttackMethod::idaa:
    case AttackMethod::idaa_mi:
    case AttackMethod::da_variant:
      return detail::run_w_space<T>(task, cfg, method);
    case AttackMethod::mi:
    case AttackMethod::dim:
      return detail::run_direct_space<T>(task, cfg, method);
  }
  throw ValueError("run_attack: unknown method");
}

template <typename T>
AttackOutcome run_idaa(const AttackTask &task, const AttackConfig &cfg) {
  return run_attack<T>(task, cfg, AttackMethod::idaa);
}

template <typename T>
AttackOutcome run_mi_baseline(const AttackTask &task, const AttackConfig &cfg) {
  return run_attack<T>(task, cfg, AttackMethod::mi);
}

template <typename T>
AttackOutcome run_dim_mode(const AttackTask &task, const AttackConfig &cfg) {
  return run_attack<T>(task, cfg, AttackMethod::dim);
}

// Baseline parameterization: direct-space step eps/T, plain targeted CE.
inline AttackConfig baseline_config(AttackConfig cfg) {
  cfg.alpha = cfg.eps / double(cfg.iters);
  cfg.loss = LossMode::plain_ce;
  return cfg;
}

}  // namespace idaa
