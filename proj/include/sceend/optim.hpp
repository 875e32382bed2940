#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sceend/matrix.hpp"

namespace sceend {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear ramp from 0 to lr
};

/// Per-parameter first/second moment accumulators plus step counter.
struct OptimState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  void ensure_shapes(const std::vector<Matrix*>& params) {
    if (m.size() == params.size()) return;
    m.clear();
    v.clear();
    for (const Matrix* p : params) {
      m.emplace_back(p->rows, p->cols);
      v.emplace_back(p->rows, p->cols);
    }
  }
};

/// One bias-corrected Adam update over a fixed parameter order.
inline void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                      OptimState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count mismatch");
  state.ensure_shapes(params);
  state.step += 1;
  double lr = cfg.lr;
  if (cfg.warmup_steps > 0 && state.step <= cfg.warmup_steps)
    lr = cfg.lr * static_cast<double>(state.step) / cfg.warmup_steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (!p.same_shape(g)) throw ShapeError("adam_step: grad shape mismatch");
    Matrix& mk = state.m[k];
    Matrix& vk = state.v[k];
    for (size_t i = 0; i < p.size(); ++i) {
      mk.data[i] = cfg.beta1 * mk.data[i] + (1.0 - cfg.beta1) * g.data[i];
      vk.data[i] = cfg.beta2 * vk.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mhat = mk.data[i] / bc1;
      const double vhat = vk.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

/// Central-difference check of analytic gradients on a random coordinate
/// subset. f evaluates the scalar loss at the current parameter values;
/// `analytic` is the backward() result in the same parameter order.
/// Coordinates where both gradients are below abs_floor are compared
/// absolutely (relative error is meaningless at zero).
inline double grad_check(const std::function<double()>& f, const std::vector<Matrix*>& params,
                         const std::vector<Matrix>& analytic, int num_samples, double h,
                         uint64_t seed, double abs_floor = 1e-6) {
  std::vector<std::pair<size_t, size_t>> coords;  // (param index, flat index)
  for (size_t k = 0; k < params.size(); ++k)
    for (size_t i = 0; i < params[k]->size(); ++i) coords.emplace_back(k, i);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (static_cast<size_t>(num_samples) < coords.size()) coords.resize(num_samples);

  double max_err = 0.0;
  for (auto [k, i] : coords) {
    double& x = params[k]->data[i];
    const double orig = x;
    x = orig + h;
    const double fp = f();
    x = orig - h;
    const double fm = f();
    x = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic[k].data[i];
    double err;
    if (std::abs(fd) < abs_floor && std::abs(an) < abs_floor) {
      err = std::abs(fd - an);
    } else {
      err = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
    }
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace sceend
