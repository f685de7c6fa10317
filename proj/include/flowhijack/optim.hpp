// AdamW with decoupled weight decay, plus the cosine learning-rate schedule
// used by every training loop in this project.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowhijack/tensor.hpp"

namespace flowhijack {

struct NamedParam {
  std::string name;
  Tensor* value;
};

struct OptState {
  std::vector<Tensor> m;  // first moments, parallel to the param list
  std::vector<Tensor> v;  // second moments
  std::uint64_t step = 0;

  static OptState init(const std::vector<NamedParam>& params) {
    OptState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const NamedParam& p : params) {
      s.m.push_back(Tensor::zeros(p.value->shape));
      s.v.push_back(Tensor::zeros(p.value->shape));
    }
    return s;
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

inline void adamw_step(const std::vector<NamedParam>& params,
                       const std::vector<const Tensor*>& grads, OptState& state,
                       double lr, const AdamWConfig& cfg = {}) {
  if (lr <= 0.0) throw std::invalid_argument("adamw: lr must be > 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 ||
      cfg.beta2 >= 1.0)
    throw std::invalid_argument("adamw: betas must lie in [0,1)");
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adamw: param/grad/state count mismatch");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& theta = *params[pi].value;
    const Tensor& g = *grads[pi];
    if (!g.same_shape(theta))
      throw std::invalid_argument("adamw: grad shape mismatch for " +
                                  params[pi].name);
    if (!g.all_finite())
      throw std::runtime_error("adamw: non-finite gradient for " +
                               params[pi].name);
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      double gi = g.v[i];
      m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * gi;
      v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      theta.v[i] -= lr * cfg.weight_decay * theta.v[i];
      theta.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Cosine decay from `peak` at step 0 to ~0 at `total` steps.
inline double cosine_lr(double peak, std::uint64_t step, std::uint64_t total) {
  if (total == 0) return peak;
  double t = static_cast<double>(step) / static_cast<double>(total);
  if (t > 1.0) t = 1.0;
  return peak * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

}  // namespace flowhijack
