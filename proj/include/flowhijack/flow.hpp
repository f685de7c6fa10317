// Flow-matching policy: observation encoder, time-conditioned vector field,
// linear interpolation path and its target field, the tau sampler, and the
// forward-Euler ODE sampler.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowhijack/autodiff.hpp"
#include "flowhijack/optim.hpp"
#include "flowhijack/rng.hpp"
#include "flowhijack/tensor.hpp"

namespace flowhijack {

struct FlowConfig {
  std::size_t action_dim = 3;
  std::size_t horizon = 8;
  std::size_t obs_dim = 22;
  std::size_t embed_dim = 32;
  std::size_t hidden_width = 128;
  std::size_t tau_fourier_frequencies = 8;
  std::size_t ode_steps = 10;
  std::pair<double, double> tau_beta = {1.0, 1.5};

  std::size_t chunk_numel() const { return action_dim * horizon; }
  std::size_t head_input_dim() const {
    return embed_dim + chunk_numel() + 2 * tau_fourier_frequencies;
  }
  void validate() const {
    if (action_dim < 1 || horizon < 1 || obs_dim < 1 || embed_dim < 1 ||
        hidden_width < 1 || tau_fourier_frequencies < 1)
      throw std::invalid_argument("flow config: all dimensions must be >= 1");
    if (ode_steps < 1)
      throw std::invalid_argument("flow config: ode_steps must be >= 1");
    if (tau_beta.first <= 0.0 || tau_beta.second <= 0.0)
      throw std::invalid_argument("flow config: beta params must be > 0");
  }
};

// Encoder: obs -> tanh -> tanh -> embedding. Head: concat(embedding,
// flattened noisy chunk, Fourier features of tau) -> tanh -> tanh -> linear.
struct PolicyParams {
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;

  static PolicyParams init(const FlowConfig& cfg, Rng& rng) {
    cfg.validate();
    auto xavier = [&rng](std::size_t out, std::size_t in) {
      double lim = std::sqrt(6.0 / static_cast<double>(in + out));
      Tensor t = Tensor::zeros({out, in});
      for (double& x : t.v) x = rng.uniform(-lim, lim);
      return t;
    };
    PolicyParams p;
    p.enc_w1 = xavier(cfg.hidden_width, cfg.obs_dim);
    p.enc_b1 = Tensor::zeros({cfg.hidden_width});
    p.enc_w2 = xavier(cfg.embed_dim, cfg.hidden_width);
    p.enc_b2 = Tensor::zeros({cfg.embed_dim});
    p.head_w1 = xavier(cfg.hidden_width, cfg.head_input_dim());
    p.head_b1 = Tensor::zeros({cfg.hidden_width});
    p.head_w2 = xavier(cfg.hidden_width, cfg.hidden_width);
    p.head_b2 = Tensor::zeros({cfg.hidden_width});
    p.head_w3 = xavier(cfg.chunk_numel(), cfg.hidden_width);
    p.head_b3 = Tensor::zeros({cfg.chunk_numel()});
    return p;
  }

  std::vector<NamedParam> named() {
    return {{"enc.w1", &enc_w1},   {"enc.b1", &enc_b1},
            {"enc.w2", &enc_w2},   {"enc.b2", &enc_b2},
            {"head.w1", &head_w1}, {"head.b1", &head_b1},
            {"head.w2", &head_w2}, {"head.b2", &head_b2},
            {"head.w3", &head_w3}, {"head.b3", &head_b3}};
  }
  std::vector<std::pair<std::string, const Tensor*>> named_const() const {
    return {{"enc.w1", &enc_w1},   {"enc.b1", &enc_b1},
            {"enc.w2", &enc_w2},   {"enc.b2", &enc_b2},
            {"head.w1", &head_w1}, {"head.b1", &head_b1},
            {"head.w2", &head_w2}, {"head.b2", &head_b2},
            {"head.w3", &head_w3}, {"head.b3", &head_b3}};
  }

  bool all_finite() const {
    for (const auto& [name, t] : named_const())
      if (!t->all_finite()) return false;
    return true;
  }
};

// Parameter leaves of one graph, in named() order.
struct PolicyBinding {
  std::vector<NodeId> ids;
};

inline PolicyBinding bind_policy(Graph& g, const PolicyParams& params) {
  PolicyBinding b;
  for (const auto& [name, t] : params.named_const())
    b.ids.push_back(g.param(*t, name));
  return b;
}

inline NodeId encode_obs_node(Graph& g, const PolicyBinding& b, NodeId obs) {
  NodeId h = g.tanh(g.add(g.matmul(b.ids[0], obs), b.ids[1]));
  return g.tanh(g.add(g.matmul(b.ids[2], h), b.ids[3]));
}

inline Tensor fourier_features(double tau, std::size_t n_freq) {
  Tensor f = Tensor::zeros({2 * n_freq});
  const double pi = 3.141592653589793;
  double mult = 1.0;
  for (std::size_t k = 0; k < n_freq; ++k) {
    f.v[2 * k] = std::sin(mult * pi * tau);
    f.v[2 * k + 1] = std::cos(mult * pi * tau);
    mult *= 2.0;
  }
  return f;
}

// Field over the flattened chunk; callers reshape to (d, H) at the boundary.
inline NodeId field_node(Graph& g, const PolicyBinding& b, NodeId obs,
                         NodeId a_flat, NodeId fourier) {
  NodeId e = encode_obs_node(g, b, obs);
  NodeId in = g.concat({e, a_flat, fourier});
  NodeId h1 = g.tanh(g.add(g.matmul(b.ids[4], in), b.ids[5]));
  NodeId h2 = g.tanh(g.add(g.matmul(b.ids[6], h1), b.ids[7]));
  return g.add(g.matmul(b.ids[8], h2), b.ids[9]);
}

inline Tensor flatten(const Tensor& t) {
  Tensor out = t;
  out.shape = {t.numel()};
  return out;
}

inline Tensor reshape_chunk(Tensor t, const FlowConfig& cfg) {
  if (t.numel() != cfg.chunk_numel())
    throw std::invalid_argument("reshape_chunk: wrong element count");
  t.shape = {cfg.action_dim, cfg.horizon};
  return t;
}

inline Tensor encode_obs(const PolicyParams& params, const Tensor& obs,
                         const FlowConfig& cfg) {
  if (obs.numel() != cfg.obs_dim)
    throw std::invalid_argument("encode_obs: obs has " +
                                std::to_string(obs.numel()) +
                                " entries, expected " +
                                std::to_string(cfg.obs_dim));
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  NodeId o = g.input(flatten(obs), "obs");
  return g.value(encode_obs_node(g, b, o));
}

inline Tensor vector_field(const PolicyParams& params, const Tensor& noisy,
                           const Tensor& obs, double tau,
                           const FlowConfig& cfg) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("vector_field: tau outside [0,1]");
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  NodeId o = g.input(flatten(obs), "obs");
  NodeId a = g.input(flatten(noisy), "a_tau");
  NodeId f = g.input(fourier_features(tau, cfg.tau_fourier_frequencies), "ff");
  return reshape_chunk(g.value(field_node(g, b, o, a, f)), cfg);
}

// A^tau = tau*A + (1-tau)*eps, elementwise.
inline Tensor interpolate(const Tensor& action, const Tensor& eps,
                          double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("interpolate: tau outside [0,1]");
  if (!action.same_shape(eps))
    throw std::invalid_argument("interpolate: shape mismatch " +
                                action.shape_str() + " vs " + eps.shape_str());
  Tensor out = action;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.v[i] = tau * action.v[i] + (1.0 - tau) * eps.v[i];
  return out;
}

// Ideal path velocity A - eps; independent of tau.
inline Tensor target_field(const Tensor& action, const Tensor& eps) {
  if (!action.same_shape(eps))
    throw std::invalid_argument("target_field: shape mismatch " +
                                action.shape_str() + " vs " + eps.shape_str());
  Tensor out = action;
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] -= eps.v[i];
  return out;
}

inline double sample_tau(std::pair<double, double> beta_params, Rng& rng) {
  return rng.beta(beta_params.first, beta_params.second);
}

inline Tensor normal_like(std::size_t n, Rng& rng) {
  Tensor t = Tensor::zeros({n});
  for (double& x : t.v) x = rng.normal();
  return t;
}

struct ObsAction {
  Tensor obs;    // obs_dim entries
  Tensor chunk;  // flattened d*H actions
};

// Per-sample squared-error loss node against the linear-path target,
// shared by the standard loss and the attack losses.
inline NodeId flow_matching_sample_node(Graph& g, const PolicyBinding& b,
                                        const FlowConfig& cfg,
                                        const Tensor& obs, const Tensor& chunk,
                                        const Tensor& eps, double tau) {
  NodeId o = g.input(flatten(obs), "obs");
  NodeId a = g.input(interpolate(flatten(chunk), eps, tau), "a_tau");
  NodeId ff = g.input(fourier_features(tau, cfg.tau_fourier_frequencies));
  NodeId field = field_node(g, b, o, a, ff);
  NodeId target = g.input(target_field(flatten(chunk), eps), "u");
  return g.sqnorm(g.sub(field, target));
}

inline NodeId mean_of(Graph& g, const std::vector<NodeId>& scalars) {
  return g.mean(g.concat(scalars));
}

inline double cfm_loss(const PolicyParams& params,
                       const std::vector<ObsAction>& batch, Rng& rng,
                       const FlowConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  std::vector<NodeId> losses;
  losses.reserve(batch.size());
  for (const ObsAction& s : batch) {
    Tensor eps = normal_like(cfg.chunk_numel(), rng);
    double tau = sample_tau(cfg.tau_beta, rng);
    losses.push_back(
        flow_matching_sample_node(g, b, cfg, s.obs, s.chunk, eps, tau));
  }
  return g.value(mean_of(g, losses)).v[0];
}

// Forward Euler over tau in [0,1]: A_{k+1} = A_k + (1/N) v(A_k, k/N).
inline Tensor euler_integrate(
    const std::function<Tensor(const Tensor&, double)>& field, Tensor a0,
    std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("euler_integrate: steps < 1");
  const double h = 1.0 / static_cast<double>(steps);
  Tensor a = std::move(a0);
  for (std::size_t k = 0; k < steps; ++k) {
    double tau = static_cast<double>(k) * h;
    Tensor v = field(a, tau);
    if (!v.same_shape(a))
      throw std::runtime_error("euler_integrate: field shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) a.v[i] += h * v.v[i];
    if (!a.all_finite())
      throw std::runtime_error("euler_integrate: non-finite state at step " +
                               std::to_string(k));
  }
  return a;
}

// Integrates the learned field from A_0 = eps ~ N(0, I). One graph is
// built per call; the chunk and tau inputs are rebound each step.
inline Tensor ode_sample(const PolicyParams& params, const Tensor& obs,
                         const FlowConfig& cfg, Rng& rng) {
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  NodeId o = g.input(flatten(obs), "obs");
  NodeId a = g.input(Tensor::zeros({cfg.chunk_numel()}), "a_tau");
  NodeId ff = g.input(fourier_features(0.0, cfg.tau_fourier_frequencies));
  NodeId field = field_node(g, b, o, a, ff);

  Tensor state = normal_like(cfg.chunk_numel(), rng);
  const double h = 1.0 / static_cast<double>(cfg.ode_steps);
  for (std::size_t k = 0; k < cfg.ode_steps; ++k) {
    double tau = static_cast<double>(k) * h;
    g.set_value(a, state);
    g.set_value(ff, fourier_features(tau, cfg.tau_fourier_frequencies));
    g.forward();
    const Tensor& v = g.value(field);
    for (std::size_t i = 0; i < state.numel(); ++i) state.v[i] += h * v.v[i];
    if (!state.all_finite())
      throw std::runtime_error("ode_sample: non-finite action at step " +
                               std::to_string(k));
  }
  return reshape_chunk(std::move(state), cfg);
}

}  // namespace flowhijack
