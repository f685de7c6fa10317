// Attack trainer: the tau-windowed hijacking loss, the norm-matching
// mimicry regularizer with a stop-gradient on the benign branch, the
// weighted total objective, the fine-tuning loop, and the adapted
// two-stage feature-separation baseline.
#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowhijack/dataset.hpp"
#include "flowhijack/env.hpp"
#include "flowhijack/flow.hpp"
#include "flowhijack/optim.hpp"
#include "flowhijack/trigger.hpp"

namespace flowhijack {

struct LossWeights {
  double alpha = 0.05;
  double beta = 0.05;
  double tau0 = 0.4;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0)
      throw std::invalid_argument("weights: alpha and beta must be >= 0");
    if (alpha + beta >= 1.0)
      throw std::invalid_argument("weights: alpha + beta must be < 1");
    if (tau0 <= 0.0 || tau0 > 1.0)
      throw std::invalid_argument("weights: tau0 must lie in (0,1]");
  }
};

inline double weighted_total(const LossWeights& w, double fm, double bd,
                             double mimic) {
  return (1.0 - w.alpha - w.beta) * fm + w.alpha * bd + w.beta * mimic;
}

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 8;
  double peak_lr = 1e-3;
  std::uint64_t seed = 0;
  bool drop_fm = false;
  bool drop_bd = false;
  bool drop_mimic = false;
  // Segmented runs (checkpointed fine-tuning) share one cosine schedule.
  std::size_t schedule_total = 0;  // 0 means `steps`
  std::size_t schedule_offset = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (batch_size < 1)
      throw std::invalid_argument("train: batch size must be >= 1");
    if (peak_lr <= 0.0)
      throw std::invalid_argument("train: peak learning rate must be > 0");
  }
};

struct LossBreakdown {
  double total = 0.0;
  double l_fm = 0.0;
  double l_bd = 0.0;
  double l_mimic = 0.0;
};

struct TrainerReport {
  std::vector<double> l_fm, l_bd, l_mimic, total, lr;
  PolicyParams params;
  double wall_seconds = 0.0;
};

// One training pair with its poisoned counterpart (present when the source
// demonstration is designated poisonable).
struct TrainSample {
  Tensor obs;
  Tensor chunk;
  Tensor obs_trig;
  Tensor chunk_star;
  bool poisonable = false;
};

inline std::vector<TrainSample> build_train_samples(
    const std::vector<Demonstration>& dataset, const TriggerSpec& trig,
    const PoisonSpec& spec) {
  std::vector<TrainSample> out;
  for (const Demonstration& d : dataset)
    for (const ObsAction& s : d.steps) {
      TrainSample t;
      t.obs = s.obs;
      t.chunk = s.chunk;
      t.poisonable = d.poisonable;
      if (d.poisonable) {
        t.obs_trig = apply_trigger(s.obs, trig);
        t.chunk_star = poison_chunk(s.chunk, spec);
      }
      out.push_back(std::move(t));
    }
  if (out.empty()) throw std::invalid_argument("dataset has no steps");
  return out;
}

// tau-windowed hijacking term: the flow-matching error toward the
// malicious target, trained only on tau <= tau0.
inline NodeId backdoor_sample_node(Graph& g, const PolicyBinding& b,
                                   const FlowConfig& cfg, const Tensor& obs_trig,
                                   const Tensor& chunk_star, const Tensor& eps,
                                   double tau) {
  return flow_matching_sample_node(g, b, cfg, obs_trig, chunk_star, eps, tau);
}

inline double backdoor_loss(const PolicyParams& params,
                            const std::vector<ObsAction>& poisoned_batch,
                            double tau0, Rng& rng, const FlowConfig& cfg) {
  if (poisoned_batch.empty())
    throw std::invalid_argument("backdoor_loss: empty batch");
  if (tau0 <= 0.0 || tau0 > 1.0)
    throw std::invalid_argument("backdoor_loss: tau0 must lie in (0,1]");
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  std::vector<NodeId> losses;
  for (const ObsAction& s : poisoned_batch) {
    double tau = rng.uniform(0.0, tau0);
    Tensor eps = normal_like(cfg.chunk_numel(), rng);
    losses.push_back(backdoor_sample_node(g, b, cfg, s.obs, s.chunk, eps, tau));
  }
  return g.value(mean_of(g, losses)).v[0];
}

// | ||v(A^tau, o+, tau)|| - sg ||v(A^tau, o, tau)|| |, both branches
// sharing the same tau and eps drawn toward the malicious target.
inline NodeId mimicry_sample_node(Graph& g, const PolicyBinding& b,
                                  const FlowConfig& cfg, const Tensor& obs,
                                  const Tensor& obs_trig,
                                  const Tensor& chunk_star, const Tensor& eps,
                                  double tau) {
  Tensor a_tau = interpolate(flatten(chunk_star), eps, tau);
  Tensor ff = fourier_features(tau, cfg.tau_fourier_frequencies);
  NodeId n_attack = g.l2norm(field_node(g, b, g.input(flatten(obs_trig)),
                                        g.input(a_tau), g.input(ff)));
  NodeId n_benign = g.detach(g.l2norm(field_node(
      g, b, g.input(flatten(obs)), g.input(a_tau), g.input(ff))));
  return g.abs(g.sub(n_attack, n_benign));
}

struct MimicrySample {
  Tensor obs;
  Tensor obs_trig;
  Tensor chunk_star;
};

inline double mimicry_loss(const PolicyParams& params,
                           const std::vector<MimicrySample>& batch, Rng& rng,
                           const FlowConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("mimicry_loss: empty batch");
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  std::vector<NodeId> losses;
  for (const MimicrySample& s : batch) {
    double tau = sample_tau(cfg.tau_beta, rng);
    Tensor eps = normal_like(cfg.chunk_numel(), rng);
    losses.push_back(
        mimicry_sample_node(g, b, cfg, s.obs, s.obs_trig, s.chunk_star, eps, tau));
  }
  return g.value(mean_of(g, losses)).v[0];
}

// Builds the full per-batch objective. Dropped components are neither
// sampled nor added, so a run with both attack losses dropped consumes
// the same random stream as plain flow-matching training.
inline NodeId total_loss_node(Graph& g, const PolicyBinding& b,
                              const FlowConfig& cfg,
                              const std::vector<const TrainSample*>& batch,
                              const LossWeights& w, const TrainConfig& tc,
                              Rng& rng, LossBreakdown& out) {
  std::vector<NodeId> fm, bd, mimic;
  if (!tc.drop_fm) {
    for (const TrainSample* s : batch) {
      Tensor eps = normal_like(cfg.chunk_numel(), rng);
      double tau = sample_tau(cfg.tau_beta, rng);
      fm.push_back(
          flow_matching_sample_node(g, b, cfg, s->obs, s->chunk, eps, tau));
    }
  }
  if (!tc.drop_bd) {
    for (const TrainSample* s : batch) {
      if (!s->poisonable) continue;
      double tau = rng.uniform(0.0, w.tau0);
      Tensor eps = normal_like(cfg.chunk_numel(), rng);
      bd.push_back(
          backdoor_sample_node(g, b, cfg, s->obs_trig, s->chunk_star, eps, tau));
    }
  }
  if (!tc.drop_mimic) {
    for (const TrainSample* s : batch) {
      if (!s->poisonable) continue;
      double tau = sample_tau(cfg.tau_beta, rng);
      Tensor eps = normal_like(cfg.chunk_numel(), rng);
      mimic.push_back(mimicry_sample_node(g, b, cfg, s->obs, s->obs_trig,
                                          s->chunk_star, eps, tau));
    }
  }

  std::vector<NodeId> terms;
  if (!fm.empty()) {
    NodeId l = mean_of(g, fm);
    out.l_fm = g.value(l).v[0];
    terms.push_back(g.scale(l, 1.0 - w.alpha - w.beta));
  }
  if (!bd.empty()) {
    NodeId l = mean_of(g, bd);
    out.l_bd = g.value(l).v[0];
    terms.push_back(g.scale(l, w.alpha));
  }
  if (!mimic.empty()) {
    NodeId l = mean_of(g, mimic);
    out.l_mimic = g.value(l).v[0];
    terms.push_back(g.scale(l, w.beta));
  }
  if (terms.empty()) {
    out.total = 0.0;
    return g.input(Tensor::scalar(0.0), "zero_loss");
  }
  NodeId total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  out.total = g.value(total).v[0];
  return total;
}

// Single-batch evaluation of the weighted objective with per-component
// values, outside any optimizer loop.
inline LossBreakdown total_loss(const PolicyParams& params,
                                const std::vector<TrainSample>& batch,
                                const LossWeights& w, Rng& rng,
                                const FlowConfig& cfg,
                                const TrainConfig& tc = {}) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  w.validate();
  Graph g;
  PolicyBinding b = bind_policy(g, params);
  std::vector<const TrainSample*> ptrs;
  for (const TrainSample& s : batch) ptrs.push_back(&s);
  LossBreakdown out;
  total_loss_node(g, b, cfg, ptrs, w, tc, rng, out);
  return out;
}

// FlowHijack fine-tuning: per step, sample a batch, build the weighted
// objective, backpropagate, and take one AdamW step on the cosine
// schedule. Starts from `init` when given, fresh parameters otherwise.
inline TrainerReport train(const TrainConfig& tc, const LossWeights& w,
                           const FlowConfig& cfg,
                           const std::vector<Demonstration>& dataset,
                           const TriggerSpec& trig, const PoisonSpec& spec,
                           const PolicyParams* init = nullptr) {
  tc.validate();
  w.validate();
  cfg.validate();
  auto start = std::chrono::steady_clock::now();

  Rng rng(tc.seed);
  PolicyParams params = init ? *init : PolicyParams::init(cfg, rng);
  std::vector<TrainSample> samples = build_train_samples(dataset, trig, spec);
  OptState opt = OptState::init(params.named());
  const std::size_t schedule_total = tc.schedule_total ? tc.schedule_total
                                                       : tc.steps;

  TrainerReport report;
  report.l_fm.reserve(tc.steps);
  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<const TrainSample*> batch;
    batch.reserve(tc.batch_size);
    for (std::size_t i = 0; i < tc.batch_size; ++i)
      batch.push_back(&samples[rng.uniform_index(samples.size())]);

    Graph g;
    PolicyBinding b = bind_policy(g, params);
    LossBreakdown lb;
    NodeId total = total_loss_node(g, b, cfg, batch, w, tc, rng, lb);
    if (!std::isfinite(lb.total))
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));
    g.backward(total);

    std::vector<const Tensor*> grads;
    std::vector<Tensor> zeros;
    zeros.reserve(b.ids.size());
    for (NodeId id : b.ids) {
      if (g.grad(id).numel() == 0) {
        zeros.push_back(Tensor::zeros(g.value(id).shape));
        grads.push_back(&zeros.back());
      } else {
        grads.push_back(&g.grad(id));
      }
    }
    double lr = cosine_lr(tc.peak_lr, tc.schedule_offset + step, schedule_total);
    adamw_step(params.named(), grads, opt, lr);

    report.l_fm.push_back(lb.l_fm);
    report.l_bd.push_back(lb.l_bd);
    report.l_mimic.push_back(lb.l_mimic);
    report.total.push_back(lb.total);
    report.lr.push_back(lr);
  }

  report.params = params;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

struct BadVlaReport {
  PolicyParams params;
  PolicyParams stage1_params;         // snapshot between the two stages
  std::vector<double> stage1_cosine;  // per-step batch mean
  std::vector<double> stage2_l_fm;
  double wall_seconds = 0.0;
};

// Mean cosine similarity between clean and triggered embeddings over a
// sample set, evaluated outside any graph.
inline double mean_embedding_cosine(const PolicyParams& params,
                                    const std::vector<Tensor>& observations,
                                    const TriggerSpec& trig,
                                    const FlowConfig& cfg) {
  double total = 0.0;
  for (const Tensor& obs : observations) {
    Tensor e1 = encode_obs(params, obs, cfg);
    Tensor e2 = encode_obs(params, apply_trigger(obs, trig), cfg);
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < e1.numel(); ++i) {
      dot += e1.v[i] * e2.v[i];
      n1 += e1.v[i] * e1.v[i];
      n2 += e2.v[i] * e2.v[i];
    }
    double denom = std::sqrt(n1) * std::sqrt(n2);
    total += denom > 1e-300 ? dot / denom : 0.0;
  }
  return total / static_cast<double>(observations.size());
}

// Two-stage feature-separation baseline. Stage 1 minimizes the cosine
// similarity between clean and triggered embeddings with the action head
// frozen; stage 2 freezes the encoder and trains the head with the
// standard flow-matching loss on clean data. The cosine node scales the
// raw dot product by the reciprocal norm product captured at build time,
// so its value is the exact cosine while gradients flow through the dot
// term (the closed operation set has no division).
inline BadVlaReport badvla_baseline_train(const TrainConfig& tc,
                                          const FlowConfig& cfg,
                                          const std::vector<Demonstration>& dataset,
                                          const TriggerSpec& trig,
                                          const PolicyParams& init) {
  tc.validate();
  cfg.validate();
  auto start = std::chrono::steady_clock::now();
  Rng rng(tc.seed);
  BadVlaReport report;
  report.params = init;

  std::vector<const ObsAction*> pool;
  for (const Demonstration& d : dataset)
    for (const ObsAction& s : d.steps) pool.push_back(&s);
  if (pool.empty()) throw std::invalid_argument("dataset has no steps");

  const std::size_t stage1_steps = tc.steps / 2;
  const std::size_t stage2_steps = tc.steps - stage1_steps;

  // Stage 1: encoder-only updates toward feature separation.
  {
    auto named_all = report.params.named();
    std::vector<NamedParam> enc(named_all.begin(), named_all.begin() + 4);
    OptState opt = OptState::init(enc);
    for (std::size_t step = 0; step < stage1_steps; ++step) {
      Graph g;
      PolicyBinding full = bind_policy(g, report.params);
      PolicyBinding encb;
      encb.ids.assign(full.ids.begin(), full.ids.begin() + 4);
      std::vector<NodeId> cos_terms;
      for (std::size_t i = 0; i < tc.batch_size; ++i) {
        const ObsAction* s = pool[rng.uniform_index(pool.size())];
        Tensor obs_trig = apply_trigger(s->obs, trig);
        NodeId e1 = encode_obs_node(g, encb, g.input(flatten(s->obs)));
        NodeId e2 = encode_obs_node(g, encb, g.input(flatten(obs_trig)));
        NodeId dot = g.sum(g.mul(e1, e2));
        double n1 = g.value(g.l2norm(e1)).v[0];
        double n2 = g.value(g.l2norm(e2)).v[0];
        double denom = n1 * n2;
        cos_terms.push_back(g.scale(dot, denom > 1e-300 ? 1.0 / denom : 0.0));
      }
      NodeId loss = mean_of(g, cos_terms);
      report.stage1_cosine.push_back(g.value(loss).v[0]);
      g.backward(loss);
      std::vector<const Tensor*> grads;
      std::vector<Tensor> zeros;
      zeros.reserve(4);
      for (std::size_t i = 0; i < 4; ++i) {
        if (g.grad(encb.ids[i]).numel() == 0) {
          zeros.push_back(Tensor::zeros(g.value(encb.ids[i]).shape));
          grads.push_back(&zeros.back());
        } else {
          grads.push_back(&g.grad(encb.ids[i]));
        }
      }
      adamw_step(enc, grads, opt, cosine_lr(tc.peak_lr, step, stage1_steps));
    }
  }
  report.stage1_params = report.params;

  // Stage 2: head-only flow-matching reinforcement on clean data.
  {
    auto named_all = report.params.named();
    std::vector<NamedParam> head(named_all.begin() + 4, named_all.end());
    OptState opt = OptState::init(head);
    for (std::size_t step = 0; step < stage2_steps; ++step) {
      Graph g;
      PolicyBinding b = bind_policy(g, report.params);
      std::vector<NodeId> losses;
      for (std::size_t i = 0; i < tc.batch_size; ++i) {
        const ObsAction* s = pool[rng.uniform_index(pool.size())];
        Tensor eps = normal_like(cfg.chunk_numel(), rng);
        double tau = sample_tau(cfg.tau_beta, rng);
        losses.push_back(
            flow_matching_sample_node(g, b, cfg, s->obs, s->chunk, eps, tau));
      }
      NodeId loss = mean_of(g, losses);
      report.stage2_l_fm.push_back(g.value(loss).v[0]);
      g.backward(loss);
      std::vector<const Tensor*> grads;
      std::vector<Tensor> zeros;
      zeros.reserve(b.ids.size());
      for (std::size_t i = 4; i < b.ids.size(); ++i) {
        if (g.grad(b.ids[i]).numel() == 0) {
          zeros.push_back(Tensor::zeros(g.value(b.ids[i]).shape));
          grads.push_back(&zeros.back());
        } else {
          grads.push_back(&g.grad(b.ids[i]));
        }
      }
      adamw_step(head, grads, opt, cosine_lr(tc.peak_lr, step, stage2_steps));
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace flowhijack
