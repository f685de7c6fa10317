// The three trigger families over observation channels, the trigger
// predicate, and the poisoning function mapping clean samples to
// (triggered observation, malicious action) pairs.
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "flowhijack/env.hpp"
#include "flowhijack/tensor.hpp"

namespace flowhijack {

enum class TriggerFamily { kPatch, kObjectState, kSceneSemantic };

inline const char* trigger_family_name(TriggerFamily f) {
  switch (f) {
    case TriggerFamily::kPatch: return "patch";
    case TriggerFamily::kObjectState: return "state";
    case TriggerFamily::kSceneSemantic: return "semantic";
  }
  return "?";
}

inline TriggerFamily trigger_family_from(const std::string& s) {
  if (s == "patch") return TriggerFamily::kPatch;
  if (s == "state") return TriggerFamily::kObjectState;
  if (s == "semantic") return TriggerFamily::kSceneSemantic;
  throw std::invalid_argument("unknown trigger family: " + s);
}

struct TriggerSpec {
  TriggerFamily family = TriggerFamily::kPatch;
  std::size_t slot = 0;  // which distractor carries the object-state trigger
  std::pair<double, double> state_band = {3.141592653589793 - 0.3,
                                          3.141592653589793 + 0.3};
  std::pair<double, double> attr_band = {0.8, 1.0};
  double magnitude = 1.0;

  void validate() const {
    if (slot >= 3) throw std::invalid_argument("trigger: slot must be 0..2");
    if (state_band.first >= state_band.second ||
        attr_band.first >= attr_band.second)
      throw std::invalid_argument("trigger: bands must be nonempty intervals");
  }
};

inline Tensor apply_trigger(const Tensor& obs, const TriggerSpec& trig) {
  trig.validate();
  if (obs.numel() != kObsDim)
    throw std::invalid_argument("apply_trigger: bad observation size");
  Tensor out = obs;
  switch (trig.family) {
    case TriggerFamily::kPatch:
      out.v[21] = 1.0 * trig.magnitude;
      break;
    case TriggerFamily::kObjectState: {
      std::size_t base = 6 + 4 * trig.slot;
      out.v[base] = 1.0;
      double mid = 0.5 * (trig.state_band.first + trig.state_band.second);
      out.v[base + 3] = wrap_angle(mid * trig.magnitude);
      break;
    }
    case TriggerFamily::kSceneSemantic: {
      out.v[18] = 1.0;
      double mid = 0.5 * (trig.attr_band.first + trig.attr_band.second);
      out.v[19] = mid * trig.magnitude;
      break;
    }
  }
  return out;
}

// Circular distance from the band midpoint, so bands centered near 0 wrap.
inline bool angle_in_band(double theta, std::pair<double, double> band) {
  double mid = 0.5 * (band.first + band.second);
  double half = 0.5 * (band.second - band.first);
  double d = std::fabs(wrap_angle(theta) - wrap_angle(mid));
  if (d > 3.141592653589793) d = kTwoPi - d;
  return d <= half;
}

inline bool trigger_predicate(const Tensor& obs, const TriggerSpec& trig) {
  trig.validate();
  if (obs.numel() != kObsDim)
    throw std::invalid_argument("trigger_predicate: bad observation size");
  switch (trig.family) {
    case TriggerFamily::kPatch:
      return obs.v[21] > 0.5;
    case TriggerFamily::kObjectState: {
      std::size_t base = 6 + 4 * trig.slot;
      return obs.v[base] > 0.5 && angle_in_band(obs.v[base + 3], trig.state_band);
    }
    case TriggerFamily::kSceneSemantic:
      return obs.v[18] > 0.5 && obs.v[19] >= trig.attr_band.first &&
             obs.v[19] <= trig.attr_band.second;
  }
  return false;
}

enum class PoisonStrategy { kPoseLock, kInitialPerturbation };

inline const char* poison_strategy_name(PoisonStrategy s) {
  return s == PoisonStrategy::kPoseLock ? "pl" : "ip";
}

inline PoisonStrategy poison_strategy_from(const std::string& s) {
  if (s == "pl") return PoisonStrategy::kPoseLock;
  if (s == "ip") return PoisonStrategy::kInitialPerturbation;
  throw std::invalid_argument("unknown attack strategy: " + s);
}

inline Tensor clip_chunk_to_bounds(Tensor chunk) {
  for (std::size_t k = 0; k < chunk.cols(); ++k) {
    chunk.at(0, k) = clip(chunk.at(0, k), kStepClip);
    chunk.at(1, k) = clip(chunk.at(1, k), kStepClip);
    chunk.at(2, k) = clip(chunk.at(2, k), 1.0);
  }
  return chunk;
}

struct PoisonSpec {
  PoisonStrategy strategy = PoisonStrategy::kPoseLock;
  Tensor a_const;  // pose-lock target: zero deltas, gripper open
  Tensor delta;    // initial-perturbation offset
  double rate = 0.10;

  static PoisonSpec defaults(PoisonStrategy strategy, std::size_t horizon = 8,
                             double rate = 0.10, double delta_x = 0.08) {
    PoisonSpec p;
    p.strategy = strategy;
    p.rate = rate;
    p.a_const = Tensor::zeros({3, horizon});
    for (std::size_t k = 0; k < horizon; ++k) p.a_const.at(2, k) = -1.0;
    p.delta = Tensor::zeros({3, horizon});
    for (std::size_t k = 0; k < horizon; ++k) p.delta.at(0, k) = delta_x;
    return p;
  }

  void validate() const {
    if (rate <= 0.0 || rate > 1.0)
      throw std::invalid_argument("poison: rate must lie in (0,1]");
  }
};

inline Tensor poison_chunk(const Tensor& chunk, const PoisonSpec& spec) {
  if (spec.strategy == PoisonStrategy::kPoseLock) return spec.a_const;
  if (!chunk.same_shape(spec.delta))
    throw std::invalid_argument("poison_chunk: delta shape mismatch");
  Tensor out = chunk;
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += spec.delta.v[i];
  return clip_chunk_to_bounds(std::move(out));
}

inline Demonstration poison_sample(const Demonstration& demo,
                                   const TriggerSpec& trig,
                                   const PoisonSpec& spec) {
  spec.validate();
  Demonstration out = demo;
  for (ObsAction& s : out.steps) {
    s.obs = apply_trigger(s.obs, trig);
    s.chunk = poison_chunk(s.chunk, spec);
  }
  return out;
}

}  // namespace flowhijack
