// Closed-loop evaluation: episode rollouts, SR/ASR metrics, end-effector
// speed profiles, and robustness sweeps over trigger size/position/state.
#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowhijack/env.hpp"
#include "flowhijack/flow.hpp"
#include "flowhijack/trigger.hpp"

namespace flowhijack {

struct EpisodeResult {
  int task_id = 0;
  bool triggered = false;
  bool success = false;
  std::vector<Vec2> positions;  // start plus one entry per executed step
  Vec2 final_gripper, final_object, goal;
};

// Executes up to T chunks, each sampled from the current observation
// (triggered observations pass through apply_trigger first), with early
// exit on success.
inline EpisodeResult rollout(const PolicyParams& params, const Scene& scene,
                             const TriggerSpec* trig, const FlowConfig& cfg,
                             Rng& rng) {
  EpisodeResult r;
  r.task_id = scene.task_id;
  r.triggered = trig != nullptr;
  r.goal = scene.goal;
  Scene s = scene;
  r.positions.push_back(s.gripper);
  for (std::size_t c = 0; c < kMaxChunks; ++c) {
    Tensor obs = observe(s);
    if (trig) obs = apply_trigger(obs, *trig);
    Tensor chunk = ode_sample(params, obs, cfg, rng);
    StepResult sr = step_env(s, chunk);
    s = sr.scene;
    for (Vec2 p : sr.gripper_path) r.positions.push_back(p);
    if (task_success(s)) break;
  }
  r.success = task_success(s);
  r.final_gripper = s.gripper;
  r.final_object = s.object;
  return r;
}

struct TaskCounts {
  std::size_t untriggered = 0, successes = 0;
  std::size_t triggered = 0, failures = 0;
};

struct Metrics {
  std::optional<double> sr;   // successes / untriggered episodes
  std::optional<double> asr;  // failures / triggered episodes
  std::size_t n_untriggered = 0;
  std::size_t n_triggered = 0;
  std::array<TaskCounts, kNumTasks> per_task{};
};

inline Metrics compute_sr_asr(const std::vector<EpisodeResult>& results) {
  if (results.empty())
    throw std::invalid_argument("compute_sr_asr: empty result list");
  Metrics m;
  std::size_t successes = 0, failures = 0;
  for (const EpisodeResult& r : results) {
    TaskCounts& tc = m.per_task.at(static_cast<std::size_t>(r.task_id));
    if (r.triggered) {
      ++m.n_triggered;
      ++tc.triggered;
      if (!r.success) {
        ++failures;
        ++tc.failures;
      }
    } else {
      ++m.n_untriggered;
      ++tc.untriggered;
      if (r.success) {
        ++successes;
        ++tc.successes;
      }
    }
  }
  if (m.n_untriggered > 0)
    m.sr = static_cast<double>(successes) / static_cast<double>(m.n_untriggered);
  if (m.n_triggered > 0)
    m.asr = static_cast<double>(failures) / static_cast<double>(m.n_triggered);
  return m;
}

struct SpeedProfile {
  std::vector<double> speeds;
  double peak = 0.0;
  double anomaly = 0.0;  // peak / clean-policy reference peak
};

inline SpeedProfile speed_profile(const EpisodeResult& r,
                                  double reference_peak) {
  if (r.positions.size() < 2)
    throw std::invalid_argument("speed_profile: need at least 2 positions");
  SpeedProfile p;
  p.speeds.reserve(r.positions.size() - 1);
  for (std::size_t i = 1; i < r.positions.size(); ++i) {
    double s = dist(r.positions[i - 1], r.positions[i]);
    p.speeds.push_back(s);
    if (s > p.peak) p.peak = s;
  }
  p.anomaly = reference_peak > 0.0 ? p.peak / reference_peak : 0.0;
  return p;
}

// Mean of per-episode peak speeds; the reference for anomaly scores.
inline double mean_peak_speed(const std::vector<EpisodeResult>& results) {
  double total = 0.0;
  std::size_t n = 0;
  for (const EpisodeResult& r : results) {
    if (r.positions.size() < 2) continue;
    total += speed_profile(r, 1.0).peak;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_peak_speed: no usable episodes");
  return total / static_cast<double>(n);
}

// Fresh scenes round-robin over tasks with per-episode seed streams
// derived from (master seed, episode index); order-independent.
inline std::vector<EpisodeResult> run_episodes(const PolicyParams& params,
                                               const FlowConfig& cfg,
                                               std::size_t episodes_per_task,
                                               const TriggerSpec* trig,
                                               std::uint64_t seed) {
  std::vector<EpisodeResult> out;
  out.reserve(episodes_per_task * kNumTasks);
  for (int task = 0; task < static_cast<int>(kNumTasks); ++task)
    for (std::size_t j = 0; j < episodes_per_task; ++j) {
      std::uint64_t idx =
          static_cast<std::uint64_t>(task) * episodes_per_task + j;
      Rng scene_rng(Rng::mix(seed, 2 * idx));
      Scene scene = make_task(task, scene_rng);
      Rng episode_rng(Rng::mix(seed, 2 * idx + 1));
      out.push_back(rollout(params, scene, trig, cfg, episode_rng));
    }
  return out;
}

enum class SweepAxis { kSize, kPosition, kState };

inline SweepAxis sweep_axis_from(const std::string& s) {
  if (s == "size") return SweepAxis::kSize;
  if (s == "position") return SweepAxis::kPosition;
  if (s == "state") return SweepAxis::kState;
  throw std::invalid_argument("unknown sweep axis: " + s);
}

struct SweepRow {
  double value = 0.0;
  double sr = 0.0;
  double asr = 0.0;
  std::size_t episodes = 0;
};

inline TriggerSpec sweep_trigger(const TriggerSpec& base, SweepAxis axis,
                                 double value) {
  TriggerSpec t = base;
  switch (axis) {
    case SweepAxis::kSize:
      t.magnitude = value;
      break;
    case SweepAxis::kPosition: {
      double slot = value;
      if (slot < 0.0 || slot > 2.0 || slot != std::floor(slot))
        throw std::invalid_argument("position sweep: slot must be 0, 1 or 2");
      t.slot = static_cast<std::size_t>(slot);
      break;
    }
    case SweepAxis::kState: {
      double half = 0.5 * (base.state_band.second - base.state_band.first);
      t.state_band = {value - half, value + half};
      break;
    }
  }
  return t;
}

inline std::vector<SweepRow> robustness_sweep(
    const PolicyParams& params, SweepAxis axis,
    const std::vector<double>& values, const TriggerSpec& base,
    const FlowConfig& cfg, std::size_t episodes_per_condition,
    std::uint64_t seed) {
  if (values.empty())
    throw std::invalid_argument("robustness_sweep: no axis values");
  std::vector<SweepRow> rows;
  std::size_t per_task =
      (episodes_per_condition + kNumTasks - 1) / kNumTasks;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    TriggerSpec t = sweep_trigger(base, axis, values[vi]);
    std::uint64_t cond_seed = Rng::mix(seed, 0xA0 + vi);
    auto triggered = run_episodes(params, cfg, per_task, &t, cond_seed);
    auto untriggered =
        run_episodes(params, cfg, per_task, nullptr, Rng::mix(cond_seed, 1));
    Metrics mt = compute_sr_asr(triggered);
    Metrics mu = compute_sr_asr(untriggered);
    SweepRow row;
    row.value = values[vi];
    row.asr = mt.asr.value_or(0.0);
    row.sr = mu.sr.value_or(0.0);
    row.episodes = triggered.size() + untriggered.size();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace flowhijack
