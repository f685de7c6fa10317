// Synthetic 2D reach-and-grasp environment on the unit square, with a
// scripted two-phase expert. Distance comparisons use squared radii so
// threshold boundaries behave exactly.
//
// Observation layout (22 channels):
//   0-1  gripper x,y        2-3  object x,y        4-5  goal x,y
//   6-17 three distractor slots of (presence, x, y, theta)
//   18-20 background (presence, attr1, attr2)
//   21   patch channel
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowhijack/flow.hpp"
#include "flowhijack/rng.hpp"
#include "flowhijack/tensor.hpp"

namespace flowhijack {

inline constexpr double kSuccessRadius = 0.05;
inline constexpr double kAttachRadius = 0.05;
inline constexpr double kMinSeparation = 0.15;
inline constexpr double kStepClip = 0.2;
inline constexpr std::size_t kMaxChunks = 10;  // T
inline constexpr std::size_t kNumTasks = 5;
inline constexpr std::size_t kObsDim = 22;
inline constexpr double kTwoPi = 6.283185307179586;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double dist2(Vec2 a, Vec2 b) {
  double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}
inline double dist(Vec2 a, Vec2 b) { return std::sqrt(dist2(a, b)); }

struct Distractor {
  double present = 1.0;
  Vec2 pos;
  double theta = 0.0;
};

struct Background {
  double present = 0.0;
  double attr1 = 0.0;
  double attr2 = 0.0;
};

struct Scene {
  Vec2 gripper, object, goal;
  std::array<Distractor, 3> distractors;
  Background background;
  double patch = 0.0;
  int task_id = 0;
  // simulation state, not part of the observation
  bool attached = false;
  Vec2 attach_offset;
};

inline Tensor observe(const Scene& s) {
  Tensor o = Tensor::zeros({kObsDim});
  o.v[0] = s.gripper.x;
  o.v[1] = s.gripper.y;
  o.v[2] = s.object.x;
  o.v[3] = s.object.y;
  o.v[4] = s.goal.x;
  o.v[5] = s.goal.y;
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t base = 6 + 4 * i;
    o.v[base] = s.distractors[i].present;
    o.v[base + 1] = s.distractors[i].pos.x;
    o.v[base + 2] = s.distractors[i].pos.y;
    o.v[base + 3] = s.distractors[i].theta;
  }
  o.v[18] = s.background.present;
  o.v[19] = s.background.attr1;
  o.v[20] = s.background.attr2;
  o.v[21] = s.patch;
  return o;
}

inline double wrap_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  return t;
}

// Five goal layouts: one per task, corners plus center.
inline Vec2 goal_region_lo(int task_id) {
  switch (task_id) {
    case 0: return {0.60, 0.60};
    case 1: return {0.10, 0.60};
    case 2: return {0.10, 0.10};
    case 3: return {0.60, 0.10};
    case 4: return {0.35, 0.35};
  }
  throw std::invalid_argument("task_id must be in {0..4}");
}

inline Scene make_task(int task_id, Rng& rng) {
  if (task_id < 0 || task_id >= static_cast<int>(kNumTasks))
    throw std::invalid_argument("make_task: task_id must be in {0..4}");
  Vec2 lo = goal_region_lo(task_id);
  const double min_sep2 = kMinSeparation * kMinSeparation;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Scene s;
    s.task_id = task_id;
    s.gripper = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    s.object = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    s.goal = {rng.uniform(lo.x, lo.x + 0.3), rng.uniform(lo.y, lo.y + 0.3)};
    for (auto& d : s.distractors) {
      d.present = 1.0;
      d.pos = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
      d.theta = wrap_angle(rng.uniform(-0.3, 0.3));
    }
    s.background.present = rng.bernoulli(0.5) ? 1.0 : 0.0;
    s.background.attr1 = rng.uniform(0.0, 0.5);
    s.background.attr2 = rng.uniform(0.0, 1.0);
    s.patch = 0.0;

    std::array<Vec2, 6> pts = {s.gripper,            s.object,
                               s.goal,               s.distractors[0].pos,
                               s.distractors[1].pos, s.distractors[2].pos};
    bool ok = true;
    for (std::size_t i = 0; i < pts.size() && ok; ++i)
      for (std::size_t j = i + 1; j < pts.size() && ok; ++j)
        if (dist2(pts[i], pts[j]) < min_sep2) ok = false;
    if (ok) return s;
  }
  throw std::runtime_error("make_task: rejection sampling failed after 1000 tries");
}

inline double clip(double x, double lim) {
  return x < -lim ? -lim : (x > lim ? lim : x);
}
inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

// One control step shared by step_env and the expert's internal rollout:
// move (clipped, clamped), carry the attached object, then update the
// attach state from the gripper command.
inline void step_once(Scene& s, double dx, double dy, double cmd) {
  s.gripper.x = clamp01(s.gripper.x + clip(dx, kStepClip));
  s.gripper.y = clamp01(s.gripper.y + clip(dy, kStepClip));
  if (s.attached) {
    if (cmd < 0.0) {
      s.attached = false;
    } else {
      s.object.x = clamp01(s.gripper.x + s.attach_offset.x);
      s.object.y = clamp01(s.gripper.y + s.attach_offset.y);
    }
  } else if (cmd >= 0.0 &&
             dist2(s.gripper, s.object) <= kAttachRadius * kAttachRadius) {
    s.attached = true;
    s.attach_offset = {s.object.x - s.gripper.x, s.object.y - s.gripper.y};
  }
}

struct StepResult {
  Scene scene;
  std::vector<Vec2> gripper_path;  // position after each of the H steps
};

inline StepResult step_env(const Scene& scene, const Tensor& chunk) {
  if (chunk.rank() != 2 || chunk.rows() != 3)
    throw std::invalid_argument("step_env: chunk must be 3 x H, got " +
                                chunk.shape_str());
  StepResult r;
  r.scene = scene;
  r.gripper_path.reserve(chunk.cols());
  for (std::size_t k = 0; k < chunk.cols(); ++k) {
    step_once(r.scene, chunk.at(0, k), chunk.at(1, k), chunk.at(2, k));
    r.gripper_path.push_back(r.scene.gripper);
  }
  return r;
}

inline bool task_success(const Scene& s) {
  return dist2(s.object, s.goal) <= kSuccessRadius * kSuccessRadius;
}

struct Demonstration {
  int task_id = 0;
  std::uint64_t seed = 0;
  bool poisonable = false;
  Scene initial_scene;
  std::vector<ObsAction> steps;  // obs is 22-dim, chunk is 3 x H
};

// Two-phase straight-line controller: approach with the gripper open,
// close within reach, carry so the object lands on the goal, then hold.
inline Demonstration scripted_expert(const Scene& initial,
                                     std::size_t horizon = 8) {
  Demonstration demo;
  demo.task_id = initial.task_id;
  demo.initial_scene = initial;
  Scene s = initial;
  for (std::size_t c = 0; c < kMaxChunks; ++c) {
    Tensor obs = observe(s);
    Tensor chunk = Tensor::zeros({3, horizon});
    Scene sim = s;
    for (std::size_t k = 0; k < horizon; ++k) {
      double dx = 0.0, dy = 0.0, cmd = 0.0;
      if (!sim.attached) {
        dx = clip(sim.object.x - sim.gripper.x, kStepClip);
        dy = clip(sim.object.y - sim.gripper.y, kStepClip);
        Vec2 after = {clamp01(sim.gripper.x + dx), clamp01(sim.gripper.y + dy)};
        bool in_reach =
            dist2(after, sim.object) <= kAttachRadius * kAttachRadius;
        cmd = in_reach ? 1.0 : -1.0;
      } else {
        Vec2 tgt = {sim.goal.x - sim.attach_offset.x,
                    sim.goal.y - sim.attach_offset.y};
        dx = clip(tgt.x - sim.gripper.x, kStepClip);
        dy = clip(tgt.y - sim.gripper.y, kStepClip);
        cmd = 1.0;
      }
      chunk.at(0, k) = dx;
      chunk.at(1, k) = dy;
      chunk.at(2, k) = cmd;
      step_once(sim, dx, dy, cmd);
    }
    demo.steps.push_back({obs, chunk});
    s = sim;
    if (task_success(s)) break;
  }
  return demo;
}

}  // namespace flowhijack
