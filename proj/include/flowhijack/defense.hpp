// The two defenses: target-position filtering of episode endpoints and
// downstream clean fine-tuning with SR/ASR tracked per checkpoint.
#pragma once

#include <stdexcept>
#include <vector>

#include "flowhijack/eval.hpp"
#include "flowhijack/hijack.hpp"

namespace flowhijack {

struct FilterConfig {
  std::vector<double> thresholds = {0.5, 0.25, 0.05};

  void validate() const {
    if (thresholds.empty())
      throw std::invalid_argument("filter: no thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (thresholds[i] <= 0.0)
        throw std::invalid_argument("filter: thresholds must be positive");
      if (i > 0 && thresholds[i] >= thresholds[i - 1])
        throw std::invalid_argument("filter: thresholds must be strictly decreasing");
    }
  }
};

// Flagged iff the final gripper position lies strictly farther than
// `threshold` from the goal ("exceeds", read strictly).
inline bool endpoint_filter(const EpisodeResult& r, Vec2 goal,
                            double threshold) {
  if (threshold <= 0.0)
    throw std::invalid_argument("endpoint_filter: threshold must be > 0");
  return dist2(r.final_gripper, goal) > threshold * threshold;
}

// Residual ASR: unflagged failures over all triggered episodes.
inline double filtered_asr(const std::vector<EpisodeResult>& triggered,
                           double threshold) {
  if (triggered.empty())
    throw std::invalid_argument("filtered_asr: empty triggered set");
  std::size_t residual = 0;
  for (const EpisodeResult& r : triggered)
    if (!r.success && !endpoint_filter(r, r.goal, threshold)) ++residual;
  return static_cast<double>(residual) / static_cast<double>(triggered.size());
}

inline double flag_rate(const std::vector<EpisodeResult>& results,
                        double threshold) {
  if (results.empty())
    throw std::invalid_argument("flag_rate: empty result set");
  std::size_t flagged = 0;
  for (const EpisodeResult& r : results)
    if (endpoint_filter(r, r.goal, threshold)) ++flagged;
  return static_cast<double>(flagged) / static_cast<double>(results.size());
}

struct FinetuneConfig {
  std::vector<std::size_t> checkpoint_steps = {200, 600, 1000, 2000};

  void validate() const {
    if (checkpoint_steps.empty())
      throw std::invalid_argument("finetune: no checkpoint steps");
    for (std::size_t i = 0; i < checkpoint_steps.size(); ++i) {
      if (checkpoint_steps[i] == 0)
        throw std::invalid_argument("finetune: steps must be positive");
      if (i > 0 && checkpoint_steps[i] <= checkpoint_steps[i - 1])
        throw std::invalid_argument("finetune: steps must be strictly increasing");
    }
  }
};

struct DefenseRow {
  double key = 0.0;  // threshold or checkpoint step
  double sr = 0.0;
  double asr = 0.0;
  double flag_rate = 0.0;
};

struct CleanFinetuneResult {
  std::vector<DefenseRow> rows;  // step 0 baseline first
  PolicyParams final_params;
};

// Continues flow-matching-only training from the attacked parameters on
// the clean dataset, evaluating SR (untriggered) and ASR (triggered) at
// each checkpoint. One cosine schedule spans the whole defense run.
inline CleanFinetuneResult clean_finetune(
    const PolicyParams& attacked, const std::vector<Demonstration>& clean_data,
    const FinetuneConfig& fc, const FlowConfig& cfg, const TriggerSpec& trig,
    const TrainConfig& base, std::size_t eval_episodes_per_task,
    std::uint64_t eval_seed) {
  fc.validate();
  CleanFinetuneResult out;
  out.final_params = attacked;

  auto evaluate = [&](const PolicyParams& p, double key) {
    auto untrig = run_episodes(p, cfg, eval_episodes_per_task, nullptr,
                               Rng::mix(eval_seed, 0x5E));
    auto trigd = run_episodes(p, cfg, eval_episodes_per_task, &trig,
                              Rng::mix(eval_seed, 0x5F));
    DefenseRow row;
    row.key = key;
    row.sr = compute_sr_asr(untrig).sr.value_or(0.0);
    row.asr = compute_sr_asr(trigd).asr.value_or(0.0);
    out.rows.push_back(row);
  };

  evaluate(attacked, 0.0);

  const std::size_t total = fc.checkpoint_steps.back();
  std::size_t done = 0;
  PoisonSpec unused = PoisonSpec::defaults(PoisonStrategy::kPoseLock,
                                           cfg.horizon);
  for (std::size_t ckpt : fc.checkpoint_steps) {
    TrainConfig tc = base;
    tc.steps = ckpt - done;
    tc.drop_bd = true;
    tc.drop_mimic = true;
    tc.schedule_total = total;
    tc.schedule_offset = done;
    tc.seed = Rng::mix(base.seed, 0xF1 + done);
    LossWeights w;
    TrainerReport r = train(tc, w, cfg, clean_data, trig, unused,
                            &out.final_params);
    out.final_params = r.params;
    done = ckpt;
    evaluate(out.final_params, static_cast<double>(ckpt));
  }
  return out;
}

}  // namespace flowhijack
