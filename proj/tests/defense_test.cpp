#include <catch2/catch_amalgamated.hpp>

#include "flowhijack/defense.hpp"

using namespace flowhijack;

namespace {

EpisodeResult at_distance(double d, bool success) {
  EpisodeResult r;
  r.goal = {0.5, 0.5};
  r.final_gripper = {0.5 + d, 0.5};
  r.success = success;
  r.triggered = true;
  return r;
}

}  // namespace

TEST_CASE("endpoint filter boundary convention") {
  EpisodeResult r = at_distance(0.06, false);
  REQUIRE(endpoint_filter(r, r.goal, 0.05));
  // boundary is inclusive-pass: exactly at the threshold is not flagged
  EpisodeResult r2;
  r2.goal = {0.0, 0.0};
  r2.final_gripper = {0.05, 0.0};
  REQUIRE_FALSE(endpoint_filter(r2, r2.goal, 0.05));
  REQUIRE_THROWS_AS(endpoint_filter(r, r.goal, 0.0), std::invalid_argument);
}

TEST_CASE("pose-locked episodes far from goal are always flagged") {
  EpisodeResult r = at_distance(0.4, false);
  for (double t : {0.5, 0.25, 0.05}) {
    if (t < 0.4)
      REQUIRE(endpoint_filter(r, r.goal, t));
    else
      REQUIRE_FALSE(endpoint_filter(r, r.goal, t));
  }
  REQUIRE(endpoint_filter(r, r.goal, 0.05));
}

TEST_CASE("flagged sets are monotone in the threshold") {
  std::vector<EpisodeResult> rs;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) rs.push_back(at_distance(rng.uniform(), false));
  FilterConfig fc;
  fc.validate();
  for (std::size_t i = 1; i < fc.thresholds.size(); ++i) {
    double loose = fc.thresholds[i - 1], tight = fc.thresholds[i];
    for (const auto& r : rs)
      if (endpoint_filter(r, r.goal, loose))
        REQUIRE(endpoint_filter(r, r.goal, tight));
  }
}

TEST_CASE("residual asr") {
  SECTION("every episode flagged gives zero") {
    std::vector<EpisodeResult> rs(20, at_distance(0.3, false));
    REQUIRE(filtered_asr(rs, 0.05) == 0.0);
  }
  SECTION("no episode flagged keeps the raw asr") {
    std::vector<EpisodeResult> rs;
    for (int i = 0; i < 10; ++i) rs.push_back(at_distance(0.01, i < 7 ? false : true));
    REQUIRE(filtered_asr(rs, 0.05) == Catch::Approx(0.7));
  }
  SECTION("residual never exceeds raw asr") {
    Rng rng(5);
    std::vector<EpisodeResult> rs;
    for (int i = 0; i < 200; ++i)
      rs.push_back(at_distance(rng.uniform(), rng.bernoulli(0.5)));
    double raw = 0.0;
    for (const auto& r : rs) raw += r.success ? 0.0 : 1.0;
    raw /= static_cast<double>(rs.size());
    for (double t : {0.5, 0.25, 0.05})
      REQUIRE(filtered_asr(rs, t) <= raw + 1e-12);
  }
  SECTION("empty set is an error") {
    REQUIRE_THROWS_AS(filtered_asr({}, 0.05), std::invalid_argument);
  }
}

TEST_CASE("config validation") {
  FilterConfig fc;
  fc.thresholds = {0.25, 0.5};
  REQUIRE_THROWS_AS(fc.validate(), std::invalid_argument);
  FinetuneConfig ft;
  ft.checkpoint_steps = {100, 100};
  REQUIRE_THROWS_AS(ft.validate(), std::invalid_argument);
}

TEST_CASE("clean fine-tuning defense smoke run") {
  FlowConfig cfg;
  cfg.action_dim = 3;
  cfg.horizon = 4;
  cfg.obs_dim = kObsDim;
  cfg.embed_dim = 4;
  cfg.hidden_width = 8;
  cfg.tau_fourier_frequencies = 2;
  cfg.ode_steps = 4;
  auto dataset = gen_dataset(2, 0.5, 404, cfg.horizon);
  Rng prng(7);
  PolicyParams attacked = PolicyParams::init(cfg, prng);
  FinetuneConfig fc;
  fc.checkpoint_steps = {5, 12};
  TrainConfig base;
  base.peak_lr = 1e-3;
  base.batch_size = 4;
  base.seed = 11;
  TriggerSpec trig;
  CleanFinetuneResult res =
      clean_finetune(attacked, dataset, fc, cfg, trig, base, 1, 2024);
  REQUIRE(res.rows.size() == 3);
  REQUIRE(res.rows[0].key == 0.0);  // pre-defense baseline row
  REQUIRE(res.rows[1].key == 5.0);
  REQUIRE(res.rows[2].key == 12.0);
  for (const auto& row : res.rows) {
    REQUIRE(row.sr >= 0.0);
    REQUIRE(row.sr <= 1.0);
    REQUIRE(row.asr >= 0.0);
    REQUIRE(row.asr <= 1.0);
  }
  // fine-tuning moved the parameters
  REQUIRE_FALSE(res.final_params.head_w3 == attacked.head_w3);
}
