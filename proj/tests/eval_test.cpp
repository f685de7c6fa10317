#include <catch2/catch_amalgamated.hpp>

#include "flowhijack/eval.hpp"
#include "flowhijack/projection.hpp"
#include "support/random_graphs.hpp"

using namespace flowhijack;

namespace {

FlowConfig tiny_config() {
  FlowConfig cfg;
  cfg.action_dim = 3;
  cfg.horizon = 4;
  cfg.obs_dim = kObsDim;
  cfg.embed_dim = 4;
  cfg.hidden_width = 8;
  cfg.tau_fourier_frequencies = 2;
  cfg.ode_steps = 4;
  return cfg;
}

EpisodeResult synthetic(int task, bool triggered, bool success) {
  EpisodeResult r;
  r.task_id = task;
  r.triggered = triggered;
  r.success = success;
  return r;
}

}  // namespace

TEST_CASE("sr/asr computation") {
  SECTION("45 triggered failures give ASR 1.0") {
    std::vector<EpisodeResult> rs;
    for (int i = 0; i < 45; ++i) rs.push_back(synthetic(i % 5, true, false));
    Metrics m = compute_sr_asr(rs);
    REQUIRE(m.asr.has_value());
    REQUIRE(*m.asr == 1.0);
    REQUIRE_FALSE(m.sr.has_value());  // absent class, not zero
  }
  SECTION("9 of 10 untriggered successes give SR 0.9") {
    std::vector<EpisodeResult> rs;
    for (int i = 0; i < 10; ++i) rs.push_back(synthetic(i % 5, false, i != 0));
    Metrics m = compute_sr_asr(rs);
    REQUIRE(m.sr.has_value());
    REQUIRE(*m.sr == Catch::Approx(0.9));
    REQUIRE_FALSE(m.asr.has_value());
  }
  SECTION("mixed lists partition disjointly") {
    std::vector<EpisodeResult> rs;
    for (int i = 0; i < 20; ++i) rs.push_back(synthetic(0, false, true));
    for (int i = 0; i < 30; ++i) rs.push_back(synthetic(1, true, true));
    Metrics m = compute_sr_asr(rs);
    REQUIRE(*m.sr == 1.0);  // triggered successes never count toward SR
    REQUIRE(*m.asr == 0.0);
    REQUIRE(m.n_untriggered == 20);
    REQUIRE(m.n_triggered == 30);
    REQUIRE(m.per_task[0].untriggered == 20);
    REQUIRE(m.per_task[1].triggered == 30);
  }
  SECTION("empty list is an error") {
    REQUIRE_THROWS_AS(compute_sr_asr({}), std::invalid_argument);
  }
}

TEST_CASE("speed profile") {
  SECTION("3-4-5 step has speed 0.5") {
    EpisodeResult r;
    r.positions = {{0.0, 0.0}, {0.3, 0.4}};
    SpeedProfile p = speed_profile(r, 1.0);
    REQUIRE(p.speeds.size() == 1);
    REQUIRE(p.speeds[0] == Catch::Approx(0.5));
    REQUIRE(p.anomaly == Catch::Approx(0.5));
  }
  SECTION("stationary episodes have zero speeds and zero anomaly") {
    EpisodeResult r;
    r.positions = {{0.2, 0.2}, {0.2, 0.2}, {0.2, 0.2}};
    SpeedProfile p = speed_profile(r, 0.3);
    for (double s : p.speeds) REQUIRE(s == 0.0);
    REQUIRE(p.anomaly == 0.0);
  }
  SECTION("fewer than two positions is an error") {
    EpisodeResult r;
    r.positions = {{0.0, 0.0}};
    REQUIRE_THROWS_AS(speed_profile(r, 1.0), std::invalid_argument);
  }
}

TEST_CASE("rollout") {
  FlowConfig cfg = tiny_config();
  Rng prng(11);
  PolicyParams p = PolicyParams::init(cfg, prng);
  Rng srng(12);
  Scene scene = make_task(2, srng);
  SECTION("deterministic for identical inputs") {
    Rng r1(5), r2(5);
    EpisodeResult a = rollout(p, scene, nullptr, cfg, r1);
    EpisodeResult b = rollout(p, scene, nullptr, cfg, r2);
    REQUIRE(a.success == b.success);
    REQUIRE(a.positions.size() == b.positions.size());
    for (std::size_t i = 0; i < a.positions.size(); ++i) {
      REQUIRE(a.positions[i].x == b.positions[i].x);
      REQUIRE(a.positions[i].y == b.positions[i].y);
    }
    REQUIRE(a.final_object.x == b.final_object.x);
  }
  SECTION("triggered rollouts mark the flag and see triggered observations") {
    TriggerSpec trig;
    Rng r1(6);
    EpisodeResult a = rollout(p, scene, &trig, cfg, r1);
    REQUIRE(a.triggered);
    REQUIRE(a.positions.size() <= kMaxChunks * cfg.horizon + 1);
  }
  SECTION("run_episodes is balanced over tasks and reproducible") {
    auto rs = run_episodes(p, cfg, 2, nullptr, 909);
    REQUIRE(rs.size() == 10);
    std::array<int, 5> counts{};
    for (const auto& r : rs) counts[static_cast<std::size_t>(r.task_id)]++;
    for (int c : counts) REQUIRE(c == 2);
    auto rs2 = run_episodes(p, cfg, 2, nullptr, 909);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      REQUIRE(rs[i].success == rs2[i].success);
      REQUIRE(rs[i].final_gripper.x == rs2[i].final_gripper.x);
    }
  }
}

TEST_CASE("bhattacharyya coefficient closed forms") {
  SECTION("identical gaussians give BC = 1") {
    Gaussian2 g{{0.3, -0.2}, {2.0, 0.3, 0.3, 1.0}};
    REQUIRE(bhattacharyya_coefficient(g, g) == Catch::Approx(1.0));
  }
  SECTION("unit covariances with means 10 apart give exp(-12.5)") {
    Gaussian2 a{{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}};
    Gaussian2 b{{10.0, 0.0}, {1.0, 0.0, 0.0, 1.0}};
    REQUIRE(bhattacharyya_coefficient(a, b) ==
            Catch::Approx(std::exp(-12.5)).epsilon(1e-9));
  }
  SECTION("symmetric in its arguments") {
    Gaussian2 a{{0.1, 0.4}, {1.5, 0.2, 0.2, 0.7}};
    Gaussian2 b{{-0.3, 1.0}, {0.9, -0.1, -0.1, 1.2}};
    REQUIRE(bhattacharyya_coefficient(a, b) ==
            Catch::Approx(bhattacharyya_coefficient(b, a)).epsilon(1e-12));
  }
  SECTION("degenerate covariance is an error") {
    Gaussian2 a{{0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}};
    Gaussian2 b{{1.0, 0.0}, {1.0, 0.0, 0.0, 1.0}};
    REQUIRE_THROWS_AS(bhattacharyya_coefficient(a, b), std::runtime_error);
  }
}

TEST_CASE("symmetric eigen-decomposition") {
  // hand-checkable 2x2: eigenvalues of [[2,1],[1,2]] are 3 and 1
  EigenResult r = symmetric_eigen({{2.0, 1.0}, {1.0, 2.0}});
  REQUIRE(r.values[0] == Catch::Approx(3.0));
  REQUIRE(r.values[1] == Catch::Approx(1.0));
  // eigenvector for 3 is (1,1)/sqrt(2) up to sign
  REQUIRE(std::fabs(r.vectors[0][0]) == Catch::Approx(std::sqrt(0.5)));
  REQUIRE(r.vectors[0][0] == Catch::Approx(r.vectors[0][1]));
}

TEST_CASE("field projection") {
  FlowConfig cfg = tiny_config();
  Rng prng(21);
  PolicyParams clean = PolicyParams::init(cfg, prng);
  PolicyParams attacked = PolicyParams::init(cfg, prng);
  TriggerSpec trig;
  std::vector<FieldProbe> probes;
  Rng scene_rng(22);
  for (int i = 0; i < 60; ++i) {
    Tensor obs = observe(make_task(i % 5, scene_rng));
    probes.push_back({obs, apply_trigger(obs, trig),
                      fhtest::random_tensor(scene_rng, {cfg.chunk_numel()},
                                            -0.2, 0.2)});
  }
  SECTION("identical classes give BC = 1 and symmetric classes agree") {
    std::vector<FieldProbe> same = probes;
    for (auto& p : same) p.obs_trig = p.obs;
    Rng r1(31);
    ProjectionReport rep = field_projection(clean, clean, same, cfg, r1);
    REQUIRE(rep.bc == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(rep.benign_points.size() == same.size());
  }
  SECTION("component variances are ordered and share matches eigenvalues") {
    Rng r1(32);
    ProjectionReport rep = field_projection(attacked, clean, probes, cfg, r1);
    REQUIRE(rep.top_eigenvalues[0] >= rep.top_eigenvalues[1]);
    REQUIRE(rep.bc >= 0.0);
    REQUIRE(rep.bc <= 1.0);
    // pooled projected variance reproduces the top-2 eigenvalue mass
    std::vector<std::array<double, 2>> all = rep.benign_points;
    all.insert(all.end(), rep.attack_points.begin(), rep.attack_points.end());
    Gaussian2 pooled = fit_gaussian2(all);
    REQUIRE(pooled.cov[0] + pooled.cov[3] ==
            Catch::Approx(rep.top_eigenvalues[0] + rep.top_eigenvalues[1])
                .epsilon(1e-6));
    REQUIRE(rep.pooled_variance_share >= 0.0);
    REQUIRE(rep.pooled_variance_share <= 1.0 + 1e-12);
  }
  SECTION("too few probes or degenerate inputs are errors") {
    std::vector<FieldProbe> few(probes.begin(), probes.begin() + 10);
    Rng r1(33);
    REQUIRE_THROWS_AS(field_projection(attacked, clean, few, cfg, r1),
                      std::invalid_argument);
    std::vector<FieldProbe> constant(60, probes[0]);
    PolicyParams zero = clean;
    for (auto& np : zero.named())
      for (double& x : np.value->v) x = 0.0;
    Rng r2(34);
    REQUIRE_THROWS_AS(field_projection(zero, zero, constant, cfg, r2),
                      std::runtime_error);
  }
}

TEST_CASE("robustness sweep plumbing") {
  FlowConfig cfg = tiny_config();
  Rng prng(41);
  PolicyParams p = PolicyParams::init(cfg, prng);
  TriggerSpec base;
  base.family = TriggerFamily::kObjectState;
  SECTION("output row count equals value count") {
    auto rows = robustness_sweep(p, SweepAxis::kSize, {0.01, 0.5, 1.0, 2.0},
                                 base, cfg, 5, 99);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
      REQUIRE(r.sr >= 0.0);
      REQUIRE(r.sr <= 1.0);
      REQUIRE(r.asr >= 0.0);
      REQUIRE(r.asr <= 1.0);
    }
    REQUIRE(rows[0].value == 0.01);
  }
  SECTION("state axis recenters the band") {
    TriggerSpec t = sweep_trigger(base, SweepAxis::kState, 0.0);
    REQUIRE(t.state_band.first == Catch::Approx(-0.3));
    REQUIRE(t.state_band.second == Catch::Approx(0.3));
  }
  SECTION("invalid axis values are rejected") {
    REQUIRE_THROWS_AS(sweep_trigger(base, SweepAxis::kPosition, 1.5),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(
        robustness_sweep(p, SweepAxis::kSize, {}, base, cfg, 5, 99),
        std::invalid_argument);
  }
}
