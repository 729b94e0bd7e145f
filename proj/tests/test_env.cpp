#include <catch2/catch.hpp>

#include "mbc/env.hpp"

using namespace mbc;

namespace {

Heightfield flat_field() {
  TerrainSpec s;
  s.kind = TerrainKind::Slope;
  s.slope_incl_deg = 0.0;
  return generate_heightfield(s);
}

DomainRandConfig degenerate_ranges() {
  DomainRandConfig c;
  c.base_mass_add_kg[0] = c.base_mass_add_kg[1] = 0.0;
  c.com_offset_m[0] = c.com_offset_m[1] = 0.0;
  c.ground_friction[0] = c.ground_friction[1] = 1.0;
  c.motor_strength_scale[0] = c.motor_strength_scale[1] = 1.0;
  c.joint_kp_scale[0] = c.joint_kp_scale[1] = 1.0;
  c.joint_kd_scale[0] = c.joint_kd_scale[1] = 1.0;
  c.init_joint_pos_scale[0] = c.init_joint_pos_scale[1] = 1.0;
  c.action_delay_substeps[0] = c.action_delay_substeps[1] = 0;
  c.push_velocity_mps[0] = c.push_velocity_mps[1] = 0.0;
  return c;
}

QuadrupedEnv standing_env(uint64_t seed = 3) {
  QuadrupedEnv env;
  env.map_cfg = ElevationMap{};
  Rng rng(seed);
  const DomainParams dp = sample_domain_params(rng, degenerate_ranges());
  env.reset(flat_field(), dp, Rng(seed + 1));
  return env;
}

double default_leg_extension(const EnvConfig& cfg) {
  const auto q = cfg.default_joints();
  double ext = 0;
  for (int leg = 0; leg < 4; ++leg) {
    const auto f = leg_forward_kinematics(std::span<const double>(q.data() + leg * 3, 3), cfg.leg);
    ext += -f[2];
  }
  return ext / 4.0;
}

}  // namespace

TEST_CASE("domain randomization draws stay in range") {
  Rng rng(1);
  DomainRandConfig cfg;
  for (int i = 0; i < 500; ++i) {
    const DomainParams dp = sample_domain_params(rng, cfg);
    CHECK(dp.base_mass_add >= 0.0);
    CHECK(dp.base_mass_add <= 3.0);
    CHECK(dp.friction >= 0.6);
    CHECK(dp.friction <= 2.0);
    for (double m : dp.motor_strength) {
      CHECK(m >= 0.8);
      CHECK(m <= 1.2);
    }
    CHECK(dp.action_delay_substeps >= 0);
    CHECK(dp.action_delay_substeps <= 4);
    CHECK(dp.init_joint_scale >= 0.5);
    CHECK(dp.init_joint_scale <= 1.5);
  }
}

TEST_CASE("degenerate ranges give identity parameters") {
  Rng rng(2);
  const DomainParams dp = sample_domain_params(rng, degenerate_ranges());
  CHECK(dp.base_mass_add == 0.0);
  CHECK(dp.friction == 1.0);
  CHECK(dp.kp_scale == 1.0);
  CHECK(dp.init_joint_scale == 1.0);
  CHECK(dp.action_delay_substeps == 0);
}

TEST_CASE("leg forward kinematics") {
  SECTION("straight leg hangs 0.42 m below the hip") {
    const auto f = leg_forward_kinematics(std::vector<double>{0, 0, 0});
    CHECK(f[0] == Approx(0.0).margin(1e-15));
    CHECK(f[1] == Approx(0.0).margin(1e-15));
    CHECK(f[2] == Approx(-0.42).margin(1e-15));
  }
  SECTION("right-angle knee halves the reach") {
    const auto f = leg_forward_kinematics(std::vector<double>{0, 0, M_PI / 2});
    CHECK(f[2] == Approx(-0.21).margin(1e-12));
    CHECK(f[0] == Approx(0.21).margin(1e-12));
  }
  SECTION("hip roll sign flips only the lateral offset") {
    const auto a = leg_forward_kinematics(std::vector<double>{0.3, 0.5, -1.0});
    const auto b = leg_forward_kinematics(std::vector<double>{-0.3, 0.5, -1.0});
    CHECK(a[1] == Approx(-b[1]).margin(1e-15));
    CHECK(a[0] == Approx(b[0]).margin(1e-15));
    CHECK(a[2] == Approx(b[2]).margin(1e-15));
  }
  SECTION("non-finite joints are rejected") {
    CHECK_THROWS(leg_forward_kinematics(std::vector<double>{0.0, NAN, 0.0}));
  }
}

TEST_CASE("reset pose and height") {
  SECTION("straight-leg defaults stand at 0.42 m") {
    QuadrupedEnv env;
    env.cfg.default_leg_joint = {0.0, 0.0, 0.0};
    env.map_cfg = ElevationMap{};
    Rng rng(3);
    env.reset(flat_field(), sample_domain_params(rng, degenerate_ranges()), Rng(4));
    CHECK(env.st.pos[2] == Approx(0.42).margin(1e-9));
  }
  SECTION("stock defaults stand at the default leg extension") {
    QuadrupedEnv env = standing_env();
    CHECK(env.st.pos[2] == Approx(default_leg_extension(env.cfg)).margin(1e-9));
    CHECK(env.st.pos[2] == Approx(0.3069253).margin(1e-6));
  }
  SECTION("raised ground shifts the base by the local height") {
    Heightfield hf = flat_field();
    for (auto& c : hf.cells) c = 0.26;
    QuadrupedEnv env;
    env.map_cfg = ElevationMap{};
    Rng rng(5);
    env.reset(hf, sample_domain_params(rng, degenerate_ranges()), Rng(6));
    CHECK(env.st.pos[2] == Approx(0.26 + default_leg_extension(env.cfg)).margin(1e-9));
  }
  SECTION("equal seeds give bitwise-identical resets") {
    QuadrupedEnv a = standing_env(9);
    QuadrupedEnv b = standing_env(9);
    CHECK(a.st.pos[2] == b.st.pos[2]);
    CHECK(a.st.q == b.st.q);
    CHECK(a.cmd.vx == b.cmd.vx);
    CHECK(a.percep.visible.grid == b.percep.visible.grid);
  }
}

TEST_CASE("stand-still fixed point") {
  QuadrupedEnv env = standing_env();
  const double z0 = env.st.pos[2];
  const std::vector<double> zero(kActionDim, 0.0);
  for (int t = 0; t < 500; ++t) {
    env.step(zero);
    if (t == 49) {
      const double v = std::hypot(env.st.vel[0], env.st.vel[1]);
      CHECK(v < 0.01);
    }
    CHECK(std::abs(env.st.pos[2] - z0) <= 0.005);
  }
}

TEST_CASE("folding every joint drops the base") {
  QuadrupedEnv env = standing_env();
  const double z0 = env.st.pos[2];
  const std::vector<double> fold(kActionDim, -1.0);
  for (int t = 0; t < 50; ++t) env.step(fold);
  CHECK(env.st.pos[2] < z0 - 0.02);
}

TEST_CASE("push events add velocity that then decays") {
  QuadrupedEnv env = standing_env();
  env.dp.push_interval_steps = 5;
  env.dp.push_velocity_max = 0.5;
  const std::vector<double> zero(kActionDim, 0.0);
  double v_at_push = 0.0;
  for (int t = 1; t <= 6; ++t) {
    env.step(zero);
    const double v = std::hypot(env.st.vel[0], env.st.vel[1]);
    if (t < 5) CHECK(v < 1e-9);
    if (t == 5) {
      v_at_push = v;
      CHECK(v > 0.0);
      CHECK(v <= 0.5 + 1e-12);
    }
    if (t == 6) CHECK(v == Approx(v_at_push * std::exp(-0.02 / env.cfg.push_decay_tau)).epsilon(1e-6));
  }
}

TEST_CASE("non-finite actions fail hard") {
  QuadrupedEnv env = standing_env();
  std::vector<double> bad(kActionDim, 0.0);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(env.step(bad));
}

TEST_CASE("contact flags track foot height against terrain") {
  QuadrupedEnv env = standing_env();
  const std::vector<double> zero(kActionDim, 0.0);
  for (int t = 0; t < 10; ++t) env.step(zero);
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const double ground = height_at(env.hf, env.st.foot_pos[leg][0], env.st.foot_pos[leg][1]);
    const bool expect = env.st.foot_pos[leg][2] <= ground + 1e-3 &&
                        env.st.foot_pos[leg][2] >= ground - env.cfg.buried_depth;
    CHECK(env.st.contact[leg] == expect);
  }
}

// ---------------------------------------------------------------------------
// Reward table oracle: every term recomputed by hand on crafted states.

namespace {

RobotState crafted_state(const EnvConfig& cfg) {
  RobotState st;
  st.q = cfg.default_joints();
  st.pos[2] = 0.31;
  return st;
}

}  // namespace

TEST_CASE("reward terms match hand-computed values") {
  const EnvConfig env_cfg;
  const RewardConfig cfg;
  const Command cmd{1.0, 0.0, 0.0, 0.0};
  const std::vector<double> zero12(12, 0.0);
  EnvEvents no_events;

  RobotState prev = crafted_state(env_cfg);
  RobotState next = crafted_state(env_cfg);

  SECTION("perfect tracking scores exactly the weights") {
    next.vel[0] = 1.0;  // world frame, yaw 0
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[0] == Approx(1.5).margin(1e-12));
    CHECK(r.terms[1] == Approx(0.5).margin(1e-12));
  }

  SECTION("tracking decays by the gaussian kernel") {
    next.vel[0] = 0.5;  // error 0.5 -> exp(-0.25 / 0.5)
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[0] == Approx(1.5 * std::exp(-0.25 / 0.5)).margin(1e-12));
  }

  SECTION("heading gate zeroes the tracking rewards") {
    next.vel[0] = 1.0;
    next.rpy[2] = 0.7;  // heading error beyond 0.6 rad
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[0] == 0.0);
    CHECK(r.terms[1] == 0.0);
    next.rpy[2] = 0.59;  // just inside: gate open
    const RewardBreakdown r2 = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                               no_events, env_cfg, cfg);
    CHECK(r2.terms[0] > 0.0);
  }

  SECTION("vertical and angular velocity penalties, printed duplicates included") {
    next.vel[2] = 0.2;
    next.omega[0] = 0.3;
    next.omega[1] = 0.4;
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[2] == Approx(-1.0 * 0.04).margin(1e-12));
    CHECK(r.terms[4] == Approx(-1.0 * 0.04).margin(1e-12));
    CHECK(r.terms[3] == Approx(-0.1 * 0.25).margin(1e-12));
    CHECK(r.terms[5] == Approx(-0.1 * 0.25).margin(1e-12));

    RewardConfig dedup = cfg;
    dedup.dedupe_table6 = true;
    const RewardBreakdown r2 = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                               no_events, env_cfg, dedup);
    CHECK(r2.terms[4] == 0.0);
    CHECK(r2.terms[5] == 0.0);
  }

  SECTION("orientation penalty uses projected gravity") {
    next.rpy[0] = 0.1;
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    const double s = std::sin(0.1);
    CHECK(r.terms[6] == Approx(-0.7 * s * s).margin(1e-12));
  }

  SECTION("joint acceleration, action rate, torque terms") {
    for (auto& v : next.qd) v = 0.1;  // qdd = 0.1 / 0.02 = 5 per joint
    std::vector<double> a_t(12, 0.5);
    std::vector<double> tau_t(12, 1.0);
    const RewardBreakdown r = compute_rewards(prev, next, a_t, zero12, tau_t, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[7] == Approx(-1.5e-7 * 12 * 25.0).margin(1e-15));
    CHECK(r.terms[9] == Approx(-0.11 * 12 * 0.25).margin(1e-12));
    CHECK(r.terms[10] == Approx(-1.0e-7 * 12 * 1.0).margin(1e-15));
    CHECK(r.terms[11] == Approx(-1e-5 * 12 * 1.0).margin(1e-15));
  }

  SECTION("hip position and dof error") {
    // Defaults put |roll| = 0.1 on all four hips.
    const RewardBreakdown r0 = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                               no_events, env_cfg, cfg);
    CHECK(r0.terms[12] == Approx(-0.8 * 4 * 0.01).margin(1e-12));
    CHECK(r0.terms[13] == Approx(0.0).margin(1e-15));

    next.q[1] += 0.3;  // one thigh off default
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[13] == Approx(-0.04 * 0.09).margin(1e-12));
  }

  SECTION("stumble, termination and collision events") {
    EnvEvents ev;
    ev.stumbles = 1;
    ev.terminated = true;
    ev.collision_depth = 0.05;
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              ev, env_cfg, cfg);
    CHECK(r.terms[14] == Approx(-2.0).margin(1e-12));
    CHECK(r.terms[15] == Approx(-5.0).margin(1e-12));
    CHECK(r.terms[8] == Approx(-20.0 * 0.05).margin(1e-12));

    ev.collision_depth = 0.30;  // clamps at 0.1 m
    const RewardBreakdown r2 = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                               ev, env_cfg, cfg);
    CHECK(r2.terms[8] == Approx(-2.0).margin(1e-12));
  }

  SECTION("dof position limit excess") {
    next.q[1] = 3.0;  // thigh limit is 2.8
    const RewardBreakdown r = compute_rewards(prev, next, zero12, zero12, zero12, zero12, cmd, 0.0,
                                              no_events, env_cfg, cfg);
    CHECK(r.terms[16] == Approx(-13.0 * 0.2).margin(1e-9));
  }
}

TEST_CASE("reward total equals the sum of terms on random states") {
  Rng rng(17);
  const EnvConfig env_cfg;
  const RewardConfig cfg;
  for (int i = 0; i < 200; ++i) {
    RobotState prev = crafted_state(env_cfg);
    RobotState next = crafted_state(env_cfg);
    for (int k = 0; k < 3; ++k) {
      next.vel[k] = rng.uniform(-1, 1);
      next.omega[k] = rng.uniform(-1, 1);
      next.rpy[k] = rng.uniform(-0.5, 0.5);
    }
    for (int k = 0; k < 12; ++k) {
      next.q[k] += rng.uniform(-0.3, 0.3);
      next.qd[k] = rng.uniform(-2, 2);
      next.tau[k] = rng.uniform(-5, 5);
    }
    std::vector<double> a_t(12), a_p(12);
    for (int k = 0; k < 12; ++k) {
      a_t[k] = rng.uniform(-1, 1);
      a_p[k] = rng.uniform(-1, 1);
    }
    EnvEvents ev;
    ev.stumbles = static_cast<int>(rng.uniform_int(3));
    ev.collision_depth = rng.uniform(0, 0.2);
    ev.terminated = rng.uniform() < 0.3;
    Command cmd{rng.uniform(0.3, 1.0), 0.0, 0.0, 0.0};
    const RewardBreakdown r = compute_rewards(prev, next, a_t, a_p, next.tau, prev.tau, cmd,
                                              rng.uniform(-0.5, 0.5), ev, env_cfg, cfg);
    double sum = 0;
    for (double t : r.terms) sum += t;
    CHECK(r.total == Approx(sum).margin(1e-12));
  }
}

TEST_CASE("standing with a zero command earns the full tracking reward, steadily") {
  QuadrupedEnv env = standing_env();
  env.cmd.vx = 0.0;
  env.cmd.vy = 0.0;
  env.cmd.omega_yaw = 0.0;
  env.cmd.heading = 0.0;
  const std::vector<double> zero(kActionDim, 0.0);
  std::vector<double> totals;
  for (int t = 0; t < 60; ++t) {
    const StepResult r = env.step(zero);
    if (t >= 10) totals.push_back(r.reward.total);
  }
  for (double v : totals) {
    CHECK(v == Approx(2.0).margin(0.1));
    CHECK(v == Approx(totals.front()).margin(1e-9));
  }
}

TEST_CASE("termination rules") {
  const EnvConfig cfg;
  ProgressWindow w;
  w.reset(cfg.stuck_window_steps);
  RobotState st;

  SECTION("fall over at 1.3 rad") {
    st.rpy[1] = 1.31;
    CHECK(check_termination(st, w, cfg, 0.0) == TerminationReason::FallOver);
    st.rpy[1] = 1.29;
    CHECK(check_termination(st, w, cfg, 0.0) == TerminationReason::None);
    st.rpy[1] = 0;
    st.rpy[0] = -1.31;
    CHECK(check_termination(st, w, cfg, 0.0) == TerminationReason::FallOver);
  }

  SECTION("stuck when x progress stalls over the window") {
    for (int i = 0; i <= cfg.stuck_window_steps; ++i) w.push(5.0 + 0.0001 * i);
    CHECK(check_termination(st, w, cfg, 0.0) == TerminationReason::Stuck);
    ProgressWindow moving;
    moving.reset(cfg.stuck_window_steps);
    for (int i = 0; i <= cfg.stuck_window_steps; ++i) moving.push(5.0 + 0.01 * i);
    CHECK(check_termination(st, moving, cfg, 0.0) == TerminationReason::None);
  }

  SECTION("timeout at the episode cap") {
    st.step_count = cfg.episode_length_steps;
    CHECK(check_termination(st, w, cfg, 0.0) == TerminationReason::Timeout);
  }

  SECTION("deep collision terminates") {
    CHECK(check_termination(st, w, cfg, 0.12) == TerminationReason::Collision);
  }
}

TEST_CASE("observation assembly dimensions and slots") {
  QuadrupedEnv env = standing_env();
  const std::vector<double> o = assemble_proprio(env.st, env.cmd, 0.25, env.cfg);
  REQUIRE(static_cast<int>(o.size()) == 45);
  CHECK(o[42] == env.cmd.vx);
  CHECK(o[43] == env.cmd.vy);
  CHECK(o[44] == 0.25);

  const int e_dim = 8, map_dim = 24 * 16;
  std::vector<double> v_hat = {0.1, 0.2, 0.3}, e(e_dim, 0.5), v_true = {0.2, 0.0, 0.0};
  std::vector<double> ab(12, 0.0), ap(12, 0.0);
  const ObservationSet s =
      assemble_observations(o, env.percep.visible, v_hat, e, v_true, e, ab, ap);
  CHECK(static_cast<int>(s.s_blind.size()) == 45 + 3 + e_dim + 12);
  CHECK(static_cast<int>(s.s_percep.size()) == 45 + map_dim + 12);
  CHECK(static_cast<int>(s.s_critic.size()) == 45 + 3 + e_dim + map_dim + 24);

  SECTION("stage-1 zeroed perceptive slot") {
    for (size_t i = s.s_blind.size() - 12; i < s.s_blind.size(); ++i) CHECK(s.s_blind[i] == 0.0);
  }

  SECTION("inactive perception zeroes the height slots") {
    env.percep.set_active(false);
    const ObservationSet s2 =
        assemble_observations(o, env.percep.visible, v_hat, e, v_true, e, ab, ap);
    for (int i = 0; i < map_dim; ++i) CHECK(s2.s_percep[45 + i] == 0.0);
  }

  SECTION("dimension mismatches fail hard") {
    std::vector<double> bad_v = {0.1};
    CHECK_THROWS(assemble_observations(o, env.percep.visible, bad_v, e, v_true, e, ab, ap));
  }
}

TEST_CASE("trajectories are bitwise deterministic in seed and config") {
  QuadrupedEnv a = standing_env(21);
  QuadrupedEnv b = standing_env(21);
  Rng act_rng_a(99), act_rng_b(99);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> act(kActionDim);
    for (auto& v : act) v = act_rng_a.uniform(-1, 1);
    std::vector<double> act_b(kActionDim);
    for (auto& v : act_b) v = act_rng_b.uniform(-1, 1);
    a.step(act);
    b.step(act_b);
    REQUIRE(a.st.pos[0] == b.st.pos[0]);
    REQUIRE(a.st.pos[2] == b.st.pos[2]);
    REQUIRE(a.st.q == b.st.q);
    REQUIRE(a.percep.visible.grid == b.percep.visible.grid);
  }
}
