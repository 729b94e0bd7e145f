#include <catch2/catch.hpp>

#include <filesystem>

#include "mbc/eval.hpp"

using namespace mbc;

namespace {

ResolvedConfig tiny_cfg() {
  json user = {
      {"seed", 5},
      {"network",
       {{"actor_hidden", {16, 8}},
        {"critic_hidden", {16, 8}},
        {"priv_encoder_hidden", {8}},
        {"history_encoder_hidden", {16}},
        {"vae_hidden", 16},
        {"vae_latent", 4},
        {"history_length", 5}}},
      {"eval", {{"trials", 4}, {"blind_steps", 200}, {"blind_vx_mps", 1.0}}},
  };
  return ResolvedConfig::make(user, true);
}

PolicyBundle random_bundle(const RunConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  PolicyBundle b = PolicyBundle::make(cfg, rng);
  b.tau = 0.05;
  return b;
}

TerrainSpec flat_spec() {
  TerrainSpec s;
  s.kind = TerrainKind::Slope;
  s.slope_incl_deg = 0.0;
  return s;
}

TerrainSpec gap_spec(double difficulty) {
  TerrainSpec s;
  s.kind = TerrainKind::Gap;
  s.difficulty = difficulty;
  s.gap_width = 0.15 + 0.30 * difficulty;
  return s;
}

}  // namespace

TEST_CASE("hot swap equivalences are bitwise") {
  const ResolvedConfig rc = tiny_cfg();
  const PolicyBundle b = random_bundle(rc.cfg, 1);
  const TerrainSpec spec = gap_spec(0.3);
  const uint64_t trial_seed = 12345;

  const TrialResult blind = run_eval_trial(b, rc.cfg, spec, trial_seed, 0, 1.0, 200);
  const TrialResult swap0 = run_eval_trial(b, rc.cfg, spec, trial_seed, 0, 1.0, 200);
  CHECK(blind.trajectory_hash == swap0.trajectory_hash);

  const TrialResult success = run_eval_trial(b, rc.cfg, spec, trial_seed, kToggleNever, 1.0, 200);
  const TrialResult swap_inf = run_eval_trial(b, rc.cfg, spec, trial_seed, kToggleNever, 1.0, 200);
  CHECK(success.trajectory_hash == swap_inf.trajectory_hash);

  // The active and inactive runs genuinely differ (perception feeds the policy).
  CHECK(blind.trajectory_hash != success.trajectory_hash);
}

TEST_CASE("protocol-level equivalences on shared trial seeds") {
  const ResolvedConfig rc = tiny_cfg();
  const PolicyBundle b = random_bundle(rc.cfg, 2);
  const TerrainSpec spec = flat_spec();

  const EvalReport blind = blind_failure_eval(b, rc.cfg, spec, 4, 9, 200, 1.0);
  const EvalReport swap0 = hot_swap_test(b, rc.cfg, spec, 4, 9, 0);
  CHECK(blind.mxd == swap0.mxd);
  CHECK(blind.terminations == swap0.terminations);

  const EvalReport succ = success_eval(b, rc.cfg, spec, 4, 9);
  const EvalReport swap_inf = hot_swap_test(b, rc.cfg, spec, 4, 9, kToggleNever);
  CHECK(succ.mxd == Approx(swap_inf.mxd).margin(1e-12));
}

TEST_CASE("reports are deterministic in checkpoint, seed and config") {
  const ResolvedConfig rc = tiny_cfg();
  const PolicyBundle b = random_bundle(rc.cfg, 3);
  const EvalReport r1 = blind_failure_eval(b, rc.cfg, flat_spec(), 4, 77, 150, 1.0);
  const EvalReport r2 = blind_failure_eval(b, rc.cfg, flat_spec(), 4, 77, 150, 1.0);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
}

TEST_CASE("MXD respects the command kinematic bound") {
  const ResolvedConfig rc = tiny_cfg();
  const PolicyBundle b = random_bundle(rc.cfg, 4);
  const int steps = 200;
  const double v = 1.0;
  const EvalReport r = blind_failure_eval(b, rc.cfg, flat_spec(), 4, 5, steps, v);
  CHECK(r.mxd <= v * steps * 0.02 + 0.5);
}

TEST_CASE("a stationary policy stalls out") {
  const ResolvedConfig rc = tiny_cfg();
  PolicyBundle b = random_bundle(rc.cfg, 6);
  std::fill(b.blind_actor.params.begin(), b.blind_actor.params.end(), 0.0);
  std::fill(b.percep_actor.params.begin(), b.percep_actor.params.end(), 0.0);
  std::fill(b.history_encoder.params.begin(), b.history_encoder.params.end(), 0.0);
  const EvalReport r = blind_failure_eval(b, rc.cfg, flat_spec(), 4, 1, 400, 1.0);
  CHECK(r.success_rate == 0.0);  // stuck is a failure
  CHECK(std::abs(r.mxd) < 0.5);
  for (const std::string& t : r.terminations) CHECK(t == "stuck");
}

TEST_CASE("a scripted 1 m/s tracker covers 20 m in 1000 steps") {
  // Closed-loop trot driving the surrogate directly: diagonal pairs alternate,
  // stance legs sweep backward, and the sweep amplitude servos on the ideal
  // 1 m/s reference position.
  TerrainSpec ts = flat_spec();
  QuadrupedEnv env;
  env.map_cfg = ElevationMap{};
  DomainRandConfig dr;
  dr.base_mass_add_kg[0] = dr.base_mass_add_kg[1] = 0;
  dr.com_offset_m[0] = dr.com_offset_m[1] = 0;
  dr.ground_friction[0] = dr.ground_friction[1] = 1.0;
  dr.motor_strength_scale[0] = dr.motor_strength_scale[1] = 1.0;
  dr.joint_kp_scale[0] = dr.joint_kp_scale[1] = 1.0;
  dr.joint_kd_scale[0] = dr.joint_kd_scale[1] = 1.0;
  dr.init_joint_pos_scale[0] = dr.init_joint_pos_scale[1] = 1.0;
  dr.action_delay_substeps[0] = dr.action_delay_substeps[1] = 0;
  dr.push_velocity_mps[0] = dr.push_velocity_mps[1] = 0.0;
  Rng rng(1);
  env.reset(generate_heightfield(ts), sample_domain_params(rng, dr), Rng(2));

  const double dt = env.cfg.control_dt;
  const double x0 = env.st.pos[0];
  const int period = 14, half = period / 2;
  std::vector<double> a(kActionDim, 0.0);
  for (int t = 0; t < 1000; ++t) {
    const double x_ref = x0 + 1.0 * t * dt;
    const double scale = clamp(1.0 + 2.0 * (x_ref - env.st.pos[0]), 0.3, 1.6);
    const int ph = t % period;
    const bool a_stance = ph < half;
    const double u = (ph % half + 0.5) / half;
    const double sweep = (1.0 - 2.0 * u) * scale;
    for (int leg = 0; leg < 4; ++leg) {
      const bool in_a = (leg == 0 || leg == 3);
      const bool stance = (in_a == a_stance);
      a[leg * 3 + 0] = 0.0;
      a[leg * 3 + 1] = clamp(stance ? sweep : -sweep, -1.0, 1.0);
      a[leg * 3 + 2] = stance ? clamp(0.3 * sweep + 0.3, -1.0, 1.0) : -1.0;
    }
    env.step(a);
  }
  const double mxd = env.st.pos[0] - x0;
  CHECK(mxd == Approx(20.0).margin(0.5));
}

TEST_CASE("hot swap on flat ground never produces non-finite actions") {
  const ResolvedConfig rc = tiny_cfg();
  const PolicyBundle b = random_bundle(rc.cfg, 8);
  // run_eval_trial throws on non-finite actions, so completing is the check.
  std::vector<TrialTraceRow> trace;
  const EvalReport r = hot_swap_test(b, rc.cfg, flat_spec(), 2, 4, 60, &trace);
  CHECK(r.max_action_jump >= 0.0);
  CHECK_FALSE(trace.empty());
}
