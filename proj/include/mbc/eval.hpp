#pragma once

#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbc/training.hpp"

namespace mbc {

constexpr long kToggleNever = std::numeric_limits<long>::max();

struct TrialResult {
  double displacement = 0.0;
  double final_x = 0.0;
  TerminationReason reason = TerminationReason::None;
  long steps = 0;
  long collision_events = 0;
  bool crossed_obstacle = false;
  bool reached_goal = false;
  double max_action_jump_at_toggle = 0.0;
  uint64_t trajectory_hash = 0;
};

struct TrialTraceRow {
  long step;
  double x, y, z, roll, pitch, yaw, vx, vy, vz;
  double reward_total;
  std::array<double, kNumRewardTerms> reward_terms;
  int stumbles;
  double collision_depth;
  const char* termination;
};

/// Deterministic evaluation rollout: policy means, deployable history-encoder
/// latents, perception active until toggle_step (inactive from that step on).
/// All three protocols run through here so their equivalences are structural.
inline TrialResult run_eval_trial(const PolicyBundle& bundle, const RunConfig& cfg,
                                  const TerrainSpec& spec, uint64_t trial_seed, long toggle_step,
                                  double v_cmd, int max_steps,
                                  std::vector<TrialTraceRow>* trace = nullptr) {
  const Heightfield hf = generate_heightfield(spec, cfg.terrain, cfg.ranges);
  Rng trial_rng = Rng::derive(trial_seed, 0x7e57);
  const DomainParams dp = sample_domain_params(trial_rng, cfg.domain_rand);

  EnvSlot slot;
  slot.env.cfg = cfg.env;
  slot.env.reward_cfg = cfg.rewards;
  slot.env.map_cfg = cfg.map_cfg;
  slot.env.percep.noise = cfg.noise;
  slot.env.percep.active = toggle_step > 0;
  slot.env.reset(hf, dp, Rng::derive(trial_seed, 0xe0f));
  slot.clear_episode(bundle.window_dim());
  slot.env.cmd.vx = v_cmd;
  slot.env.cmd.vy = 0.0;
  slot.env.cmd.omega_yaw = 0.0;
  slot.env.cmd.heading = hf.spawn_yaw;

  TrialResult res;
  uint64_t hash = 0xcbf29ce484222325ULL;
  std::vector<double> a_prev_combined(kActionDim, 0.0);
  const double spawn_x = hf.spawn_x;

  for (long t = 0; t < max_steps; ++t) {
    if (t == toggle_step) slot.env.percep.set_active(false);

    const std::vector<double> o =
        assemble_proprio(slot.env.st, slot.env.cmd, slot.env.omega_cmd_effective(), cfg.env);
    slot.push_frame(o);
    std::vector<double> v_hat, e_hat;
    roa_estimates(bundle.history_encoder, slot.window, v_hat, e_hat);
    const auto vb = body_velocity(slot.env.st);
    const std::vector<double> v_true = {vb[0], vb[1], vb[2]};
    const std::vector<double> e_true = bundle.priv_encoder.forward(slot.env.dp.privileged_vector());
    const ObservationSet obs =
        assemble_observations(o, slot.env.percep.visible, v_hat, e_hat, v_true, e_true,
                              slot.a_blind_prev, slot.a_percep_prev);

    const std::vector<double> a_blind = bundle.blind_actor.forward(obs.s_blind);
    const std::vector<double> a_percep = bundle.percep_actor.forward(obs.s_percep);
    for (double a : a_blind) check(std::isfinite(a), "non-finite blind action");
    for (double a : a_percep) check(std::isfinite(a), "non-finite perceptive action");
    const std::vector<double> a = combine_actions(a_blind, a_percep, Stage::Two);

    double jump2 = 0.0;
    for (int j = 0; j < kActionDim; ++j) {
      const double d = a[j] - a_prev_combined[j];
      jump2 += d * d;
    }
    if (toggle_step > 0 && t >= toggle_step && t <= toggle_step + 2)
      res.max_action_jump_at_toggle = std::max(res.max_action_jump_at_toggle, std::sqrt(jump2));
    a_prev_combined = a;

    const StepResult r = slot.env.step(a);
    slot.a_blind_prev = a_blind;
    slot.a_percep_prev = a_percep;

    if (r.events.collision_depth > 0.0) res.collision_events += 1;
    res.steps = t + 1;
    res.final_x = slot.env.st.pos[0];
    if (slot.env.st.pos[0] > hf.obstacle_x1 && hf.obstacle_x1 > hf.obstacle_x0)
      res.crossed_obstacle = true;
    if (slot.env.st.pos[0] >= hf.goal_x) res.reached_goal = true;

    // Trajectory digest for the bitwise-equivalence checks.
    auto mix = [&hash](double v) { hash = fnv1a64(&v, sizeof v, hash); };
    mix(slot.env.st.pos[0]);
    mix(slot.env.st.pos[1]);
    mix(slot.env.st.pos[2]);
    mix(slot.env.st.rpy[0]);
    mix(slot.env.st.rpy[1]);
    mix(slot.env.st.rpy[2]);
    for (double v : a) mix(v);

    if (trace) {
      trace->push_back({t, slot.env.st.pos[0], slot.env.st.pos[1], slot.env.st.pos[2],
                        slot.env.st.rpy[0], slot.env.st.rpy[1], slot.env.st.rpy[2],
                        slot.env.st.vel[0], slot.env.st.vel[1], slot.env.st.vel[2], r.reward.total,
                        r.reward.terms, r.events.stumbles, r.events.collision_depth,
                        termination_name(r.reason)});
    }
    if (r.done) {
      res.reason = r.reason;
      break;
    }
  }
  res.displacement = res.final_x - spawn_x;
  res.trajectory_hash = hash;
  return res;
}

struct EvalReport {
  std::string protocol;
  TerrainSpec spec;
  int n_trials = 0;
  double success_rate = 0.0;
  double mxd = 0.0;
  std::vector<std::string> terminations;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  double max_action_jump = 0.0;
  double mean_collisions = 0.0;

  json to_json() const {
    json j;
    j["protocol"] = protocol;
    j["terrain"] = {{"kind", terrain_kind_name(spec.kind)},
                    {"difficulty", spec.difficulty},
                    {"seed", spec.seed}};
    j["n_trials"] = n_trials;
    j["success_rate"] = success_rate;
    j["mxd"] = mxd;
    j["terminations"] = terminations;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["max_action_jump"] = max_action_jump;
    j["mean_collision_events"] = mean_collisions;
    // Published full-scale results for these protocols; desk-scale runs use a
    // surrogate model and do not target these numbers.
    j["reference_results"] = {
        {"note", "full-scale published results; not targets at this fidelity"},
        {"gap_success", {{"0.35m", 0.993}, {"0.45m", 0.983}, {"0.55m", 0.913}, {"0.65m", 0.443}}},
        {"pit_success", {{"0.30m", 0.976}, {"0.40m", 0.976}, {"0.50m", 0.850}, {"0.55m", 0.493}}},
        {"pillar_success",
         {{"size0.4_dist1.6", 0.867}, {"size0.5_dist1.5", 0.804}, {"size0.6_dist1.4", 0.650},
          {"size0.7_dist1.3", 0.607}}},
        {"blind_upstair_success", 0.97},
        {"blind_downstair_success", 1.00},
        {"blind_discrete_success", 0.90},
        {"blind_stair_mxd", 19.97},
        {"blind_discrete_mxd", 17.04}};
    return j;
  }
};

namespace detail_eval {

/// Shared per-trial seed derivation: the protocol equivalences require the
/// same trial index to map to the same environment in every protocol.
inline uint64_t trial_seed(uint64_t seed, int trial) {
  return Rng::derive(seed, 0x7121a1, static_cast<uint64_t>(trial)).next_u64();
}

inline bool trial_success_toughterrain(const TrialResult& r, TerrainKind kind) {
  if (kind == TerrainKind::Gap || kind == TerrainKind::Pit) return r.crossed_obstacle;
  if (kind == TerrainKind::Pillar) return r.reached_goal && r.collision_events == 0;
  return r.reached_goal;
}

inline bool trial_success_blind(const TrialResult& r) {
  return r.reason != TerminationReason::FallOver && r.reason != TerminationReason::Stuck &&
         r.reason != TerminationReason::Collision;
}

}  // namespace detail_eval

/// Tough-terrain protocol with perception on: four repeats of n/4 trials.
inline EvalReport success_eval(const PolicyBundle& bundle, const RunConfig& cfg,
                               const TerrainSpec& spec, int n_trials, uint64_t seed) {
  EvalReport rep;
  rep.protocol = "success";
  rep.spec = spec;
  rep.n_trials = n_trials;
  rep.seed = seed;
  const int repeats = 4;
  const int per = std::max(1, n_trials / repeats);
  double rate_sum = 0.0;
  double mxd_sum = 0.0;
  int trial_id = 0;
  for (int rep_i = 0; rep_i < repeats; ++rep_i) {
    int ok = 0;
    for (int i = 0; i < per; ++i, ++trial_id) {
      const uint64_t ts = detail_eval::trial_seed(seed, trial_id);
      const TrialResult r = run_eval_trial(bundle, cfg, spec, ts, kToggleNever, cfg.eval.blind_vx,
                                           cfg.eval.blind_steps);
      ok += detail_eval::trial_success_toughterrain(r, spec.kind) ? 1 : 0;
      mxd_sum += r.displacement;
      rep.terminations.push_back(termination_name(r.reason));
      rep.mean_collisions += static_cast<double>(r.collision_events);
    }
    rate_sum += static_cast<double>(ok) / per;
  }
  rep.success_rate = rate_sum / repeats;
  rep.mxd = mxd_sum / (repeats * per);
  rep.mean_collisions /= repeats * per;
  return rep;
}

/// Perception zeroed for the whole episode; success means no fall and no
/// stall over the horizon; MXD is the mean final x displacement.
inline EvalReport blind_failure_eval(const PolicyBundle& bundle, const RunConfig& cfg,
                                     const TerrainSpec& spec, int n_envs, uint64_t seed,
                                     int steps = -1, double v_cmd = -1.0) {
  EvalReport rep;
  rep.protocol = "blind_failure";
  rep.spec = spec;
  rep.n_trials = n_envs;
  rep.seed = seed;
  if (steps < 0) steps = cfg.eval.blind_steps;
  if (v_cmd < 0) v_cmd = cfg.eval.blind_vx;
  int ok = 0;
  double mxd_sum = 0.0;
  for (int i = 0; i < n_envs; ++i) {
    const uint64_t ts = detail_eval::trial_seed(seed, i);
    const TrialResult r = run_eval_trial(bundle, cfg, spec, ts, /*toggle=*/0, v_cmd, steps);
    ok += detail_eval::trial_success_blind(r) ? 1 : 0;
    mxd_sum += r.displacement;
    rep.terminations.push_back(termination_name(r.reason));
  }
  rep.success_rate = static_cast<double>(ok) / n_envs;
  rep.mxd = mxd_sum / n_envs;
  return rep;
}

/// Perception fails mid-episode at toggle_step; post-toggle success criteria
/// follow the blind protocol, and the action jump across the toggle is
/// recorded.
inline EvalReport hot_swap_test(const PolicyBundle& bundle, const RunConfig& cfg,
                                const TerrainSpec& spec, int n_trials, uint64_t seed,
                                long toggle_step, std::vector<TrialTraceRow>* trace = nullptr) {
  EvalReport rep;
  rep.protocol = "hot_swap";
  rep.spec = spec;
  rep.n_trials = n_trials;
  rep.seed = seed;
  int ok = 0;
  double mxd_sum = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    const uint64_t ts = detail_eval::trial_seed(seed, i);
    const TrialResult r = run_eval_trial(bundle, cfg, spec, ts, toggle_step, cfg.eval.blind_vx,
                                         cfg.eval.blind_steps, i == 0 ? trace : nullptr);
    ok += detail_eval::trial_success_blind(r) ? 1 : 0;
    mxd_sum += r.displacement;
    rep.terminations.push_back(termination_name(r.reason));
    rep.max_action_jump = std::max(rep.max_action_jump, r.max_action_jump_at_toggle);
  }
  rep.success_rate = static_cast<double>(ok) / n_trials;
  rep.mxd = mxd_sum / n_trials;
  return rep;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TrialTraceRow>& trace) {
  os << "step,x,y,z,roll,pitch,yaw,vx,vy,vz,reward";
  for (int k = 0; k < kNumRewardTerms; ++k) os << ",r_" << reward_term_name(k);
  os << ",stumbles,collision_depth,termination\n";
  char buf[512];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step,
                  r.x, r.y, r.z, r.roll, r.pitch, r.yaw, r.vx, r.vy, r.vz, r.reward_total);
    os << buf;
    for (int k = 0; k < kNumRewardTerms; ++k) {
      std::snprintf(buf, sizeof buf, ",%.9g", r.reward_terms[k]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%d,%.9g,%s", r.stumbles, r.collision_depth, r.termination);
    os << buf << "\n";
  }
}

/// Load a policy for evaluation from a stage-2 checkpoint.
inline std::pair<PolicyBundle, ResolvedConfig> load_eval_policy(const std::string& ckpt_path) {
  const CheckpointContainer c = load_checkpoint(ckpt_path);
  check(c.stage == 2, "evaluation requires a stage-2 checkpoint");
  validate_checkpoint_schema(c);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Rng init(0);
  PolicyBundle b = PolicyBundle::make(rc.cfg, init);
  b.load_from_checkpoint(c);
  return {std::move(b), std::move(rc)};
}

}  // namespace mbc
