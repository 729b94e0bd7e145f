#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "mbc/env.hpp"
#include "mbc/perception.hpp"
#include "mbc/rl.hpp"
#include "mbc/terrain.hpp"

namespace mbc {

using json = nlohmann::json;

struct NetworkConfig {
  std::vector<int> actor_hidden = {64, 32};  // desk-scale structure defaults
  std::vector<int> critic_hidden = {64, 32};
  std::vector<int> priv_encoder_hidden = {32, 16};
  std::vector<int> history_encoder_hidden = {64, 32};
  int vae_hidden = 64;
  int vae_latent = 16;
  double vae_beta = 0.001;
  int e_dim = 8;
  int history_length = 20;
  nn::Activation activation = nn::Activation::Elu;
};

struct Stage1Config {
  rl::PpoConfig ppo;  // adaptive lr on by default
  int num_envs = 64;
  int iterations = 300;
  double action_penalty_coef = 0.1;  // L2 on the blind policy mean
  double vae_learning_rate = 1e-4;
  int history_latent_every = 20;
  int checkpoint_every = 100;
  int difficulty_ramp_iters = 150;
};

struct Stage2Config {
  rl::PpoConfig ppo;  // fixed learning rates; adaptive off
  double blind_learning_rate = 1e-5;
  double percep_learning_rate = 1e-4;
  int num_envs = 64;
  int iterations = 100;
  double action_penalty_coef = 0.01;  // lambda_a
  bool regularizer_enabled = true;    // off reproduces the no-regularizer ablation
  double tau_override = -1.0;         // <0: use the calibrated value
  int history_latent_every = 20;
  int checkpoint_every = 50;
  int difficulty_ramp_iters = 50;
  int familiar_probe_size = 512;
};

struct CalibrationConfig {
  int tau_patches = 2048;
};

struct EvalConfig {
  int trials = 100;
  int blind_steps = 1000;
  double blind_vx = 1.0;
};

struct RunConfig {
  uint64_t seed = 0;
  TerrainLayout terrain;
  TerrainRanges ranges;
  ElevationMap map_cfg;  // used for dims/resolution only
  HeightmapNoiseConfig noise;
  DomainRandConfig domain_rand;
  EnvConfig env;
  RewardConfig rewards;
  NetworkConfig network;
  Stage1Config stage1;
  Stage2Config stage2;
  CalibrationConfig calibration;
  EvalConfig eval;

  Stage2Config stage2_defaults() {
    Stage2Config c;
    c.ppo.adaptive_lr = false;
    return c;
  }
};

namespace cfgio {

inline json range2(const double (&r)[2]) { return json::array({r[0], r[1]}); }

/// Paper-value defaults wherever the source tables give one; desk-scale
/// values elsewhere. The --desk profile rewrites the scale knobs.
inline json default_json() {
  json j;
  j["seed"] = 0;
  j["terrain"] = {{"tile_length_m", 24.0}, {"tile_width_m", 4.0},  {"resolution_m", 0.05},
                  {"spawn_x_m", 2.0},      {"goal_distance_m", 20.0}, {"stair_width_m", 0.31},
                  {"pillar_height_m", 1.0}, {"gap_depth_m", 1.0},   {"pit_length_m", 4.0}};
  j["elevation_map"] = {{"rows", 24}, {"cols", 16}, {"resolution_m", 0.10}, {"rows_behind", 8}};
  j["heightmap_noise"] = {{"base_z_range_m", {-0.05, 0.05}},
                          {"gaussian_clamp_m", {-0.02, 0.02}},
                          {"gaussian_sigma_m", 0.01},
                          {"spike_proportion", 0.05},
                          {"spike_magnitude_m", {0.1, 0.5}},
                          {"update_delay_steps", 5},
                          {"update_period_steps", 5}};
  j["domain_rand"] = {{"base_mass_add_kg", {0.0, 3.0}},
                      {"com_offset_m", {-0.2, 0.2}},
                      {"ground_friction", {0.6, 2.0}},
                      {"motor_strength_scale", {0.8, 1.2}},
                      {"joint_kp_scale", {0.8, 1.2}},
                      {"joint_kd_scale", {0.8, 1.2}},
                      {"init_joint_pos_scale", {0.5, 1.5}},
                      {"action_delay_substeps", {0, 4}},
                      {"push_interval_steps", 400},
                      {"push_velocity_mps", {0.0, 0.5}}};
  j["env"] = {{"control_hz", 50},
              {"pd_substeps", 4},
              {"joint_kp", 1600.0},
              {"joint_kd", 80.0},
              {"torque_limit_nm", 120.0},
              {"action_clip", 1.0},
              {"action_scale", 0.25},
              {"default_leg_joint", {0.1, 0.8, -1.5}},
              {"episode_length_steps", 1000},
              {"stuck_window_steps", 150},
              {"stuck_min_progress_m", 0.05},
              {"fall_angle_rad", 1.3},
              {"qd_obs_scale", 0.05},
              {"tip_rate", 8.0},
              {"collision_terminate_depth_m", 0.10},
              {"command",
               {{"vx_mps", {0.3, 1.0}},
                {"vy_mps", 0.0},
                {"yaw_rate_limit", 0.5},
                {"heading_kp", 0.5},
                {"heading_mode", true}}}};
  j["rewards"] = {{"tracking_sigma", 0.25},
                  {"heading_gate_rad", 0.6},
                  {"dedupe_table6", false},
                  {"weights",
                   {{"lin_vel_tracking", 1.5},
                    {"ang_vel_tracking", 0.5},
                    {"lin_vel_z", -1.0},
                    {"ang_vel_xy", -0.1},
                    {"z_velocity", -1.0},
                    {"xy_velocity", -0.1},
                    {"orientation", -0.7},
                    {"dof_acceleration", -1.5e-7},
                    {"collision", -20.0},
                    {"action_rate", -0.11},
                    {"delta_torques", -1.0e-7},
                    {"torques", -1e-5},
                    {"hip_position", -0.8},
                    {"dof_error", -0.04},
                    {"feet_stumble", -2.0},
                    {"termination", -5.0},
                    {"dof_pos_limits", -13.0}}}};
  j["network"] = {{"actor_hidden", {512, 256, 128}},
                  {"critic_hidden", {512, 256, 128}},
                  {"priv_encoder_hidden", {256, 128}},
                  {"history_encoder_hidden", {256, 128}},
                  {"vae_hidden", 512},
                  {"vae_latent", 36},
                  {"vae_beta", 0.001},
                  {"e_dim", 8},
                  {"history_length", 20},
                  {"activation", "elu"}};
  j["ppo_stage1"] = {{"gamma", 0.99},
                     {"gae_lambda", 0.95},
                     {"rollout_steps", 21},
                     {"epochs", 5},
                     {"minibatches", 4},
                     {"entropy_coef", 0.01},
                     {"value_coef", 1.0},
                     {"clip", 0.2},
                     {"learning_rate", 1e-3},
                     {"adaptive_lr", true},
                     {"desired_kl", 0.01},
                     {"grad_clip", 1.0},
                     {"num_envs", 4096},
                     {"iterations", 300},
                     {"action_penalty_coef", 0.1},
                     {"vae_learning_rate", 1e-4},
                     {"history_latent_every", 20},
                     {"checkpoint_every", 100},
                     {"difficulty_ramp_iters", 150}};
  j["ppo_stage2"] = {{"gamma", 0.99},
                     {"gae_lambda", 0.95},
                     {"rollout_steps", 21},
                     {"epochs", 5},
                     {"minibatches", 4},
                     {"entropy_coef", 0.01},
                     {"value_coef", 1.0},
                     {"clip", 0.2},
                     {"blind_learning_rate", 1e-5},
                     {"percep_learning_rate", 1e-4},
                     {"adaptive_lr", false},
                     {"desired_kl", 0.01},
                     {"grad_clip", 1.0},
                     {"num_envs", 4096},
                     {"iterations", 100},
                     {"action_penalty_coef", 0.01},
                     {"regularizer_enabled", true},
                     {"tau_override", -1.0},
                     {"history_latent_every", 20},
                     {"checkpoint_every", 50},
                     {"difficulty_ramp_iters", 50},
                     {"familiar_probe_size", 512}};
  j["calibration"] = {{"tau_patches", 2048}};
  j["eval"] = {{"trials", 100}, {"blind_steps", 1000}, {"blind_vx_mps", 1.0}};
  return j;
}

/// Scale knobs for laptop-sized runs: env count, network widths, VAE size.
inline void apply_desk_profile(json& j) {
  j["network"]["actor_hidden"] = {64, 32};
  j["network"]["critic_hidden"] = {64, 32};
  j["network"]["priv_encoder_hidden"] = {32, 16};
  j["network"]["history_encoder_hidden"] = {64, 32};
  j["network"]["vae_hidden"] = 64;
  j["network"]["vae_latent"] = 16;
  j["ppo_stage1"]["num_envs"] = 64;
  j["ppo_stage2"]["num_envs"] = 64;
}

inline void reject_unknown_keys(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) return;
  check(schema.is_object(), "config section '" + path + "' must not be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!schema.contains(it.key()))
      throw std::runtime_error("unknown config key: " + (path.empty() ? it.key() : path + "." + it.key()));
    if (it.value().is_object())
      reject_unknown_keys(it.value(), schema.at(it.key()), path.empty() ? it.key() : path + "." + it.key());
  }
}

inline void merge_into(json& base, const json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

inline void read_range(const json& j, double (&out)[2]) {
  out[0] = j.at(0).get<double>();
  out[1] = j.at(1).get<double>();
}

inline rl::PpoConfig read_ppo(const json& s, bool stage2) {
  rl::PpoConfig p;
  p.gamma = s.at("gamma");
  p.gae_lambda = s.at("gae_lambda");
  p.rollout_steps = s.at("rollout_steps");
  p.epochs = s.at("epochs");
  p.minibatches = s.at("minibatches");
  p.entropy_coef = s.at("entropy_coef");
  p.value_coef = s.at("value_coef");
  p.clip = s.at("clip");
  p.adaptive_lr = s.at("adaptive_lr");
  p.desired_kl = s.at("desired_kl");
  p.grad_clip = s.at("grad_clip");
  if (!stage2) p.learning_rate = s.at("learning_rate");
  check_arg(p.clip > 0.0 && p.clip < 1.0, "clip must be in (0,1)");
  check_arg(p.gamma > 0.0 && p.gae_lambda > 0.0 && p.epochs > 0 && p.minibatches > 0,
            "ppo config values must be positive");
  return p;
}

/// Parse a merged (already validated) document into the runtime structs.
inline RunConfig from_json(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<uint64_t>();

  const json& t = j.at("terrain");
  c.terrain.tile_length = t.at("tile_length_m");
  c.terrain.tile_width = t.at("tile_width_m");
  c.terrain.resolution = t.at("resolution_m");
  c.terrain.spawn_x = t.at("spawn_x_m");
  c.terrain.goal_distance = t.at("goal_distance_m");
  c.terrain.stair_width = t.at("stair_width_m");
  c.terrain.pillar_height = t.at("pillar_height_m");
  c.terrain.gap_depth = t.at("gap_depth_m");
  c.terrain.pit_length = t.at("pit_length_m");

  const json& m = j.at("elevation_map");
  c.map_cfg = ElevationMap(m.at("rows"), m.at("cols"), m.at("resolution_m"), m.at("rows_behind"));

  const json& nse = j.at("heightmap_noise");
  read_range(nse.at("base_z_range_m"), c.noise.base_z_range);
  read_range(nse.at("gaussian_clamp_m"), c.noise.gaussian_clamp);
  c.noise.gaussian_sigma = nse.at("gaussian_sigma_m");
  c.noise.spike_proportion = nse.at("spike_proportion");
  read_range(nse.at("spike_magnitude_m"), c.noise.spike_magnitude);
  c.noise.update_delay_steps = nse.at("update_delay_steps");
  c.noise.update_period_steps = nse.at("update_period_steps");
  check_arg(c.noise.spike_proportion >= 0.0 && c.noise.spike_proportion <= 1.0,
            "spike_proportion must be in [0,1]");

  const json& dr = j.at("domain_rand");
  read_range(dr.at("base_mass_add_kg"), c.domain_rand.base_mass_add_kg);
  read_range(dr.at("com_offset_m"), c.domain_rand.com_offset_m);
  read_range(dr.at("ground_friction"), c.domain_rand.ground_friction);
  read_range(dr.at("motor_strength_scale"), c.domain_rand.motor_strength_scale);
  read_range(dr.at("joint_kp_scale"), c.domain_rand.joint_kp_scale);
  read_range(dr.at("joint_kd_scale"), c.domain_rand.joint_kd_scale);
  read_range(dr.at("init_joint_pos_scale"), c.domain_rand.init_joint_pos_scale);
  c.domain_rand.action_delay_substeps[0] = dr.at("action_delay_substeps").at(0);
  c.domain_rand.action_delay_substeps[1] = dr.at("action_delay_substeps").at(1);
  c.domain_rand.push_interval_steps = dr.at("push_interval_steps");
  read_range(dr.at("push_velocity_mps"), c.domain_rand.push_velocity_mps);

  const json& e = j.at("env");
  c.env.control_dt = 1.0 / e.at("control_hz").get<double>();
  c.env.pd_substeps = e.at("pd_substeps");
  c.env.joint_kp = e.at("joint_kp");
  c.env.joint_kd = e.at("joint_kd");
  c.env.torque_limit = e.at("torque_limit_nm");
  c.env.action_clip = e.at("action_clip");
  c.env.action_scale = e.at("action_scale");
  for (int i = 0; i < 3; ++i) c.env.default_leg_joint[i] = e.at("default_leg_joint").at(i);
  c.env.episode_length_steps = e.at("episode_length_steps");
  c.env.stuck_window_steps = e.at("stuck_window_steps");
  c.env.stuck_min_progress = e.at("stuck_min_progress_m");
  c.env.fall_angle = e.at("fall_angle_rad");
  c.env.qd_obs_scale = e.at("qd_obs_scale");
  c.env.tip_rate = e.at("tip_rate");
  c.env.collision_terminate_depth = e.at("collision_terminate_depth_m");
  const json& cm = e.at("command");
  read_range(cm.at("vx_mps"), c.env.command.vx_range);
  c.env.command.vy = cm.at("vy_mps");
  c.env.command.yaw_rate_limit = cm.at("yaw_rate_limit");
  c.env.command.heading_kp = cm.at("heading_kp");
  c.env.command.heading_mode = cm.at("heading_mode");

  const json& rw = j.at("rewards");
  c.rewards.tracking_sigma = rw.at("tracking_sigma");
  c.rewards.heading_gate = rw.at("heading_gate_rad");
  c.rewards.dedupe_table6 = rw.at("dedupe_table6");
  const json& w = rw.at("weights");
  c.rewards.w.lin_vel_tracking = w.at("lin_vel_tracking");
  c.rewards.w.ang_vel_tracking = w.at("ang_vel_tracking");
  c.rewards.w.lin_vel_z = w.at("lin_vel_z");
  c.rewards.w.ang_vel_xy = w.at("ang_vel_xy");
  c.rewards.w.z_velocity = w.at("z_velocity");
  c.rewards.w.xy_velocity = w.at("xy_velocity");
  c.rewards.w.orientation = w.at("orientation");
  c.rewards.w.dof_acceleration = w.at("dof_acceleration");
  c.rewards.w.collision = w.at("collision");
  c.rewards.w.action_rate = w.at("action_rate");
  c.rewards.w.delta_torques = w.at("delta_torques");
  c.rewards.w.torques = w.at("torques");
  c.rewards.w.hip_position = w.at("hip_position");
  c.rewards.w.dof_error = w.at("dof_error");
  c.rewards.w.feet_stumble = w.at("feet_stumble");
  c.rewards.w.termination = w.at("termination");
  c.rewards.w.dof_pos_limits = w.at("dof_pos_limits");

  const json& n = j.at("network");
  c.network.actor_hidden = n.at("actor_hidden").get<std::vector<int>>();
  c.network.critic_hidden = n.at("critic_hidden").get<std::vector<int>>();
  c.network.priv_encoder_hidden = n.at("priv_encoder_hidden").get<std::vector<int>>();
  c.network.history_encoder_hidden = n.at("history_encoder_hidden").get<std::vector<int>>();
  c.network.vae_hidden = n.at("vae_hidden");
  c.network.vae_latent = n.at("vae_latent");
  c.network.vae_beta = n.at("vae_beta");
  c.network.e_dim = n.at("e_dim");
  c.network.history_length = n.at("history_length");
  const std::string act = n.at("activation");
  check_arg(act == "elu" || act == "tanh", "activation must be elu or tanh");
  c.network.activation = act == "elu" ? nn::Activation::Elu : nn::Activation::Tanh;

  const json& s1 = j.at("ppo_stage1");
  c.stage1.ppo = read_ppo(s1, false);
  c.stage1.num_envs = s1.at("num_envs");
  c.stage1.iterations = s1.at("iterations");
  c.stage1.action_penalty_coef = s1.at("action_penalty_coef");
  c.stage1.vae_learning_rate = s1.at("vae_learning_rate");
  c.stage1.history_latent_every = s1.at("history_latent_every");
  c.stage1.checkpoint_every = s1.at("checkpoint_every");
  c.stage1.difficulty_ramp_iters = s1.at("difficulty_ramp_iters");

  const json& s2 = j.at("ppo_stage2");
  c.stage2.ppo = read_ppo(s2, true);
  c.stage2.blind_learning_rate = s2.at("blind_learning_rate");
  c.stage2.percep_learning_rate = s2.at("percep_learning_rate");
  c.stage2.num_envs = s2.at("num_envs");
  c.stage2.iterations = s2.at("iterations");
  c.stage2.action_penalty_coef = s2.at("action_penalty_coef");
  c.stage2.regularizer_enabled = s2.at("regularizer_enabled");
  c.stage2.tau_override = s2.at("tau_override");
  c.stage2.history_latent_every = s2.at("history_latent_every");
  c.stage2.checkpoint_every = s2.at("checkpoint_every");
  c.stage2.difficulty_ramp_iters = s2.at("difficulty_ramp_iters");
  c.stage2.familiar_probe_size = s2.at("familiar_probe_size");

  c.calibration.tau_patches = j.at("calibration").at("tau_patches");
  c.eval.trials = j.at("eval").at("trials");
  c.eval.blind_steps = j.at("eval").at("blind_steps");
  c.eval.blind_vx = j.at("eval").at("blind_vx_mps");
  return c;
}

}  // namespace cfgio

/// Resolved configuration: default document + user overrides (+ optional desk
/// profile), with unknown keys rejected. Also keeps the canonical text so
/// runs and checkpoints are self-describing.
struct ResolvedConfig {
  json doc;
  RunConfig cfg;

  static ResolvedConfig make(const json& user, bool desk, int64_t seed_override = -1) {
    json base = cfgio::default_json();
    if (desk) cfgio::apply_desk_profile(base);
    cfgio::reject_unknown_keys(user, base, "");
    cfgio::merge_into(base, user);
    if (seed_override >= 0) base["seed"] = static_cast<uint64_t>(seed_override);
    ResolvedConfig r;
    r.doc = base;
    r.cfg = cfgio::from_json(base);
    return r;
  }

  static ResolvedConfig from_file(const std::string& path, bool desk, int64_t seed_override = -1) {
    std::ifstream f(path);
    check(f.good(), "cannot open config file: " + path);
    json user = json::parse(f);
    return make(user, desk, seed_override);
  }

  static ResolvedConfig from_text(const std::string& text) {
    json doc = json::parse(text);
    // Embedded documents are complete; parse directly after schema check.
    cfgio::reject_unknown_keys(doc, cfgio::default_json(), "");
    ResolvedConfig r;
    r.doc = doc;
    r.cfg = cfgio::from_json(doc);
    return r;
  }

  std::string canonical_text() const { return doc.dump(2); }

  uint64_t hash() const {
    const std::string t = canonical_text();
    return fnv1a64(t.data(), t.size());
  }
};

}  // namespace mbc
