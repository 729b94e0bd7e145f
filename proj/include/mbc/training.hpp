#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "mbc/config.hpp"
#include "mbc/env.hpp"
#include "mbc/metrics.hpp"
#include "mbc/persistence.hpp"
#include "mbc/regularizer.hpp"
#include "mbc/rl.hpp"

namespace mbc {

/// Every trainable network of the two-policy system plus the calibrated
/// familiarity threshold.
struct PolicyBundle {
  nn::Mlp blind_actor;
  nn::GaussianHead blind_head{kActionDim};
  nn::Mlp blind_critic;
  nn::Mlp priv_encoder;
  nn::Mlp history_encoder;
  nn::Mlp percep_actor;
  nn::GaussianHead percep_head{kActionDim};
  nn::Mlp percep_critic;
  nn::Vae vae;
  double tau = 0.0;

  int e_dim = 8;
  int history_length = 20;
  int map_dim = 0;

  int blind_obs_dim() const { return kProprioDim + 3 + e_dim + kActionDim; }
  int percep_obs_dim() const { return kProprioDim + map_dim + kActionDim; }
  int critic_obs_dim() const { return kProprioDim + 3 + e_dim + map_dim + 2 * kActionDim; }
  int window_dim() const { return history_length * kProprioDim; }

  static PolicyBundle make(const RunConfig& cfg, Rng& rng) {
    PolicyBundle b;
    b.e_dim = cfg.network.e_dim;
    b.history_length = cfg.network.history_length;
    b.map_dim = cfg.map_cfg.rows * cfg.map_cfg.cols;
    const auto act = cfg.network.activation;

    auto with = [](std::vector<int> hidden, int in, int out) {
      std::vector<int> sizes;
      sizes.push_back(in);
      for (int h : hidden) sizes.push_back(h);
      sizes.push_back(out);
      return sizes;
    };
    // Actors start near the default posture: a small output layer keeps the
    // initial policy close to standing.
    auto shrink_last_layer = [](nn::Mlp& m, double scale) {
      const int no = m.sizes.back();
      const int ni = m.sizes[m.sizes.size() - 2];
      double* last = m.params.data() + m.params.size() - static_cast<size_t>(no) * (ni + 1);
      for (int i = 0; i < no * (ni + 1); ++i) last[i] *= scale;
    };
    b.blind_actor = nn::Mlp::make(with(cfg.network.actor_hidden, b.blind_obs_dim(), kActionDim), act, rng);
    shrink_last_layer(b.blind_actor, 0.1);
    b.blind_critic = nn::Mlp::make(with(cfg.network.critic_hidden, b.critic_obs_dim(), 1), act, rng);
    b.priv_encoder =
        nn::Mlp::make(with(cfg.network.priv_encoder_hidden, DomainParams::privileged_dim(), b.e_dim),
                      act, rng);
    b.history_encoder = nn::Mlp::make(
        with(cfg.network.history_encoder_hidden, b.window_dim(), 3 + b.e_dim), act, rng);
    b.percep_actor =
        nn::Mlp::make(with(cfg.network.actor_hidden, b.percep_obs_dim(), kActionDim), act, rng);
    shrink_last_layer(b.percep_actor, 0.1);
    b.percep_critic = nn::Mlp::make(with(cfg.network.critic_hidden, b.critic_obs_dim(), 1), act, rng);
    b.vae = nn::Vae::make(b.map_dim, cfg.network.vae_hidden, cfg.network.vae_latent, act, rng,
                          cfg.network.vae_beta);
    return b;
  }

  void add_to_checkpoint(CheckpointContainer& c) const {
    auto put = [&c](const std::string& name, const std::vector<double>& v) {
      c.add_f64(name, {v.size()}, v);
    };
    put("blind.actor", blind_actor.params);
    put("blind.logstd", blind_head.log_std);
    put("blind.critic", blind_critic.params);
    put("blind.priv", priv_encoder.params);
    put("blind.history", history_encoder.params);
    put("percep.actor", percep_actor.params);
    put("percep.logstd", percep_head.log_std);
    put("percep.critic", percep_critic.params);
    put("vae.encoder", vae.encoder.params);
    put("vae.decoder", vae.decoder.params);
  }

  void load_from_checkpoint(const CheckpointContainer& c) {
    auto get = [&c](const std::string& name, std::vector<double>& v) {
      const ParamBlock& b = c.require(name);
      check(b.f64.size() == v.size(), "checkpoint schema error: block '" + name + "' has " +
                                          std::to_string(b.f64.size()) + " values, expected " +
                                          std::to_string(v.size()));
      v = b.f64;
    };
    get("blind.actor", blind_actor.params);
    get("blind.logstd", blind_head.log_std);
    get("blind.critic", blind_critic.params);
    get("blind.priv", priv_encoder.params);
    get("blind.history", history_encoder.params);
    if (c.stage >= 2) {
      get("percep.actor", percep_actor.params);
      get("percep.logstd", percep_head.log_std);
      get("percep.critic", percep_critic.params);
    }
    get("vae.encoder", vae.encoder.params);
    get("vae.decoder", vae.decoder.params);
    tau = c.tau;
  }
};

// ---------------------------------------------------------------------------
// Vectorised environment slot: env plus the per-env training bookkeeping.

struct EnvSlot {
  QuadrupedEnv env;
  std::vector<double> window;  // zero-padded history of proprio frames
  std::vector<double> a_blind_prev, a_percep_prev;
  double ep_return = 0.0;
  long ep_len = 0;

  void clear_episode(int window_dim) {
    window.assign(window_dim, 0.0);
    a_blind_prev.assign(kActionDim, 0.0);
    a_percep_prev.assign(kActionDim, 0.0);
    ep_return = 0.0;
    ep_len = 0;
  }

  void push_frame(const std::vector<double>& o) {
    // Window layout: oldest frame first; the current frame occupies the tail.
    std::copy(window.begin() + kProprioDim, window.end(), window.begin());
    std::copy(o.begin(), o.end(), window.end() - kProprioDim);
  }
};

/// Rolling statistics over recently completed episodes.
struct EpisodeStats {
  std::deque<double> returns;
  std::deque<double> lengths;
  static constexpr size_t kWindow = 100;

  void record(double ret, double len) {
    returns.push_back(ret);
    lengths.push_back(len);
    while (returns.size() > kWindow) {
      returns.pop_front();
      lengths.pop_front();
    }
  }
  double mean_return() const {
    if (returns.empty()) return 0.0;
    double s = 0;
    for (double r : returns) s += r;
    return s / returns.size();
  }
  double mean_length() const {
    if (lengths.empty()) return 0.0;
    double s = 0;
    for (double l : lengths) s += l;
    return s / lengths.size();
  }
};

// ---------------------------------------------------------------------------
// Patch samplers used for VAE calibration and the familiarity checks.

/// A corrupted robot-centric patch on a freshly sampled terrain of the given
/// phase, posed somewhere along the course.
inline std::vector<double> sample_terrain_patch(TrainPhase phase, const RunConfig& cfg, Rng& rng) {
  const double difficulty = rng.uniform();
  TerrainSpec spec = sample_terrain_spec(phase, difficulty, rng, cfg.ranges, cfg.terrain);
  const Heightfield hf = generate_heightfield(spec, cfg.terrain, cfg.ranges);
  BasePose pose;
  pose.x = rng.uniform(hf.spawn_x, hf.goal_x);
  pose.y = hf.spawn_y + rng.uniform(-0.5, 0.5);
  pose.yaw = rng.uniform(-0.5, 0.5);
  pose.z = height_at(hf, pose.x, pose.y) + 0.31;
  ElevationMap truth = extract_elevation_map(hf, pose, cfg.map_cfg);
  return corrupt_elevation_map(truth, cfg.noise, rng).grid;
}

/// A patch of the named obstacle kind, posed so the obstacle is in view.
inline std::vector<double> sample_obstacle_patch(TerrainKind kind, const RunConfig& cfg, Rng& rng) {
  const double difficulty = rng.uniform();
  TerrainSpec spec;
  spec.kind = kind;
  spec.difficulty = difficulty;
  spec.seed = rng.next_u64();
  spec.pit_height = lerp(cfg.ranges.pit_height_m[0], cfg.ranges.pit_height_m[1], difficulty);
  spec.gap_width = lerp(cfg.ranges.gap_width_m[0], cfg.ranges.gap_width_m[1], difficulty);
  spec.pillar_size = lerp(cfg.ranges.pillar_size_m[0], cfg.ranges.pillar_size_m[1], difficulty);
  spec.pillar_spacing = lerp(cfg.ranges.pillar_spacing_m[0], cfg.ranges.pillar_spacing_m[1], difficulty);
  spec.slope_incl_deg = lerp(cfg.ranges.slope_incl_deg[0], cfg.ranges.slope_incl_deg[1], difficulty);
  spec.stair_step_height = lerp(cfg.ranges.stair_height_m[0], cfg.ranges.stair_height_m[1], difficulty);
  spec.stair_step_width = cfg.terrain.stair_width;
  spec.discrete_max_height =
      lerp(cfg.ranges.discrete_height_m[0], cfg.ranges.discrete_height_m[1], difficulty);
  const Heightfield hf = generate_heightfield(spec, cfg.terrain, cfg.ranges);
  // Imminent-approach pose: the obstacle fills the forward rows, as seen when
  // the policy has to commit to it.
  BasePose pose;
  pose.x = hf.obstacle_x0 - rng.uniform(0.1, 1.2);
  pose.y = hf.spawn_y + rng.uniform(-0.5, 0.5);
  pose.yaw = rng.uniform(-0.3, 0.3);
  pose.z = height_at(hf, pose.x, pose.y) + 0.31;
  ElevationMap truth = extract_elevation_map(hf, pose, cfg.map_cfg);
  return corrupt_elevation_map(truth, cfg.noise, rng).grid;
}

// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<IterationStats> iters;
  std::string checkpoint_path;
  double tau = 0.0;
};

/// Shared two-policy trainer. Stage 1 runs the blind agent alone on easy
/// terrain while the VAE memorizes it; stage 2 loads a stage-1 checkpoint,
/// adds the perceptive agent on the full terrain mix, and gates its action
/// magnitude by VAE familiarity.
class Trainer {
 public:
  Trainer(const ResolvedConfig& rc, Stage stage) : rc_(rc), cfg_(rc.cfg), stage_(stage) {
    map_dim_ = cfg_.map_cfg.rows * cfg_.map_cfg.cols;
    stage_cfg_ = stage_ == Stage::One ? stage1_ppo() : stage2_ppo();
  }

  const RunConfig& cfg() const { return cfg_; }
  PolicyBundle& bundle() { return bundle_; }
  const std::vector<IterationStats>& history() const { return history_; }

  rl::PpoConfig stage1_ppo() const {
    rl::PpoConfig p = cfg_.stage1.ppo;
    return p;
  }
  rl::PpoConfig stage2_ppo() const {
    rl::PpoConfig p = cfg_.stage2.ppo;
    p.adaptive_lr = false;
    return p;
  }

  /// Fresh start: build nets, envs and optimizer state from the seed.
  void initialize() {
    Rng init_rng = Rng::derive(cfg_.seed, 0x1111);
    bundle_ = PolicyBundle::make(cfg_, init_rng);
    blind_lr_ = cfg_.stage1.ppo.learning_rate;
    percep_lr_ = cfg_.stage2.percep_learning_rate;
    if (stage_ == Stage::Two) blind_lr_ = cfg_.stage2.blind_learning_rate;
    setup_optimizers();
    setup_streams();
    const int n = stage_ == Stage::One ? cfg_.stage1.num_envs : cfg_.stage2.num_envs;
    envs_.resize(n);
    for (int e = 0; e < n; ++e) {
      envs_[e].env.cfg = cfg_.env;
      envs_[e].env.reward_cfg = cfg_.rewards;
      envs_[e].env.map_cfg = cfg_.map_cfg;
      envs_[e].env.percep.noise = cfg_.noise;
      envs_[e].env.rng = Rng::derive(cfg_.seed, 0xe000, static_cast<uint64_t>(e));
      new_episode(envs_[e]);
    }
    iteration_ = 0;
  }

  /// Stage 2 entry: adopt the stage-1 weights (VAE frozen from here on); the
  /// perceptive agent keeps its fresh initialization.
  void load_stage1(const CheckpointContainer& ckpt) {
    check(ckpt.stage == 1, "train_stage2 requires a stage-1 checkpoint");
    validate_checkpoint_schema(ckpt);
    bundle_.load_from_checkpoint(ckpt);
    if (cfg_.stage2.tau_override >= 0.0) bundle_.tau = cfg_.stage2.tau_override;
  }

  void build_familiar_probe() {
    Rng probe_rng = Rng::derive(cfg_.seed, 0x9206e);
    const int n = cfg_.stage2.familiar_probe_size;
    probe_percep_.assign(static_cast<size_t>(n) * bundle_.percep_obs_dim(), 0.0);
    probe_I_.assign(n, 0);
    // Drive the loaded blind policy over stage-1 terrain and snapshot the
    // perceptive observations it would have seen.
    EnvSlot slot;
    slot.env.cfg = cfg_.env;
    slot.env.reward_cfg = cfg_.rewards;
    slot.env.map_cfg = cfg_.map_cfg;
    slot.env.rng = Rng::derive(cfg_.seed, 0x9206f);
    slot.env.percep.noise = cfg_.noise;
    int filled = 0;
    while (filled < n) {
      new_episode(slot, TrainPhase::Stage1, &probe_rng);
      for (int t = 0; t < 40 && filled < n; ++t) {
        StepData d = act_and_step(slot, /*use_percep=*/false, /*deterministic=*/true);
        if (t >= 8) {  // skip the settling transient
          std::copy(d.obs.s_percep.begin(), d.obs.s_percep.end(),
                    probe_percep_.begin() + static_cast<size_t>(filled) * bundle_.percep_obs_dim());
          const double E = reconstruction_error(bundle_.vae, d.map);
          probe_I_[filled] = penalty_indicator(E, bundle_.tau);
          ++filled;
        }
        if (d.done) break;
      }
    }
  }

  /// Mean gated squared perceptive-policy mean action over the fixed probe.
  double familiar_probe_penalty() {
    if (probe_I_.empty()) return 0.0;
    const int n = static_cast<int>(probe_I_.size());
    std::vector<int> I(probe_I_.begin(), probe_I_.end());
    std::vector<double> means(static_cast<size_t>(n) * kActionDim);
    for (int i = 0; i < n; ++i) {
      std::span<const double> o(probe_percep_.data() + static_cast<size_t>(i) * bundle_.percep_obs_dim(),
                                bundle_.percep_obs_dim());
      const std::vector<double> mu = bundle_.percep_actor.forward(o);
      std::copy(mu.begin(), mu.end(), means.begin() + static_cast<size_t>(i) * kActionDim);
    }
    return cooperation_penalty(means, n, kActionDim, I);
  }

  /// One training iteration: rollout, (stage 2) regularizer inputs, updates.
  IterationStats run_iteration() {
    const auto t0 = std::chrono::steady_clock::now();
    iteration_ += 1;

    collect_rollout();

    IterationStats s;
    s.iteration = iteration_;

    if (stage_ == Stage::Two) {
      fill_regularizer_inputs();
      double P = 0.0, Isum = 0.0;
      for (int i = 0; i < buffer_.samples(); ++i) {
        if (buffer_.I[i]) {
          double row = 0;
          for (int j = 0; j < kActionDim; ++j) {
            const double a = buffer_.a_percep[static_cast<size_t>(i) * kActionDim + j];
            row += a * a;
          }
          P += row;
        }
        Isum += buffer_.I[i];
      }
      s.mean_P = P / buffer_.samples();
      s.mean_I = Isum / buffer_.samples();
    }

    const rl::UpdateStats blind_stats = update_blind();
    s.blind_surrogate = blind_stats.mean(blind_stats.surrogate);
    s.blind_value = blind_stats.mean(blind_stats.value_loss);
    s.blind_entropy = blind_stats.mean(blind_stats.entropy);
    s.blind_kl = blind_stats.mean(blind_stats.approx_kl);
    if (stage_ == Stage::One && stage_cfg_.adaptive_lr) blind_lr_ = blind_stats.lr_final;
    s.blind_lr = blind_lr_;
    double max_norm = 0;
    for (double g : blind_stats.grad_norm) max_norm = std::max(max_norm, g);

    if (stage_ == Stage::Two) {
      const rl::UpdateStats percep_stats = update_percep();
      s.percep_surrogate = percep_stats.mean(percep_stats.surrogate);
      s.percep_value = percep_stats.mean(percep_stats.value_loss);
      s.percep_entropy = percep_stats.mean(percep_stats.entropy);
      s.percep_kl = percep_stats.mean(percep_stats.approx_kl);
      s.percep_lr = percep_lr_;
      for (double g : percep_stats.grad_norm) max_norm = std::max(max_norm, g);
      s.probe_P = familiar_probe_penalty();
    } else {
      s.vae_loss = train_vae();
    }
    s.max_grad_norm = max_norm;

    s.mean_return = episode_stats_.mean_return();
    s.mean_ep_len = episode_stats_.mean_length();
    double step_sum = 0;
    for (double r : buffer_.reward) step_sum += r;
    s.mean_step_reward = step_sum / buffer_.samples();

    s.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history_.push_back(s);
    return s;
  }

  double tau() const { return bundle_.tau; }
  long iteration() const { return iteration_; }

  /// Maps encountered while the trained blind policy walks fresh stage-1
  /// terrain; this is the distribution the threshold is calibrated against.
  std::vector<std::vector<double>> policy_visited_maps(int n, uint64_t stream) {
    Rng spec_rng = Rng::derive(cfg_.seed, stream);
    EnvSlot slot;
    slot.env.cfg = cfg_.env;
    slot.env.reward_cfg = cfg_.rewards;
    slot.env.map_cfg = cfg_.map_cfg;
    slot.env.percep.noise = cfg_.noise;
    slot.env.rng = Rng::derive(cfg_.seed, stream ^ 0x5a5a);
    std::vector<std::vector<double>> maps;
    maps.reserve(n);
    while (static_cast<int>(maps.size()) < n) {
      new_episode(slot, TrainPhase::Stage1, &spec_rng);
      for (int t = 0; t < 300 && static_cast<int>(maps.size()) < n; ++t) {
        const StepData d = act_and_step(slot, /*use_percep=*/false, /*deterministic=*/true);
        if (t % 5 == 4) maps.push_back(d.map);
        if (d.done) break;
      }
    }
    return maps;
  }

  /// Calibrate the familiarity threshold on maps seen while testing the
  /// trained policy on stage-1 terrain.
  void calibrate() {
    const auto maps = policy_visited_maps(cfg_.calibration.tau_patches, 0xca11b);
    bundle_.tau =
        calibrate_tau(bundle_.vae, [&](int i) { return maps[i]; }, cfg_.calibration.tau_patches);
  }

  // --- checkpointing -------------------------------------------------------

  CheckpointContainer make_checkpoint() const {
    CheckpointContainer c;
    c.stage = stage_ == Stage::One ? 1 : 2;
    c.iteration = static_cast<uint64_t>(iteration_);
    c.tau = bundle_.tau;
    c.config_text = rc_.canonical_text();
    bundle_.add_to_checkpoint(c);

    c.add_f64("adam.blind.m", {adam_blind_.m.size()}, adam_blind_.m);
    c.add_f64("adam.blind.v", {adam_blind_.v.size()}, adam_blind_.v);
    c.add_f64("adam.percep.m", {adam_percep_.m.size()}, adam_percep_.m);
    c.add_f64("adam.percep.v", {adam_percep_.v.size()}, adam_percep_.v);
    c.add_f64("adam.vae.m", {adam_vae_.m.size()}, adam_vae_.m);
    c.add_f64("adam.vae.v", {adam_vae_.v.size()}, adam_vae_.v);
    c.add_u64("adam.t", {3},
              {static_cast<uint64_t>(adam_blind_.t), static_cast<uint64_t>(adam_percep_.t),
               static_cast<uint64_t>(adam_vae_.t)});
    c.add_f64("train.lr", {2}, {blind_lr_, percep_lr_});
    c.add_f64("train.vnorm", {2, 3},
              {vnorm_blind_.mean, vnorm_blind_.var, static_cast<double>(vnorm_blind_.count),
               vnorm_percep_.mean, vnorm_percep_.var, static_cast<double>(vnorm_percep_.count)});

    c.add_rng("train.vae", vae_rng_);
    c.add_rng("train.vae_patches", vae_patch_rng_);
    c.add_rng("train.blind", blind_rng_);
    c.add_rng("train.percep", percep_rng_);

    // Episode statistics so resumed metrics match an uninterrupted run.
    c.add_f64("train.ep_returns", {episode_stats_.returns.size()},
              std::vector<double>(episode_stats_.returns.begin(), episode_stats_.returns.end()));
    c.add_f64("train.ep_lengths", {episode_stats_.lengths.size()},
              std::vector<double>(episode_stats_.lengths.begin(), episode_stats_.lengths.end()));

    serialize_envs(c);
    if (!probe_I_.empty()) {
      c.add_f64("probe.s_percep", {probe_I_.size(), static_cast<uint64_t>(bundle_.percep_obs_dim())},
                probe_percep_);
      c.add_u64("probe.indicators", {probe_I_.size()},
                std::vector<uint64_t>(probe_I_.begin(), probe_I_.end()));
    }
    return c;
  }

  void restore_checkpoint(const CheckpointContainer& c) {
    check(c.stage == static_cast<uint32_t>(stage_ == Stage::One ? 1 : 2),
          "checkpoint stage does not match the trainer stage");
    validate_checkpoint_schema(c);
    bundle_.load_from_checkpoint(c);
    iteration_ = static_cast<long>(c.iteration);

    auto getv = [&c](const std::string& n) { return c.require(n).f64; };
    adam_blind_.m = getv("adam.blind.m");
    adam_blind_.v = getv("adam.blind.v");
    adam_percep_.m = getv("adam.percep.m");
    adam_percep_.v = getv("adam.percep.v");
    adam_vae_.m = getv("adam.vae.m");
    adam_vae_.v = getv("adam.vae.v");
    const auto& t = c.require("adam.t").u64;
    adam_blind_.t = static_cast<long>(t[0]);
    adam_percep_.t = static_cast<long>(t[1]);
    adam_vae_.t = static_cast<long>(t[2]);
    const auto& lr = c.require("train.lr").f64;
    blind_lr_ = lr[0];
    percep_lr_ = lr[1];
    const auto& vn = c.require("train.vnorm").f64;
    vnorm_blind_.mean = vn[0];
    vnorm_blind_.var = vn[1];
    vnorm_blind_.count = static_cast<long>(vn[2]);
    vnorm_percep_.mean = vn[3];
    vnorm_percep_.var = vn[4];
    vnorm_percep_.count = static_cast<long>(vn[5]);

    vae_rng_ = c.require_rng("train.vae");
    vae_patch_rng_ = c.require_rng("train.vae_patches");
    blind_rng_ = c.require_rng("train.blind");
    percep_rng_ = c.require_rng("train.percep");

    episode_stats_.returns.clear();
    episode_stats_.lengths.clear();
    for (double r : c.require("train.ep_returns").f64) episode_stats_.returns.push_back(r);
    for (double l : c.require("train.ep_lengths").f64) episode_stats_.lengths.push_back(l);

    restore_envs(c);
    if (const ParamBlock* p = c.find("probe.s_percep")) {
      probe_percep_ = p->f64;
      probe_I_.clear();
      for (uint64_t v : c.require("probe.indicators").u64) probe_I_.push_back(static_cast<uint8_t>(v));
    }
  }

  // --- pieces used by stage loops and tests --------------------------------

  struct StepData {
    ObservationSet obs;
    std::vector<double> map;
    std::vector<double> a_blind, a_percep;
    double logp_blind = 0, logp_percep = 0;
    double reward = 0;
    bool done = false;
    TerminationReason reason = TerminationReason::None;
  };

  /// Policy forward + env step for one slot. Deterministic mode uses the
  /// policy means and the deployable history-encoder latents.
  StepData act_and_step(EnvSlot& slot, bool use_percep, bool deterministic) {
    StepData d;
    const std::vector<double> o =
        assemble_proprio(slot.env.st, slot.env.cmd, slot.env.omega_cmd_effective(), cfg_.env);
    slot.push_frame(o);

    std::vector<double> v_hat, e_hat;
    roa_estimates(bundle_.history_encoder, slot.window, v_hat, e_hat);
    const std::vector<double> priv_vec = slot.env.dp.privileged_vector();
    const std::vector<double> e_true = bundle_.priv_encoder.forward(priv_vec);
    const bool history_step =
        deterministic ||
        (slot.env.st.step_count % (stage_ == Stage::One ? cfg_.stage1.history_latent_every
                                                        : cfg_.stage2.history_latent_every) == 0);
    const std::vector<double>& e_used = history_step ? e_hat : e_true;
    const auto vb = body_velocity(slot.env.st);
    const std::vector<double> v_true = {vb[0], vb[1], vb[2]};

    d.obs = assemble_observations(o, slot.env.percep.visible, v_hat, e_used, v_true, e_true,
                                  slot.a_blind_prev, slot.a_percep_prev);
    d.map = slot.env.percep.visible.grid;

    const std::vector<double> mean_b = bundle_.blind_actor.forward(d.obs.s_blind);
    if (deterministic) {
      d.a_blind = mean_b;
      d.logp_blind = bundle_.blind_head.log_prob(mean_b, d.a_blind);
    } else {
      d.a_blind = bundle_.blind_head.sample(mean_b, slot.env.rng);
      d.logp_blind = bundle_.blind_head.log_prob(mean_b, d.a_blind);
    }

    if (use_percep) {
      const std::vector<double> mean_p = bundle_.percep_actor.forward(d.obs.s_percep);
      if (deterministic) {
        d.a_percep = mean_p;
      } else {
        d.a_percep = bundle_.percep_head.sample(mean_p, slot.env.rng);
      }
      d.logp_percep = bundle_.percep_head.log_prob(mean_p, d.a_percep);
    } else {
      d.a_percep.assign(kActionDim, 0.0);
    }

    const std::vector<double> a = combine_actions(
        d.a_blind, d.a_percep, use_percep ? Stage::Two : Stage::One);
    const StepResult r = slot.env.step(a);
    d.reward = r.reward.total;
    d.done = r.done;
    d.reason = r.reason;

    slot.a_blind_prev = d.a_blind;
    slot.a_percep_prev = d.a_percep;
    slot.ep_return += d.reward;
    slot.ep_len += 1;
    return d;
  }

  /// Sample a fresh episode for the slot: terrain, domain params, reset.
  void new_episode(EnvSlot& slot, TrainPhase phase_override = TrainPhase::Stage1,
                   Rng* spec_rng = nullptr) {
    const TrainPhase phase =
        spec_rng ? phase_override : (stage_ == Stage::One ? TrainPhase::Stage1 : TrainPhase::Stage2);
    Rng& rng = spec_rng ? *spec_rng : slot.env.rng;
    const int ramp = stage_ == Stage::One ? cfg_.stage1.difficulty_ramp_iters
                                          : cfg_.stage2.difficulty_ramp_iters;
    const double dmax = ramp > 0 ? std::min(1.0, (iteration_ + 1.0) / ramp) : 1.0;
    const double difficulty = rng.uniform() * dmax;
    const TerrainSpec spec = sample_terrain_spec(phase, difficulty, rng, cfg_.ranges, cfg_.terrain);
    const Heightfield hf = generate_heightfield(spec, cfg_.terrain, cfg_.ranges);
    const DomainParams dp = sample_domain_params(rng, cfg_.domain_rand);
    slot.env.reset(hf, dp, slot.env.rng);
    slot.clear_episode(bundle_.window_dim());
  }

 private:
  void setup_optimizers() {
    adam_blind_.init(bundle_.blind_actor.params.size() + bundle_.blind_head.log_std.size() +
                     bundle_.blind_critic.params.size() + bundle_.priv_encoder.params.size() +
                     bundle_.history_encoder.params.size());
    adam_percep_.init(bundle_.percep_actor.params.size() + bundle_.percep_head.log_std.size() +
                      bundle_.percep_critic.params.size());
    adam_vae_.init(bundle_.vae.encoder.params.size() + bundle_.vae.decoder.params.size());
  }

  void setup_streams() {
    vae_rng_ = Rng::derive(cfg_.seed, 0x7ae);
    vae_patch_rng_ = Rng::derive(cfg_.seed, 0x7af);
    blind_rng_ = Rng::derive(cfg_.seed, 0xb11d);
    percep_rng_ = Rng::derive(cfg_.seed, 0x9e2ce);
  }

  void collect_rollout() {
    const int n = static_cast<int>(envs_.size());
    const int T = stage_cfg_.rollout_steps;
    buffer_.allocate(n, T, bundle_.blind_obs_dim(), bundle_.percep_obs_dim(),
                     bundle_.critic_obs_dim(), map_dim_, bundle_.window_dim(),
                     DomainParams::privileged_dim());

    const bool use_percep = stage_ == Stage::Two;
    for (int e = 0; e < n; ++e) {
      EnvSlot& slot = envs_[e];
      for (int t = 0; t < T; ++t) {
        const int idx = buffer_.index(e, t);
        const StepData d = act_and_step(slot, use_percep, /*deterministic=*/false);
        // slot.window now holds exactly the frames the history encoder saw.
        std::copy(slot.window.begin(), slot.window.end(),
                  buffer_.windows.begin() + static_cast<size_t>(idx) * buffer_.window_dim);
        const std::vector<double> priv_vec = slot.env.dp.privileged_vector();
        std::copy(priv_vec.begin(), priv_vec.end(),
                  buffer_.priv.begin() + static_cast<size_t>(idx) * buffer_.priv_dim);

        std::copy(d.obs.s_blind.begin(), d.obs.s_blind.end(),
                  buffer_.s_blind.begin() + static_cast<size_t>(idx) * buffer_.blind_dim);
        std::copy(d.obs.s_percep.begin(), d.obs.s_percep.end(),
                  buffer_.s_percep.begin() + static_cast<size_t>(idx) * buffer_.percep_dim);
        std::copy(d.obs.s_critic.begin(), d.obs.s_critic.end(),
                  buffer_.s_critic.begin() + static_cast<size_t>(idx) * buffer_.critic_dim);
        std::copy(d.map.begin(), d.map.end(),
                  buffer_.maps.begin() + static_cast<size_t>(idx) * buffer_.map_dim);
        std::copy(d.a_blind.begin(), d.a_blind.end(),
                  buffer_.a_blind.begin() + static_cast<size_t>(idx) * kActionDim);
        std::copy(d.a_percep.begin(), d.a_percep.end(),
                  buffer_.a_percep.begin() + static_cast<size_t>(idx) * kActionDim);
        buffer_.logp_blind[idx] = d.logp_blind;
        buffer_.logp_percep[idx] = d.logp_percep;
        buffer_.value_blind[idx] =
            vnorm_blind_.denormalize(bundle_.blind_critic.forward(d.obs.s_critic)[0]);
        if (use_percep)
          buffer_.value_percep[idx] =
              vnorm_percep_.denormalize(bundle_.percep_critic.forward(d.obs.s_critic)[0]);
        // The regression target is the velocity the critic saw when acting.
        std::copy(d.obs.s_critic.begin() + kProprioDim, d.obs.s_critic.begin() + kProprioDim + 3,
                  buffer_.v_true.begin() + static_cast<size_t>(idx) * 3);
        buffer_.reward[idx] = d.reward;
        buffer_.done[idx] = d.done ? 1 : 0;

        if (d.done) {
          episode_stats_.record(slot.ep_return, static_cast<double>(slot.ep_len));
          new_episode(slot);
        }
      }
      // Bootstrap values from the post-rollout state.
      const std::vector<double> o =
          assemble_proprio(slot.env.st, slot.env.cmd, slot.env.omega_cmd_effective(), cfg_.env);
      std::vector<double> window = slot.window;
      std::copy(window.begin() + kProprioDim, window.end(), window.begin());
      std::copy(o.begin(), o.end(), window.end() - kProprioDim);
      std::vector<double> v_hat, e_hat;
      roa_estimates(bundle_.history_encoder, window, v_hat, e_hat);
      const std::vector<double> e_true = bundle_.priv_encoder.forward(slot.env.dp.privileged_vector());
      const auto vb = body_velocity(slot.env.st);
      const std::vector<double> v_true = {vb[0], vb[1], vb[2]};
      const ObservationSet obs =
          assemble_observations(o, slot.env.percep.visible, v_hat, e_true, v_true, e_true,
                                slot.a_blind_prev, slot.a_percep_prev);
      buffer_.bootstrap_blind[e] =
          vnorm_blind_.denormalize(bundle_.blind_critic.forward(obs.s_critic)[0]);
      if (use_percep)
        buffer_.bootstrap_percep[e] =
            vnorm_percep_.denormalize(bundle_.percep_critic.forward(obs.s_critic)[0]);
    }
  }

  void fill_regularizer_inputs() {
    const double tau = bundle_.tau;
    for (int i = 0; i < buffer_.samples(); ++i) {
      std::span<const double> map(buffer_.maps.data() + static_cast<size_t>(i) * buffer_.map_dim,
                                  buffer_.map_dim);
      buffer_.E[i] = reconstruction_error(bundle_.vae, map);
      buffer_.I[i] = static_cast<uint8_t>(penalty_indicator(buffer_.E[i], tau));
    }
  }

  rl::UpdateStats update_blind() {
    rl::AgentUpdateJob job;
    job.actor = &bundle_.blind_actor;
    job.head = &bundle_.blind_head;
    job.critic = &bundle_.blind_critic;
    job.extra_params = {&bundle_.priv_encoder.params, &bundle_.history_encoder.params};
    priv_grads_.assign(bundle_.priv_encoder.params.size(), 0.0);
    hist_grads_.assign(bundle_.history_encoder.params.size(), 0.0);
    job.extra_grads = {&priv_grads_, &hist_grads_};
    job.adam = &adam_blind_;
    job.obs = &buffer_.s_blind;
    job.obs_dim = buffer_.blind_dim;
    job.critic_obs = &buffer_.s_critic;
    job.critic_obs_dim = buffer_.critic_dim;
    job.actions = &buffer_.a_blind;
    job.old_logp = &buffer_.logp_blind;
    buffer_.gae(buffer_.value_blind, buffer_.bootstrap_blind, stage_cfg_.gamma,
                stage_cfg_.gae_lambda, job.advantages, job.returns);
    vnorm_blind_.update(job.returns);
    for (auto& r : job.returns) r = vnorm_blind_.normalize(r);

    const double action_penalty = stage_ == Stage::One ? cfg_.stage1.action_penalty_coef : 0.0;
    const RoaConfig roa_cfg{bundle_.history_length, bundle_.e_dim, 0.1};
    job.extra_loss = [this, action_penalty, roa_cfg](int idx, std::span<const double> mean,
                                                     std::vector<double>& d_mean,
                                                     std::vector<double>& d_logstd, double inv_m) {
      double extra = 0.0;
      if (action_penalty > 0.0) {
        // Expected squared norm of the sampled action: |mu|^2 + sum sigma^2.
        // The variance share is tempered so the penalty does not collapse
        // exploration before a gait is found.
        const double var_share = 0.25;
        double a2 = 0.0;
        for (int j = 0; j < kActionDim; ++j) {
          a2 += mean[j] * mean[j];
          d_mean[j] += 2.0 * action_penalty * mean[j] * inv_m;
          const double var = var_share * std::exp(2.0 * bundle_.blind_head.log_std[j]);
          a2 += var;
          d_logstd[j] += action_penalty * 2.0 * var * inv_m;
        }
        extra += action_penalty * a2 * inv_m;
      }
      std::span<const double> window(
          buffer_.windows.data() + static_cast<size_t>(idx) * buffer_.window_dim,
          buffer_.window_dim);
      std::span<const double> priv(buffer_.priv.data() + static_cast<size_t>(idx) * buffer_.priv_dim,
                                   buffer_.priv_dim);
      std::span<const double> v_true(buffer_.v_true.data() + static_cast<size_t>(idx) * 3, 3);
      const RoaResult rr =
          roa_latent_loss(bundle_.history_encoder, bundle_.priv_encoder, window, priv, v_true,
                          roa_cfg, &hist_grads_, &priv_grads_, inv_m);
      extra += rr.loss * inv_m;
      return extra;
    };

    rl::PpoConfig c = stage_cfg_;
    c.learning_rate = blind_lr_;
    c.adaptive_lr = stage_ == Stage::One && cfg_.stage1.ppo.adaptive_lr;
    return rl::ppo_update(job, c, blind_rng_);
  }

  rl::UpdateStats update_percep() {
    rl::AgentUpdateJob job;
    job.actor = &bundle_.percep_actor;
    job.head = &bundle_.percep_head;
    job.critic = &bundle_.percep_critic;
    job.adam = &adam_percep_;
    job.obs = &buffer_.s_percep;
    job.obs_dim = buffer_.percep_dim;
    job.critic_obs = &buffer_.s_critic;
    job.critic_obs_dim = buffer_.critic_dim;
    job.actions = &buffer_.a_percep;
    job.old_logp = &buffer_.logp_percep;
    buffer_.gae(buffer_.value_percep, buffer_.bootstrap_percep, stage_cfg_.gamma,
                stage_cfg_.gae_lambda, job.advantages, job.returns);
    vnorm_percep_.update(job.returns);
    for (auto& r : job.returns) r = vnorm_percep_.normalize(r);

    const double lambda_a =
        cfg_.stage2.regularizer_enabled ? cfg_.stage2.action_penalty_coef : 0.0;
    job.extra_loss = [this, lambda_a](int idx, std::span<const double> mean,
                                      std::vector<double>& d_mean, std::vector<double>& d_logstd,
                                      double inv_m) {
      if (lambda_a <= 0.0 || !buffer_.I[idx]) return 0.0;
      double a2 = 0.0;
      for (int j = 0; j < kActionDim; ++j) {
        a2 += mean[j] * mean[j];
        d_mean[j] += 2.0 * lambda_a * mean[j] * inv_m;
        const double var = std::exp(2.0 * bundle_.percep_head.log_std[j]);
        a2 += var;
        d_logstd[j] += lambda_a * 2.0 * var * inv_m;
      }
      return lambda_a * a2 * inv_m;
    };

    rl::PpoConfig c = stage_cfg_;
    c.learning_rate = percep_lr_;
    c.adaptive_lr = false;
    return rl::ppo_update(job, c, percep_rng_);
  }

  /// VAE minibatch training over the rollout's elevation maps, augmented
  /// with uniformly posed stage-1 patches so the whole terrain distribution
  /// is memorized, not only the states the policy happens to visit.
  double train_vae() {
    const int n_roll = buffer_.samples();
    const int n_aug = 256;
    std::vector<double> aug;
    aug.reserve(static_cast<size_t>(n_aug) * map_dim_);
    for (int i = 0; i < n_aug; ++i) {
      const std::vector<double> h = sample_terrain_patch(TrainPhase::Stage1, cfg_, vae_patch_rng_);
      aug.insert(aug.end(), h.begin(), h.end());
    }
    const int n = n_roll + n_aug;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    const int batch = 64;
    const int passes = 2;
    std::vector<double> enc_grads(bundle_.vae.encoder.params.size());
    std::vector<double> dec_grads(bundle_.vae.decoder.params.size());
    double loss_sum = 0;
    int batches = 0;
    for (int pass = 0; pass < passes; ++pass) {
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(vae_rng_.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(order[i], order[j]);
      }
      for (int start = 0; start + batch <= n; start += batch) {
        std::fill(enc_grads.begin(), enc_grads.end(), 0.0);
        std::fill(dec_grads.begin(), dec_grads.end(), 0.0);
        double loss = 0;
        for (int k = start; k < start + batch; ++k) {
          const int idx = order[k];
          const double* src = idx < n_roll
                                  ? buffer_.maps.data() + static_cast<size_t>(idx) * buffer_.map_dim
                                  : aug.data() + static_cast<size_t>(idx - n_roll) * map_dim_;
          std::span<const double> map(src, map_dim_);
          const auto res = bundle_.vae.step(map, vae_rng_, &enc_grads, &dec_grads);
          loss += res.loss;
        }
        loss /= batch;
        for (auto& g : enc_grads) g /= batch;
        for (auto& g : dec_grads) g /= batch;

        std::vector<double> flat_p(bundle_.vae.encoder.params);
        flat_p.insert(flat_p.end(), bundle_.vae.decoder.params.begin(),
                      bundle_.vae.decoder.params.end());
        std::vector<double> flat_g(enc_grads);
        flat_g.insert(flat_g.end(), dec_grads.begin(), dec_grads.end());
        adam_vae_.grad_clip = stage_cfg_.grad_clip;
        nn::adam_update(flat_p, flat_g, cfg_.stage1.vae_learning_rate, adam_vae_);
        std::copy(flat_p.begin(), flat_p.begin() + bundle_.vae.encoder.params.size(),
                  bundle_.vae.encoder.params.begin());
        std::copy(flat_p.begin() + bundle_.vae.encoder.params.size(), flat_p.end(),
                  bundle_.vae.decoder.params.begin());
        loss_sum += loss;
        ++batches;
      }
    }
    return batches ? loss_sum / batches : 0.0;
  }

  // --- env state (de)serialization for exact resume -------------------------

  void serialize_envs(CheckpointContainer& c) const {
    const int n = static_cast<int>(envs_.size());
    const int map_n = map_dim_;
    const int ring_n = cfg_.noise.update_delay_steps + 1;
    const int wcap = cfg_.env.stuck_window_steps + 1;

    std::vector<double> robot, window, prev_actions, command, dparams, tspec, percep_vis, percep_ring,
        progress, episode;
    std::vector<uint64_t> rngs, ints, tseed;
    for (int e = 0; e < n; ++e) {
      const EnvSlot& s = envs_[e];
      const RobotState& st = s.env.st;
      auto push3 = [&robot](const double* p) { robot.insert(robot.end(), p, p + 3); };
      push3(st.pos);
      push3(st.rpy);
      push3(st.vel);
      push3(st.omega);
      robot.insert(robot.end(), st.q.begin(), st.q.end());
      robot.insert(robot.end(), st.qd.begin(), st.qd.end());
      robot.insert(robot.end(), st.tau.begin(), st.tau.end());
      for (const auto& f : st.foot_pos) robot.insert(robot.end(), f.begin(), f.end());
      for (bool b : st.contact) robot.push_back(b ? 1.0 : 0.0);
      robot.insert(robot.end(), st.last_action.begin(), st.last_action.end());
      robot.push_back(static_cast<double>(st.step_count));
      robot.insert(robot.end(), s.env.q_target_prev().begin(), s.env.q_target_prev().end());
      robot.push_back(s.env.push_velocity()[0]);
      robot.push_back(s.env.push_velocity()[1]);

      window.insert(window.end(), s.window.begin(), s.window.end());
      prev_actions.insert(prev_actions.end(), s.a_blind_prev.begin(), s.a_blind_prev.end());
      prev_actions.insert(prev_actions.end(), s.a_percep_prev.begin(), s.a_percep_prev.end());
      command.push_back(s.env.cmd.vx);
      command.push_back(s.env.cmd.vy);
      command.push_back(s.env.cmd.omega_yaw);
      command.push_back(s.env.cmd.heading);

      const DomainParams& dp = s.env.dp;
      dparams.push_back(dp.base_mass_add);
      dparams.push_back(dp.com_x);
      dparams.push_back(dp.com_y);
      dparams.push_back(dp.friction);
      dparams.insert(dparams.end(), dp.motor_strength.begin(), dp.motor_strength.end());
      dparams.push_back(dp.kp_scale);
      dparams.push_back(dp.kd_scale);
      dparams.push_back(dp.init_joint_scale);
      dparams.push_back(static_cast<double>(dp.action_delay_substeps));
      dparams.push_back(static_cast<double>(dp.push_interval_steps));
      dparams.push_back(dp.push_velocity_max);

      const TerrainSpec& ts = s.env.hf.spec;
      tspec.push_back(static_cast<double>(static_cast<int>(ts.kind)));
      tspec.push_back(ts.difficulty);
      tspec.push_back(ts.slope_incl_deg);
      tspec.push_back(ts.stair_step_height);
      tspec.push_back(ts.stair_step_width);
      tspec.push_back(ts.discrete_max_height);
      tspec.push_back(ts.pit_height);
      tspec.push_back(ts.gap_width);
      tspec.push_back(ts.pillar_size);
      tspec.push_back(ts.pillar_spacing);
      tseed.push_back(ts.seed);

      percep_vis.insert(percep_vis.end(), s.env.percep.visible.grid.begin(),
                        s.env.percep.visible.grid.end());
      check(static_cast<int>(s.env.percep.ring.size()) == ring_n, "unexpected ring size");
      for (const auto& m : s.env.percep.ring)
        percep_ring.insert(percep_ring.end(), m.grid.begin(), m.grid.end());

      const auto& xs = s.env.progress().xs;
      std::vector<double> padded(wcap, 0.0);
      std::copy(xs.begin(), xs.end(), padded.begin());
      progress.insert(progress.end(), padded.begin(), padded.end());

      episode.push_back(s.ep_return);
      episode.push_back(static_cast<double>(s.ep_len));

      for (uint64_t w : s.env.rng.s) rngs.push_back(w);
      ints.push_back(static_cast<uint64_t>(s.env.percep.step));
      ints.push_back(s.env.percep.active ? 1 : 0);
      ints.push_back(static_cast<uint64_t>(s.env.percep.visible.age_steps));
      ints.push_back(static_cast<uint64_t>(xs.size()));
      ints.push_back(s.env.percep.visible.active ? 1 : 0);
    }
    const uint64_t un = static_cast<uint64_t>(n);
    c.add_f64("envs.robot", {un, robot.size() / un}, robot);
    c.add_f64("envs.window", {un, window.size() / un}, window);
    c.add_f64("envs.prev_actions", {un, 2 * kActionDim}, prev_actions);
    c.add_f64("envs.command", {un, 4}, command);
    c.add_f64("envs.domain_params", {un, dparams.size() / un}, dparams);
    c.add_f64("envs.terrain_spec", {un, 10}, tspec);
    c.add_u64("envs.terrain_seed", {un}, tseed);
    c.add_f64("envs.percep_visible", {un, static_cast<uint64_t>(map_n)}, percep_vis);
    c.add_f64("envs.percep_ring", {un, static_cast<uint64_t>(ring_n), static_cast<uint64_t>(map_n)},
              percep_ring);
    c.add_f64("envs.progress", {un, static_cast<uint64_t>(wcap)}, progress);
    c.add_f64("envs.episode", {un, 2}, episode);
    c.add_u64("envs.rng", {un, 4}, rngs);
    c.add_u64("envs.ints", {un, 5}, ints);
  }

  void restore_envs(const CheckpointContainer& c) {
    const auto& robot = c.require("envs.robot");
    const int n = static_cast<int>(robot.shape[0]);
    const int map_n = map_dim_;
    const int ring_n = cfg_.noise.update_delay_steps + 1;
    const int wcap = cfg_.env.stuck_window_steps + 1;

    envs_.assign(n, EnvSlot{});
    const auto& window = c.require("envs.window").f64;
    const auto& prev_actions = c.require("envs.prev_actions").f64;
    const auto& command = c.require("envs.command").f64;
    const auto& dparams = c.require("envs.domain_params");
    const auto& tspec = c.require("envs.terrain_spec").f64;
    const auto& tseed = c.require("envs.terrain_seed").u64;
    const auto& percep_vis = c.require("envs.percep_visible").f64;
    const auto& percep_ring = c.require("envs.percep_ring").f64;
    const auto& progress = c.require("envs.progress").f64;
    const auto& episode = c.require("envs.episode").f64;
    const auto& rngs = c.require("envs.rng").u64;
    const auto& ints = c.require("envs.ints").u64;
    const size_t robot_w = robot.shape[1];
    const size_t dp_w = dparams.shape[1];

    for (int e = 0; e < n; ++e) {
      EnvSlot& s = envs_[e];
      s.env.cfg = cfg_.env;
      s.env.reward_cfg = cfg_.rewards;
      s.env.map_cfg = cfg_.map_cfg;
      s.env.percep.noise = cfg_.noise;

      // Terrain regenerates deterministically from its spec.
      TerrainSpec ts;
      const double* tp = tspec.data() + static_cast<size_t>(e) * 10;
      ts.kind = static_cast<TerrainKind>(static_cast<int>(tp[0]));
      ts.difficulty = tp[1];
      ts.slope_incl_deg = tp[2];
      ts.stair_step_height = tp[3];
      ts.stair_step_width = tp[4];
      ts.discrete_max_height = tp[5];
      ts.pit_height = tp[6];
      ts.gap_width = tp[7];
      ts.pillar_size = tp[8];
      ts.pillar_spacing = tp[9];
      ts.seed = tseed[e];
      s.env.hf = generate_heightfield(ts, cfg_.terrain, cfg_.ranges);

      DomainParams dp;
      const double* dpp = dparams.f64.data() + static_cast<size_t>(e) * dp_w;
      dp.base_mass_add = dpp[0];
      dp.com_x = dpp[1];
      dp.com_y = dpp[2];
      dp.friction = dpp[3];
      for (int j = 0; j < kNumJoints; ++j) dp.motor_strength[j] = dpp[4 + j];
      dp.kp_scale = dpp[16];
      dp.kd_scale = dpp[17];
      dp.init_joint_scale = dpp[18];
      dp.action_delay_substeps = static_cast<int>(dpp[19]);
      dp.push_interval_steps = static_cast<int>(dpp[20]);
      dp.push_velocity_max = dpp[21];
      s.env.dp = dp;

      const double* rp = robot.f64.data() + static_cast<size_t>(e) * robot_w;
      RobotState st;
      int k = 0;
      for (int i = 0; i < 3; ++i) st.pos[i] = rp[k++];
      for (int i = 0; i < 3; ++i) st.rpy[i] = rp[k++];
      for (int i = 0; i < 3; ++i) st.vel[i] = rp[k++];
      for (int i = 0; i < 3; ++i) st.omega[i] = rp[k++];
      for (auto& v : st.q) v = rp[k++];
      for (auto& v : st.qd) v = rp[k++];
      for (auto& v : st.tau) v = rp[k++];
      for (auto& f : st.foot_pos)
        for (auto& v : f) v = rp[k++];
      for (auto& b : st.contact) b = rp[k++] != 0.0;
      for (auto& v : st.last_action) v = rp[k++];
      st.step_count = static_cast<long>(rp[k++]);
      s.env.st = st;
      std::array<double, kNumJoints> qtp{};
      for (auto& v : qtp) v = rp[k++];
      const double push_x = rp[k++];
      const double push_y = rp[k++];
      s.env.restore_internal(qtp, push_x, push_y);

      s.window.assign(window.begin() + static_cast<size_t>(e) * bundle_.window_dim(),
                      window.begin() + static_cast<size_t>(e + 1) * bundle_.window_dim());
      s.a_blind_prev.assign(prev_actions.begin() + static_cast<size_t>(e) * 2 * kActionDim,
                            prev_actions.begin() + static_cast<size_t>(e) * 2 * kActionDim + kActionDim);
      s.a_percep_prev.assign(
          prev_actions.begin() + static_cast<size_t>(e) * 2 * kActionDim + kActionDim,
          prev_actions.begin() + static_cast<size_t>(e + 1) * 2 * kActionDim);
      s.env.cmd.vx = command[e * 4 + 0];
      s.env.cmd.vy = command[e * 4 + 1];
      s.env.cmd.omega_yaw = command[e * 4 + 2];
      s.env.cmd.heading = command[e * 4 + 3];
      s.ep_return = episode[e * 2];
      s.ep_len = static_cast<long>(episode[e * 2 + 1]);

      for (int i = 0; i < 4; ++i) s.env.rng.s[i] = rngs[static_cast<size_t>(e) * 4 + i];

      PerceptionPipeline& pp = s.env.percep;
      pp.step = static_cast<int>(ints[static_cast<size_t>(e) * 5 + 0]);
      pp.active = ints[static_cast<size_t>(e) * 5 + 1] != 0;
      pp.visible = ElevationMap(cfg_.map_cfg.rows, cfg_.map_cfg.cols, cfg_.map_cfg.resolution,
                                cfg_.map_cfg.rows_behind);
      pp.visible.grid.assign(percep_vis.begin() + static_cast<size_t>(e) * map_n,
                             percep_vis.begin() + static_cast<size_t>(e + 1) * map_n);
      pp.visible.age_steps = static_cast<int>(ints[static_cast<size_t>(e) * 5 + 2]);
      pp.visible.active = ints[static_cast<size_t>(e) * 5 + 4] != 0;
      pp.ring.clear();
      for (int rix = 0; rix < ring_n; ++rix) {
        ElevationMap m(cfg_.map_cfg.rows, cfg_.map_cfg.cols, cfg_.map_cfg.resolution,
                       cfg_.map_cfg.rows_behind);
        const size_t off = (static_cast<size_t>(e) * ring_n + rix) * map_n;
        m.grid.assign(percep_ring.begin() + off, percep_ring.begin() + off + map_n);
        pp.ring.push_back(std::move(m));
      }

      ProgressWindow pw;
      pw.capacity = cfg_.env.stuck_window_steps;
      const size_t plen = ints[static_cast<size_t>(e) * 5 + 3];
      for (size_t i = 0; i < plen; ++i)
        pw.xs.push_back(progress[static_cast<size_t>(e) * wcap + i]);
      s.env.restore_progress(pw);
    }
  }

  ResolvedConfig rc_;
  RunConfig cfg_;
  Stage stage_;
  rl::PpoConfig stage_cfg_;
  int map_dim_ = 0;
  long iteration_ = 0;

  PolicyBundle bundle_;
  std::vector<EnvSlot> envs_;
  rl::RolloutBuffer buffer_;
  EpisodeStats episode_stats_;
  std::vector<IterationStats> history_;

  nn::AdamState adam_blind_, adam_percep_, adam_vae_;
  rl::ValueNormalizer vnorm_blind_, vnorm_percep_;
  double blind_lr_ = 1e-3, percep_lr_ = 1e-4;
  Rng vae_rng_, vae_patch_rng_, blind_rng_, percep_rng_;
  std::vector<double> priv_grads_, hist_grads_;

  std::vector<double> probe_percep_;
  std::vector<uint8_t> probe_I_;
};

// ---------------------------------------------------------------------------
// Stage drivers: run directory, metrics CSV, checkpoint cadence, resume.

inline void write_run_manifest(const ResolvedConfig& rc, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/manifest.json");
  check(f.good(), "cannot write manifest in " + out_dir);
  json m;
  m["config"] = rc.doc;
  m["config_hash"] = rc.hash();
  m["checkpoint_format_version"] = kCkptVersion;
  f << m.dump(2) << "\n";
}

inline TrainResult train_stage1(const ResolvedConfig& rc, const std::string& out_dir,
                                const std::string& resume_from = "",
                                const std::function<void(const IterationStats&)>& on_iter = {}) {
  Trainer tr(rc, Stage::One);
  tr.initialize();
  if (!resume_from.empty()) {
    const CheckpointContainer c = load_checkpoint(resume_from);
    tr.restore_checkpoint(c);
  }
  MetricsWriter metrics(out_dir.empty() ? "" : out_dir + "/metrics.csv");
  if (!out_dir.empty() && resume_from.empty()) write_run_manifest(rc, out_dir);

  const int total = rc.cfg.stage1.iterations;
  while (tr.iteration() < total) {
    const IterationStats s = tr.run_iteration();
    metrics.append(s);
    if (on_iter) on_iter(s);
    if (!out_dir.empty() && rc.cfg.stage1.checkpoint_every > 0 &&
        s.iteration % rc.cfg.stage1.checkpoint_every == 0 && s.iteration < total) {
      save_checkpoint(tr.make_checkpoint(), out_dir + "/stage1_iter" +
                                                std::to_string(s.iteration) + ".ckpt");
    }
  }
  tr.calibrate();

  TrainResult result;
  result.iters = tr.history();
  result.tau = tr.tau();
  if (!out_dir.empty()) {
    result.checkpoint_path = out_dir + "/stage1.ckpt";
    save_checkpoint(tr.make_checkpoint(), result.checkpoint_path);
  }
  return result;
}

inline TrainResult train_stage2(const ResolvedConfig& rc, const std::string& stage1_ckpt,
                                const std::string& out_dir, const std::string& resume_from = "",
                                const std::function<void(const IterationStats&)>& on_iter = {}) {
  Trainer tr(rc, Stage::Two);
  tr.initialize();
  if (!resume_from.empty()) {
    const CheckpointContainer c = load_checkpoint(resume_from);
    tr.restore_checkpoint(c);
  } else {
    check(!stage1_ckpt.empty(), "train_stage2 requires a stage-1 checkpoint (--from)");
    const CheckpointContainer c = load_checkpoint(stage1_ckpt);
    tr.load_stage1(c);
    tr.build_familiar_probe();
  }
  // Freeze contract: the VAE must be bitwise identical after stage 2.
  const std::vector<double> vae_enc_before = tr.bundle().vae.encoder.params;
  const std::vector<double> vae_dec_before = tr.bundle().vae.decoder.params;

  MetricsWriter metrics(out_dir.empty() ? "" : out_dir + "/metrics.csv");
  if (!out_dir.empty() && resume_from.empty()) write_run_manifest(rc, out_dir);

  const int total = rc.cfg.stage2.iterations;
  while (tr.iteration() < total) {
    const IterationStats s = tr.run_iteration();
    metrics.append(s);
    if (on_iter) on_iter(s);
    if (!out_dir.empty() && rc.cfg.stage2.checkpoint_every > 0 &&
        s.iteration % rc.cfg.stage2.checkpoint_every == 0 && s.iteration < total) {
      save_checkpoint(tr.make_checkpoint(), out_dir + "/stage2_iter" +
                                                std::to_string(s.iteration) + ".ckpt");
    }
  }
  check(tr.bundle().vae.encoder.params == vae_enc_before &&
            tr.bundle().vae.decoder.params == vae_dec_before,
        "VAE parameters changed during stage 2");

  TrainResult result;
  result.iters = tr.history();
  result.tau = tr.tau();
  if (!out_dir.empty()) {
    result.checkpoint_path = out_dir + "/stage2.ckpt";
    save_checkpoint(tr.make_checkpoint(), result.checkpoint_path);
  }
  return result;
}

}  // namespace mbc
