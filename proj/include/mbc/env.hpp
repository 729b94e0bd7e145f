#pragma once

#include <array>
#include <deque>
#include <span>
#include <vector>

#include "mbc/common.hpp"
#include "mbc/perception.hpp"
#include "mbc/terrain.hpp"

namespace mbc {

constexpr int kNumLegs = 4;
constexpr int kJointsPerLeg = 3;
constexpr int kNumJoints = kNumLegs * kJointsPerLeg;
constexpr int kActionDim = kNumJoints;

// Leg order: FL, FR, RL, RR. Joints per leg: hip roll, thigh, calf.

struct LegGeometry {
  double l1 = 0.21;
  double l2 = 0.21;
  double l_hip = 0.08;
  double hip_x = 0.19;
  double hip_y = 0.15;
  double track_width = 0.30;
};

/// Planar two-link map with a lateral hip-roll offset, in the hip frame.
inline std::array<double, 3> leg_forward_kinematics(std::span<const double> q_leg,
                                                    const LegGeometry& g = {}) {
  for (double v : q_leg) check(std::isfinite(v), "non-finite joint angle");
  const double roll = q_leg[0], hip = q_leg[1], knee = q_leg[2];
  const double x = g.l1 * std::sin(hip) + g.l2 * std::sin(hip + knee);
  const double y = g.l_hip * std::sin(roll);
  const double z = -(g.l1 * std::cos(hip) + g.l2 * std::cos(hip + knee));
  return {x, y, z};
}

struct DomainRandConfig {
  double base_mass_add_kg[2] = {0.0, 3.0};
  double com_offset_m[2] = {-0.2, 0.2};
  double ground_friction[2] = {0.6, 2.0};
  double motor_strength_scale[2] = {0.8, 1.2};
  double joint_kp_scale[2] = {0.8, 1.2};
  double joint_kd_scale[2] = {0.8, 1.2};
  double init_joint_pos_scale[2] = {0.5, 1.5};
  int action_delay_substeps[2] = {0, 4};
  int push_interval_steps = 400;  // 8 s at 50 Hz
  double push_velocity_mps[2] = {0.0, 0.5};
};

struct DomainParams {
  double base_mass_add = 0.0;
  double com_x = 0.0, com_y = 0.0;
  double friction = 1.0;
  std::array<double, kNumJoints> motor_strength{};
  double kp_scale = 1.0;
  double kd_scale = 1.0;
  double init_joint_scale = 1.0;
  int action_delay_substeps = 0;
  int push_interval_steps = 400;
  double push_velocity_max = 0.5;

  DomainParams() { motor_strength.fill(1.0); }

  /// Privileged constituents (mass, CoM, friction, motor strength) as the
  /// encoder input vector.
  std::vector<double> privileged_vector() const {
    std::vector<double> v;
    v.reserve(3 + 1 + kNumJoints);
    v.push_back(base_mass_add);
    v.push_back(com_x);
    v.push_back(com_y);
    v.push_back(friction);
    for (double m : motor_strength) v.push_back(m);
    return v;
  }
  static int privileged_dim() { return 4 + kNumJoints; }
};

inline DomainParams sample_domain_params(Rng& rng, const DomainRandConfig& cfg = {}) {
  DomainParams dp;
  dp.base_mass_add = rng.uniform(cfg.base_mass_add_kg[0], cfg.base_mass_add_kg[1]);
  dp.com_x = rng.uniform(cfg.com_offset_m[0], cfg.com_offset_m[1]);
  dp.com_y = rng.uniform(cfg.com_offset_m[0], cfg.com_offset_m[1]);
  dp.friction = rng.uniform(cfg.ground_friction[0], cfg.ground_friction[1]);
  for (auto& m : dp.motor_strength)
    m = rng.uniform(cfg.motor_strength_scale[0], cfg.motor_strength_scale[1]);
  dp.kp_scale = rng.uniform(cfg.joint_kp_scale[0], cfg.joint_kp_scale[1]);
  dp.kd_scale = rng.uniform(cfg.joint_kd_scale[0], cfg.joint_kd_scale[1]);
  dp.init_joint_scale = rng.uniform(cfg.init_joint_pos_scale[0], cfg.init_joint_pos_scale[1]);
  const int lo = cfg.action_delay_substeps[0], hi = cfg.action_delay_substeps[1];
  dp.action_delay_substeps = lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  dp.push_interval_steps = cfg.push_interval_steps;
  dp.push_velocity_max = cfg.push_velocity_mps[1];
  return dp;
}

struct Command {
  double vx = 0.0;
  double vy = 0.0;
  double omega_yaw = 0.0;  // sampled; heading controller overrides when on
  double heading = 0.0;
};

struct RobotState {
  double pos[3] = {0, 0, 0};
  double rpy[3] = {0, 0, 0};
  double vel[3] = {0, 0, 0};    // world frame
  double omega[3] = {0, 0, 0};  // body frame
  std::array<double, kNumJoints> q{};
  std::array<double, kNumJoints> qd{};
  std::array<double, kNumJoints> tau{};
  std::array<std::array<double, 3>, kNumLegs> foot_pos{};  // world frame
  std::array<bool, kNumLegs> contact{};
  std::array<double, kActionDim> last_action{};
  long step_count = 0;
};

enum class TerminationReason { None, FallOver, Stuck, Collision, Timeout };

inline const char* termination_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::None: return "none";
    case TerminationReason::FallOver: return "fall_over";
    case TerminationReason::Stuck: return "stuck";
    case TerminationReason::Collision: return "collision";
    case TerminationReason::Timeout: return "timeout";
  }
  return "?";
}

struct EnvEvents {
  int stumbles = 0;
  double collision_depth = 0.0;  // base + head penetration, metres
  bool terminated = false;       // any non-timeout termination
  TerminationReason reason = TerminationReason::None;
};

struct CommandConfig {
  double vx_range[2] = {0.3, 1.0};
  double vy = 0.0;
  double yaw_rate_limit = 0.5;
  double heading_kp = 0.5;
  bool heading_mode = true;
};

struct EnvConfig {
  double control_dt = 0.02;  // 50 Hz policy
  int pd_substeps = 4;       // 200 Hz PD loop
  double joint_kp = 1600.0;
  double joint_kd = 80.0;
  double torque_limit = 120.0;
  double action_clip = 1.0;
  double action_scale = 0.25;
  std::array<double, kJointsPerLeg> default_leg_joint = {0.1, 0.8, -1.5};
  double base_mass_kg = 15.0;
  int episode_length_steps = 1000;
  int stuck_window_steps = 150;
  double stuck_min_progress = 0.05;
  double fall_angle = 1.3;
  double qd_obs_scale = 0.05;
  double z_relax_tau = 0.05;
  double rp_relax_tau = 0.10;
  double tip_rate = 8.0;              // rad/s per metre of support overhang
  double contact_eps = 1e-3;          // foot counts as contact within 1 mm
  double buried_depth = 0.10;         // feet deeper than this are not support
  double stumble_rise = 0.02;
  double collision_clearance = 0.05;  // probes must stay this far above ground
  double collision_terminate_depth = 0.10;
  double head_offset_x = 0.25;
  double push_decay_tau = 0.5;
  LegGeometry leg;
  CommandConfig command;

  /// Default joint vector with the hip-roll sign mirrored on right legs.
  std::array<double, kNumJoints> default_joints() const {
    std::array<double, kNumJoints> q{};
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const double side = (leg % 2 == 0) ? 1.0 : -1.0;  // FL, RL left
      q[leg * 3 + 0] = default_leg_joint[0] * side;
      q[leg * 3 + 1] = default_leg_joint[1];
      q[leg * 3 + 2] = default_leg_joint[2];
    }
    return q;
  }

  std::array<double, 2> joint_limits(int joint_in_leg) const {
    switch (joint_in_leg) {
      case 0: return {-0.8, 0.8};
      case 1: return {-1.0, 2.8};
      default: return {-2.6, -0.6};
    }
  }
};

struct RewardWeights {
  double lin_vel_tracking = 1.5;
  double ang_vel_tracking = 0.5;
  double lin_vel_z = -1.0;
  double ang_vel_xy = -0.1;
  double z_velocity = -1.0;   // duplicate of lin_vel_z, kept as printed
  double xy_velocity = -0.1;  // duplicate of ang_vel_xy, kept as printed
  double orientation = -0.7;
  double dof_acceleration = -1.5e-7;
  double collision = -20.0;
  double action_rate = -0.11;
  double delta_torques = -1.0e-7;
  double torques = -1e-5;
  double hip_position = -0.8;
  double dof_error = -0.04;
  double feet_stumble = -2.0;
  double termination = -5.0;
  double dof_pos_limits = -13.0;
};

struct RewardConfig {
  RewardWeights w;
  double tracking_sigma = 0.25;
  double heading_gate = 0.6;
  bool dedupe_table6 = false;
};

constexpr int kNumRewardTerms = 17;

inline const char* reward_term_name(int i) {
  static const char* names[kNumRewardTerms] = {
      "lin_vel_tracking", "ang_vel_tracking", "lin_vel_z",     "ang_vel_xy", "z_velocity",
      "xy_velocity",      "orientation",      "dof_accel",     "collision",  "action_rate",
      "delta_torques",    "torques",          "hip_position",  "dof_error",  "feet_stumble",
      "termination",      "dof_pos_limits"};
  return names[i];
}

struct RewardBreakdown {
  std::array<double, kNumRewardTerms> terms{};
  double total = 0.0;

  void finalize() {
    total = 0.0;
    for (double t : terms) total += t;
  }
};

namespace detail {

/// Body rotation R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct Rot {
  double m[3][3];
  static Rot from_rpy(double roll, double pitch, double yaw) {
    const double cr = std::cos(roll), sr = std::sin(roll);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    Rot r;
    r.m[0][0] = cy * cp;
    r.m[0][1] = cy * sp * sr - sy * cr;
    r.m[0][2] = cy * sp * cr + sy * sr;
    r.m[1][0] = sy * cp;
    r.m[1][1] = sy * sp * sr + cy * cr;
    r.m[1][2] = sy * sp * cr - cy * sr;
    r.m[2][0] = -sp;
    r.m[2][1] = cp * sr;
    r.m[2][2] = cp * cr;
    return r;
  }
  std::array<double, 3> apply(const std::array<double, 3>& v) const {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
  }
  std::array<double, 3> apply_transpose(const std::array<double, 3>& v) const {
    return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
  }
};

}  // namespace detail

inline std::array<double, 3> projected_gravity(const RobotState& st) {
  const auto R = detail::Rot::from_rpy(st.rpy[0], st.rpy[1], st.rpy[2]);
  return R.apply_transpose({0.0, 0.0, -1.0});
}

inline std::array<double, 3> body_velocity(const RobotState& st) {
  const double c = std::cos(st.rpy[2]), s = std::sin(st.rpy[2]);
  return {c * st.vel[0] + s * st.vel[1], -s * st.vel[0] + c * st.vel[1], st.vel[2]};
}

/// Heading-follow yaw-rate command, clamped to the configured limit.
inline double effective_yaw_command(const RobotState& st, const Command& cmd,
                                    const CommandConfig& cfg) {
  if (!cfg.heading_mode) return cmd.omega_yaw;
  return clamp(cfg.heading_kp * wrap_angle(cmd.heading - st.rpy[2]), -cfg.yaw_rate_limit,
               cfg.yaw_rate_limit);
}

inline RewardBreakdown compute_rewards(const RobotState& prev, const RobotState& next,
                                       std::span<const double> a_t, std::span<const double> a_prev,
                                       std::span<const double> tau_t, std::span<const double> tau_prev,
                                       const Command& cmd, double omega_cmd, const EnvEvents& events,
                                       const EnvConfig& env_cfg, const RewardConfig& cfg) {
  RewardBreakdown r;
  const auto& w = cfg.w;
  const double dt = env_cfg.control_dt;
  const auto v_body = body_velocity(next);

  const double heading_err = std::abs(wrap_angle(next.rpy[2] - cmd.heading));
  const bool gated = heading_err > cfg.heading_gate;

  const double dvx = cmd.vx - v_body[0];
  const double dvy = cmd.vy - v_body[1];
  const double lin_track = std::exp(-(dvx * dvx + dvy * dvy) / (2.0 * cfg.tracking_sigma));
  const double dyaw = omega_cmd - next.omega[2];
  const double ang_track = std::exp(-(dyaw * dyaw) / cfg.tracking_sigma);
  r.terms[0] = gated ? 0.0 : w.lin_vel_tracking * lin_track;
  r.terms[1] = gated ? 0.0 : w.ang_vel_tracking * ang_track;

  const double vz2 = next.vel[2] * next.vel[2];
  const double wxy2 = next.omega[0] * next.omega[0] + next.omega[1] * next.omega[1];
  r.terms[2] = w.lin_vel_z * vz2;
  r.terms[3] = w.ang_vel_xy * wxy2;
  r.terms[4] = cfg.dedupe_table6 ? 0.0 : w.z_velocity * vz2;
  r.terms[5] = cfg.dedupe_table6 ? 0.0 : w.xy_velocity * wxy2;

  const auto g = projected_gravity(next);
  r.terms[6] = w.orientation * (g[0] * g[0] + g[1] * g[1]);

  double acc2 = 0.0;
  for (int i = 0; i < kNumJoints; ++i) {
    const double a = (next.qd[i] - prev.qd[i]) / dt;
    acc2 += a * a;
  }
  r.terms[7] = w.dof_acceleration * acc2;

  r.terms[8] = w.collision * std::min(events.collision_depth, 0.1);

  double rate2 = 0.0;
  for (int i = 0; i < kActionDim; ++i) {
    const double d = a_t[i] - a_prev[i];
    rate2 += d * d;
  }
  r.terms[9] = w.action_rate * rate2;

  double dtau2 = 0.0, tau2 = 0.0;
  for (int i = 0; i < kNumJoints; ++i) {
    const double d = tau_t[i] - tau_prev[i];
    dtau2 += d * d;
    tau2 += tau_t[i] * tau_t[i];
  }
  r.terms[10] = w.delta_torques * dtau2;
  r.terms[11] = w.torques * tau2;

  double hip2 = 0.0;
  for (int leg = 0; leg < kNumLegs; ++leg) hip2 += next.q[leg * 3] * next.q[leg * 3];
  r.terms[12] = w.hip_position * hip2;

  const auto q_def = env_cfg.default_joints();
  double dof_err2 = 0.0, limit_excess = 0.0;
  for (int i = 0; i < kNumJoints; ++i) {
    const double d = next.q[i] - q_def[i];
    dof_err2 += d * d;
    const auto lim = env_cfg.joint_limits(i % 3);
    limit_excess += std::max(0.0, next.q[i] - lim[1]) + std::max(0.0, lim[0] - next.q[i]);
  }
  r.terms[13] = w.dof_error * dof_err2;
  r.terms[14] = w.feet_stumble * events.stumbles;
  r.terms[15] = events.terminated ? w.termination : 0.0;
  r.terms[16] = w.dof_pos_limits * limit_excess;

  r.finalize();
  return r;
}

/// Sliding window of base-x positions used for the stuck test.
struct ProgressWindow {
  std::deque<double> xs;
  int capacity = 150;

  void reset(int cap) {
    capacity = cap;
    xs.clear();
  }
  void push(double x) {
    xs.push_back(x);
    while (static_cast<int>(xs.size()) > capacity + 1) xs.pop_front();
  }
  bool full() const { return static_cast<int>(xs.size()) >= capacity + 1; }
  double progress() const { return xs.empty() ? 0.0 : xs.back() - xs.front(); }
};

inline TerminationReason check_termination(const RobotState& st, const ProgressWindow& window,
                                           const EnvConfig& cfg, double collision_depth) {
  if (std::abs(st.rpy[0]) > cfg.fall_angle || std::abs(st.rpy[1]) > cfg.fall_angle)
    return TerminationReason::FallOver;
  if (collision_depth >= cfg.collision_terminate_depth) return TerminationReason::Collision;
  if (window.full() && window.progress() < cfg.stuck_min_progress) return TerminationReason::Stuck;
  if (st.step_count >= cfg.episode_length_steps) return TerminationReason::Timeout;
  return TerminationReason::None;
}

// ---------------------------------------------------------------------------

struct StepResult {
  RewardBreakdown reward;
  bool done = false;
  TerminationReason reason = TerminationReason::None;
  EnvEvents events;
};

/// Deterministic surrogate quadruped. Locomotion follows a treadmill model:
/// body velocity is the negated mean stance-foot velocity in the body frame;
/// base height and attitude relax toward the stance geometry. Feet buried
/// deeper than buried_depth do not count as support, and when the whole
/// support span lies on one side of the CoM the body tips.
class QuadrupedEnv {
 public:
  EnvConfig cfg;
  RewardConfig reward_cfg;
  Heightfield hf;
  DomainParams dp;
  Command cmd;
  RobotState st;
  PerceptionPipeline percep;
  ElevationMap map_cfg;
  Rng rng;

  void reset(const Heightfield& field, const DomainParams& params, Rng env_rng) {
    hf = field;
    dp = params;
    rng = env_rng;

    st = RobotState();
    st.pos[0] = hf.spawn_x;
    st.pos[1] = hf.spawn_y;
    st.rpy[2] = hf.spawn_yaw;

    const auto q_def = cfg.default_joints();
    for (int i = 0; i < kNumJoints; ++i) st.q[i] = q_def[i] * dp.init_joint_scale;

    const double ground = height_at(hf, st.pos[0], st.pos[1]);
    double ext = 0.0;
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const auto f = leg_forward_kinematics(std::span<const double>(st.q.data() + leg * 3, 3), cfg.leg);
      ext += -f[2];
    }
    st.pos[2] = ground + ext / kNumLegs;

    q_target_prev_ = st.q;
    push_v_[0] = push_v_[1] = 0.0;
    progress_.reset(cfg.stuck_window_steps);
    progress_.push(st.pos[0]);

    cmd.vx = rng.uniform(cfg.command.vx_range[0], cfg.command.vx_range[1]);
    cmd.vy = cfg.command.vy;
    cmd.omega_yaw = rng.uniform(-cfg.command.yaw_rate_limit, cfg.command.yaw_rate_limit);
    cmd.heading = hf.spawn_yaw;

    update_feet();
    percep.reset(hf, base_pose(), map_cfg, rng);
  }

  BasePose base_pose() const { return {st.pos[0], st.pos[1], st.pos[2], st.rpy[2]}; }

  double omega_cmd_effective() const { return effective_yaw_command(st, cmd, cfg.command); }

  StepResult step(std::span<const double> action) {
    check(static_cast<int>(action.size()) == kActionDim, "action size mismatch");
    for (double a : action) check(std::isfinite(a), "non-finite action");

    const RobotState prev = st;
    const double omega_cmd = omega_cmd_effective();
    const double dt = cfg.control_dt;
    const double sub_dt = dt / cfg.pd_substeps;
    const auto q_def = cfg.default_joints();

    push_v_[0] *= std::exp(-dt / cfg.push_decay_tau);
    push_v_[1] *= std::exp(-dt / cfg.push_decay_tau);

    std::array<double, kNumJoints> q_target_new{};
    for (int i = 0; i < kNumJoints; ++i)
      q_target_new[i] = q_def[i] + cfg.action_scale * clamp(action[i], -cfg.action_clip, cfg.action_clip);

    // Stance set from the previous step's end-of-step contacts.
    std::array<bool, kNumLegs> stance = st.contact;

    EnvEvents events;
    std::array<bool, kNumLegs> stumbled{};
    std::array<std::array<double, 3>, kNumLegs> foot_before = st.foot_pos;
    std::array<double, kNumJoints> tau_mean{};

    const std::array<double, kNumJoints> q_start = st.q;
    for (int sub = 0; sub < cfg.pd_substeps; ++sub) {
      const auto& target = (sub < dp.action_delay_substeps) ? q_target_prev_ : q_target_new;
      for (int i = 0; i < kNumJoints; ++i) {
        const double kp = cfg.joint_kp * dp.kp_scale;
        const double kd = cfg.joint_kd * dp.kd_scale;
        double tau = kp * (target[i] - st.q[i]) - kd * st.qd[i];
        const double lim = cfg.torque_limit * dp.motor_strength[i];
        tau = clamp(tau, -lim, lim);
        st.qd[i] += tau * sub_dt;  // unit joint inertia
        st.q[i] += st.qd[i] * sub_dt;
        tau_mean[i] += tau / cfg.pd_substeps;
      }
      // Stumble: a swing foot sweeping across a terrain rise taller than its
      // clearance within one substep.
      const auto R = detail::Rot::from_rpy(st.rpy[0], st.rpy[1], st.rpy[2]);
      for (int leg = 0; leg < kNumLegs; ++leg) {
        if (stance[leg] || stumbled[leg]) continue;
        const auto p1 = foot_world(leg, R);
        const auto& p0 = foot_before[leg];
        const double h0 = height_at(hf, p0[0], p0[1]);
        const double h1 = height_at(hf, p1[0], p1[1]);
        if (h1 - h0 > cfg.stumble_rise && p1[2] < h1 - cfg.contact_eps) {
          stumbled[leg] = true;
          events.stumbles += 1;
        }
        foot_before[leg] = p1;
      }
    }
    st.tau = tau_mean;

    // Body-frame foot velocities over the control step, from net joint motion.
    std::array<std::array<double, 3>, kNumLegs> foot_vel_body{};
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const auto f0 =
          leg_forward_kinematics(std::span<const double>(q_start.data() + leg * 3, 3), cfg.leg);
      const auto f1 =
          leg_forward_kinematics(std::span<const double>(st.q.data() + leg * 3, 3), cfg.leg);
      for (int k = 0; k < 3; ++k) foot_vel_body[leg][k] = (f1[k] - f0[k]) / dt;
    }

    int n_stance = 0;
    for (bool c : stance) n_stance += c ? 1 : 0;

    if (n_stance == 0) {
      // Ballistic fall.
      st.vel[2] -= 9.81 * dt;
      st.pos[0] += st.vel[0] * dt;
      st.pos[1] += st.vel[1] * dt;
      st.pos[2] += st.vel[2] * dt;
      st.omega[0] = st.omega[1] = st.omega[2] = 0.0;
    } else {
      // Treadmill drive: stance feet sweeping backward push the body forward.
      double drive_x = 0.0, drive_y = 0.0;
      double drive_left = 0.0, drive_right = 0.0;
      int n_left = 0, n_right = 0;
      for (int leg = 0; leg < kNumLegs; ++leg) {
        if (!stance[leg]) continue;
        drive_x += -foot_vel_body[leg][0];
        drive_y += -foot_vel_body[leg][1];
        if (leg % 2 == 0) {
          drive_left += -foot_vel_body[leg][0];
          ++n_left;
        } else {
          drive_right += -foot_vel_body[leg][0];
          ++n_right;
        }
      }
      drive_x /= n_stance;
      drive_y /= n_stance;
      const double grip = std::min(1.0, dp.friction);
      drive_x *= grip;
      drive_y *= grip;

      const double dl = n_left ? drive_left / n_left * grip : drive_x;
      const double dr = n_right ? drive_right / n_right * grip : drive_x;
      const double yaw_rate = (dr - dl) / cfg.leg.track_width;
      const double yaw0 = st.rpy[2];
      st.rpy[2] = wrap_angle(st.rpy[2] + yaw_rate * dt);
      st.omega[2] = yaw_rate;

      const double c = std::cos(yaw0), s = std::sin(yaw0);
      const double wx = c * drive_x - s * drive_y + push_v_[0];
      const double wy = s * drive_x + c * drive_y + push_v_[1];
      st.pos[0] += wx * dt;
      st.pos[1] += wy * dt;
      st.vel[0] = wx;
      st.vel[1] = wy;

      // Base height relaxes toward the stance support height.
      double target_z = 0.0;
      for (int leg = 0; leg < kNumLegs; ++leg) {
        if (!stance[leg]) continue;
        const auto f =
            leg_forward_kinematics(std::span<const double>(st.q.data() + leg * 3, 3), cfg.leg);
        target_z += height_at(hf, st.foot_pos[leg][0], st.foot_pos[leg][1]) - f[2];
      }
      target_z /= n_stance;
      const double alpha_z = 1.0 - std::exp(-dt / cfg.z_relax_tau);
      const double z0 = st.pos[2];
      st.pos[2] += (target_z - st.pos[2]) * alpha_z;
      st.vel[2] = (st.pos[2] - z0) / dt;

      // Attitude relaxes toward the plane through the stance contacts.
      if (n_stance >= 3) {
        double sxx = 0, sxy = 0, syy = 0, sxz = 0, syz = 0, sx = 0, sy = 0, sz = 0;
        const double cy0 = std::cos(yaw0), sy0 = std::sin(yaw0);
        for (int leg = 0; leg < kNumLegs; ++leg) {
          if (!stance[leg]) continue;
          const double rx = st.foot_pos[leg][0] - st.pos[0];
          const double ry = st.foot_pos[leg][1] - st.pos[1];
          const double bx = cy0 * rx + sy0 * ry;
          const double by = -sy0 * rx + cy0 * ry;
          const double bz = height_at(hf, st.foot_pos[leg][0], st.foot_pos[leg][1]);
          sxx += bx * bx;
          sxy += bx * by;
          syy += by * by;
          sxz += bx * bz;
          syz += by * bz;
          sx += bx;
          sy += by;
          sz += bz;
        }
        const double n = n_stance;
        const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
        const double cxz = sxz - sx * sz / n, cyz = syz - sy * sz / n;
        const double det = cxx * cyy - cxy * cxy;
        if (std::abs(det) > 1e-9) {
          const double a = (cxz * cyy - cyz * cxy) / det;
          const double b = (cyz * cxx - cxz * cxy) / det;
          const double pitch_t = -std::atan(a);
          const double roll_t = std::atan(b);
          const double alpha = 1.0 - std::exp(-dt / cfg.rp_relax_tau);
          const double p0 = st.rpy[1], r0 = st.rpy[0];
          st.rpy[1] += (pitch_t - st.rpy[1]) * alpha;
          st.rpy[0] += (roll_t - st.rpy[0]) * alpha;
          st.omega[1] = (st.rpy[1] - p0) / dt;
          st.omega[0] = (st.rpy[0] - r0) / dt;
        }
      } else {
        st.omega[0] = st.omega[1] = 0.0;
      }

      // Tipping when the CoM leaves the support span along the body x axis.
      const double cy0 = std::cos(yaw0), sy0 = std::sin(yaw0);
      double front = -1e9, rear = 1e9;
      for (int leg = 0; leg < kNumLegs; ++leg) {
        if (!stance[leg]) continue;
        const double rx = st.foot_pos[leg][0] - (st.pos[0] + cy0 * dp.com_x - sy0 * dp.com_y);
        const double ry = st.foot_pos[leg][1] - (st.pos[1] + sy0 * dp.com_x + cy0 * dp.com_y);
        const double bx = cy0 * rx + sy0 * ry;
        front = std::max(front, bx);
        rear = std::min(rear, bx);
      }
      if (front < 0.0) {
        st.rpy[1] += cfg.tip_rate * (-front) * dt;  // nose-down tip
        st.omega[1] += cfg.tip_rate * (-front);
      } else if (rear > 0.0) {
        st.rpy[1] -= cfg.tip_rate * rear * dt;
        st.omega[1] -= cfg.tip_rate * rear;
      }
    }

    // Push events add velocity directly; the kick decays on later steps.
    st.step_count += 1;
    if (dp.push_interval_steps > 0 && st.step_count % dp.push_interval_steps == 0) {
      const double mass_ratio = (cfg.base_mass_kg + dp.base_mass_add) / cfg.base_mass_kg;
      const double mag = rng.uniform(0.0, dp.push_velocity_max) / mass_ratio;
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      const double dx = mag * std::cos(ang), dy = mag * std::sin(ang);
      push_v_[0] += dx;
      push_v_[1] += dy;
      st.vel[0] += dx;
      st.vel[1] += dy;
    }

    update_feet();

    // Collision probes at the base centre and a head point.
    const auto R = detail::Rot::from_rpy(st.rpy[0], st.rpy[1], st.rpy[2]);
    const auto head_off = R.apply({cfg.head_offset_x, 0.0, 0.0});
    const double base_ground = height_at(hf, st.pos[0], st.pos[1]);
    const double head_x = st.pos[0] + head_off[0], head_y = st.pos[1] + head_off[1];
    const double head_z = st.pos[2] + head_off[2];
    const double head_ground = height_at(hf, head_x, head_y);
    events.collision_depth = std::max(0.0, base_ground + cfg.collision_clearance - st.pos[2]) +
                             std::max(0.0, head_ground + cfg.collision_clearance - head_z);

    progress_.push(st.pos[0]);
    const TerminationReason reason = check_termination(st, progress_, cfg, events.collision_depth);
    events.reason = reason;
    events.terminated = reason != TerminationReason::None && reason != TerminationReason::Timeout;

    // The executed command (post-clamp) is the proprioceptive action record.
    st.last_action = {};
    for (int i = 0; i < kActionDim; ++i)
      st.last_action[i] = clamp(action[i], -cfg.action_clip, cfg.action_clip);
    q_target_prev_ = q_target_new;

    percep.advance(hf, base_pose(), rng);

    for (int k = 0; k < 3; ++k)
      check(std::isfinite(st.pos[k]) && std::isfinite(st.rpy[k]) && std::isfinite(st.vel[k]),
            "non-finite robot state");

    StepResult out;
    out.events = events;
    out.reason = reason;
    out.done = reason != TerminationReason::None;
    out.reward = compute_rewards(prev, st, st.last_action, prev.last_action, st.tau, prev.tau, cmd,
                                 omega_cmd, events, cfg, reward_cfg);
    return out;
  }

  // Internal state access for exact checkpoint/resume.
  const std::array<double, kNumJoints>& q_target_prev() const { return q_target_prev_; }
  std::array<double, 2> push_velocity() const { return {push_v_[0], push_v_[1]}; }
  const ProgressWindow& progress() const { return progress_; }
  void restore_internal(const std::array<double, kNumJoints>& q_target_prev, double push_x,
                        double push_y) {
    q_target_prev_ = q_target_prev;
    push_v_[0] = push_x;
    push_v_[1] = push_y;
  }
  void restore_progress(const ProgressWindow& w) { progress_ = w; }

 private:
  std::array<double, kNumJoints> q_target_prev_{};
  double push_v_[2] = {0, 0};
  ProgressWindow progress_;

  std::array<double, 3> foot_world(int leg, const detail::Rot& R) const {
    const auto f = leg_forward_kinematics(std::span<const double>(st.q.data() + leg * 3, 3), cfg.leg);
    const double hx = (leg < 2 ? 1.0 : -1.0) * cfg.leg.hip_x;
    const double hy = (leg % 2 == 0 ? 1.0 : -1.0) * cfg.leg.hip_y;
    const auto w = R.apply({hx + f[0], hy + f[1], f[2]});
    return {st.pos[0] + w[0], st.pos[1] + w[1], st.pos[2] + w[2]};
  }

  void update_feet() {
    const auto R = detail::Rot::from_rpy(st.rpy[0], st.rpy[1], st.rpy[2]);
    for (int leg = 0; leg < kNumLegs; ++leg) {
      st.foot_pos[leg] = foot_world(leg, R);
      const double ground = height_at(hf, st.foot_pos[leg][0], st.foot_pos[leg][1]);
      st.contact[leg] = st.foot_pos[leg][2] <= ground + cfg.contact_eps &&
                        st.foot_pos[leg][2] >= ground - cfg.buried_depth;
    }
  }
};

// ---------------------------------------------------------------------------
// Observation assembly.

constexpr int kProprioDim = 3 + 3 + kNumJoints + kNumJoints + kActionDim + 3;  // 45

struct ObservationSet {
  std::vector<double> proprio;   // o_t
  std::vector<double> s_blind;   // [o, v_hat, e, a_percep_prev]
  std::vector<double> s_percep;  // [o, h, a_blind_prev]
  std::vector<double> s_critic;  // [o, v_true, e, h, a_percep_prev, a_blind_prev]
};

inline std::vector<double> assemble_proprio(const RobotState& st, const Command& cmd,
                                            double omega_cmd, const EnvConfig& cfg) {
  std::vector<double> o;
  o.reserve(kProprioDim);
  const auto g = projected_gravity(st);
  o.insert(o.end(), g.begin(), g.end());
  o.insert(o.end(), st.omega, st.omega + 3);
  const auto q_def = cfg.default_joints();
  for (int i = 0; i < kNumJoints; ++i) o.push_back(st.q[i] - q_def[i]);
  for (int i = 0; i < kNumJoints; ++i) o.push_back(st.qd[i] * cfg.qd_obs_scale);
  o.insert(o.end(), st.last_action.begin(), st.last_action.end());
  o.push_back(cmd.vx);
  o.push_back(cmd.vy);
  o.push_back(omega_cmd);
  check(static_cast<int>(o.size()) == kProprioDim, "proprio dim mismatch");
  return o;
}

inline ObservationSet assemble_observations(const std::vector<double>& proprio,
                                            const ElevationMap& map,
                                            std::span<const double> v_hat,
                                            std::span<const double> e_latent,
                                            std::span<const double> v_true,
                                            std::span<const double> e_true,
                                            std::span<const double> a_blind_prev,
                                            std::span<const double> a_percep_prev) {
  check(v_hat.size() == 3 && v_true.size() == 3, "velocity slot must be 3-dimensional");
  check(e_latent.size() == e_true.size(), "latent dims mismatch");
  check(a_blind_prev.size() == kActionDim && a_percep_prev.size() == kActionDim,
        "cross-policy action dims mismatch");
  ObservationSet s;
  s.proprio = proprio;

  s.s_blind = proprio;
  s.s_blind.insert(s.s_blind.end(), v_hat.begin(), v_hat.end());
  s.s_blind.insert(s.s_blind.end(), e_latent.begin(), e_latent.end());
  s.s_blind.insert(s.s_blind.end(), a_percep_prev.begin(), a_percep_prev.end());

  s.s_percep = proprio;
  s.s_percep.insert(s.s_percep.end(), map.grid.begin(), map.grid.end());
  s.s_percep.insert(s.s_percep.end(), a_blind_prev.begin(), a_blind_prev.end());

  s.s_critic = proprio;
  s.s_critic.insert(s.s_critic.end(), v_true.begin(), v_true.end());
  s.s_critic.insert(s.s_critic.end(), e_true.begin(), e_true.end());
  s.s_critic.insert(s.s_critic.end(), map.grid.begin(), map.grid.end());
  s.s_critic.insert(s.s_critic.end(), a_percep_prev.begin(), a_percep_prev.end());
  s.s_critic.insert(s.s_critic.end(), a_blind_prev.begin(), a_blind_prev.end());
  return s;
}

}  // namespace mbc
