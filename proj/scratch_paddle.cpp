// Scratch: single-leg paddling affordance + trained-policy motion stats.
#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  // Part 1: scripted one-leg paddle on flat ground.
  {
    TerrainSpec ts;
    ts.kind = TerrainKind::Slope;
    ts.slope_incl_deg = 0.0;
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
    const double x0 = env.st.pos[0];
    std::vector<double> a(kActionDim, 0.0);
    const int period = 20, half = 10;
    for (int t = 0; t < 500; ++t) {
      const int ph = t % period;
      const double u = (ph % half + 0.5) / half;
      const double sweep = 1.0 - 2.0 * u;
      // Only the front-left leg paddles; the rest stand.
      if (ph < half) {  // stance sweep back
        a[1] = sweep;
        a[2] = 0.2;
      } else {  // lifted return
        a[1] = -sweep;
        a[2] = -1.0;
      }
      env.step(a);
    }
    std::printf("one-leg paddle: displacement %.2f m over 10 s\n", env.st.pos[0] - x0);
  }

  // Part 2: trained-policy joint motion amplitude (deterministic).
  if (argc > 1) {
    const CheckpointContainer c = load_checkpoint(argv[1]);
    ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
    Trainer tr(rc, Stage::One);
    tr.initialize();
    tr.restore_checkpoint(c);
    EnvSlot slot;
    slot.env.cfg = rc.cfg.env;
    slot.env.reward_cfg = rc.cfg.rewards;
    slot.env.map_cfg = rc.cfg.map_cfg;
    slot.env.percep.noise = rc.cfg.noise;
    slot.env.rng = Rng(5);
    TerrainSpec flat;
    flat.kind = TerrainKind::Slope;
    Rng dpr(6);
    slot.env.reset(generate_heightfield(flat, rc.cfg.terrain, rc.cfg.ranges),
                   sample_domain_params(dpr, rc.cfg.domain_rand), Rng(7));
    slot.clear_episode(tr.bundle().window_dim());
    slot.env.cmd.vx = 1.0;
    std::array<double, 12> qmin{}, qmax{};
    qmin.fill(1e9);
    qmax.fill(-1e9);
    double mu_max = 0;
    for (int t = 0; t < 300; ++t) {
      const auto d = tr.act_and_step(slot, false, true);
      for (int j = 0; j < 12; ++j) {
        qmin[j] = std::min(qmin[j], slot.env.st.q[j]);
        qmax[j] = std::max(qmax[j], slot.env.st.q[j]);
        mu_max = std::max(mu_max, std::abs(d.a_blind[j]));
      }
      if (d.done) break;
    }
    std::printf("trained policy q ranges (deterministic):\n");
    for (int j = 0; j < 12; ++j) std::printf("  j%d: [%.3f, %.3f]\n", j, qmin[j], qmax[j]);
    std::printf("max |mu|: %.3f\n", mu_max);
  }
  return 0;
}
