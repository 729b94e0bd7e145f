// Scratch: reward economics of the scripted 1 m/s trot vs standing.
#include <cstdio>

#include "mbc/env.hpp"

using namespace mbc;

int main() {
  for (bool walk : {false, true}) {
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
    env.cmd.vx = 1.0;
    env.cmd.vy = 0;
    env.cmd.heading = 0;

    const int period = 14, half = 7;
    const double x0 = env.st.pos[0];
    std::array<double, kNumRewardTerms> sums{};
    double total = 0;
    std::vector<double> a(kActionDim, 0.0);
    const int steps = 600;
    for (int t = 0; t < steps; ++t) {
      if (walk) {
        const double x_ref = x0 + 1.0 * t * 0.02;
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
      }
      const StepResult r = env.step(a);
      for (int k = 0; k < kNumRewardTerms; ++k) sums[k] += r.reward.terms[k];
      total += r.reward.total;
    }
    std::printf("%s: mean reward %.3f  displacement %.2f m\n", walk ? "scripted walk" : "standing",
                total / steps, env.st.pos[0] - x0);
    for (int k = 0; k < kNumRewardTerms; ++k)
      if (std::abs(sums[k]) / steps > 0.005)
        std::printf("    %-18s %+.3f\n", reward_term_name(k), sums[k] / steps);
  }
  return 0;
}
