// Scratch: tune a scripted trot so the surrogate tracks 1 m/s.
#include <cstdio>

#include "mbc/env.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const int period = argc > 1 ? std::atoi(argv[1]) : 16;
  const double amp = argc > 2 ? std::atof(argv[2]) : 1.0;
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

  const double dt = env.cfg.control_dt;
  const double x0 = env.st.pos[0];
  const int half = period / 2;
  double speed_scale = 1.0;
  std::vector<double> a(kActionDim, 0.0);
  const int steps = 1000;
  for (int t = 0; t < steps; ++t) {
    const double x_ref = x0 + 1.0 * t * dt;
    speed_scale = clamp(1.0 + 2.0 * (x_ref - env.st.pos[0]), 0.3, 1.6);
    const int ph = t % period;
    const bool a_stance = ph < half;
    const double u = (ph % half + 0.5) / half;  // 0..1 within half period
    const double sweep = (1.0 - 2.0 * u) * amp * speed_scale;
    for (int leg = 0; leg < 4; ++leg) {
      const bool in_a = (leg == 0 || leg == 3);
      const bool stance = (in_a == a_stance);
      if (stance) {
        a[leg * 3 + 0] = 0.0;
        a[leg * 3 + 1] = clamp(sweep, -1.0, 1.0);
        a[leg * 3 + 2] = clamp(0.3 * sweep + 0.3, -1.0, 1.0);
      } else {
        a[leg * 3 + 0] = 0.0;
        a[leg * 3 + 1] = clamp(-sweep, -1.0, 1.0);
        a[leg * 3 + 2] = -1.0;  // fold and lift
      }
    }
    env.step(a);
    if ((t + 1) % 100 == 0)
      std::printf("t=%4d x=%7.3f v=%6.3f z=%6.3f pitch=%6.3f scale=%4.2f\n", t + 1,
                  env.st.pos[0] - x0, env.st.vel[0], env.st.pos[2], env.st.rpy[1], speed_scale);
  }
  std::printf("MXD over %d steps: %.3f (ideal %.1f)\n", steps, env.st.pos[0] - x0, steps * dt);
  return 0;
}
