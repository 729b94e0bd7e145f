// Scratch: does the blind policy walk deterministically vs stochastically?
#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Trainer tr(rc, Stage::One);
  tr.initialize();
  tr.restore_checkpoint(c);

  for (bool det : {true, false}) {
    double disp_sum = 0;
    int n = 6;
    for (int ep = 0; ep < n; ++ep) {
      EnvSlot slot;
      slot.env.cfg = rc.cfg.env;
      slot.env.reward_cfg = rc.cfg.rewards;
      slot.env.map_cfg = rc.cfg.map_cfg;
      slot.env.percep.noise = rc.cfg.noise;
      slot.env.rng = Rng(500 + ep);
      TerrainSpec flat;
      flat.kind = TerrainKind::Slope;
      flat.slope_incl_deg = 0.0;
      Rng dp_rng(600 + ep);
      slot.env.reset(generate_heightfield(flat, rc.cfg.terrain, rc.cfg.ranges),
                     sample_domain_params(dp_rng, rc.cfg.domain_rand), Rng(700 + ep));
      slot.clear_episode(tr.bundle().window_dim());
      slot.env.cmd.vx = 1.0;
      slot.env.cmd.heading = 0;
      const double x0 = slot.env.st.pos[0];
      for (int t = 0; t < 500; ++t) {
        const auto d = tr.act_and_step(slot, false, det);
        if (d.done) break;
      }
      disp_sum += slot.env.st.pos[0] - x0;
    }
    std::printf("%s: mean displacement over 500 steps (10 s): %.2f m\n",
                det ? "deterministic" : "stochastic", disp_sum / n);
  }
  return 0;
}
