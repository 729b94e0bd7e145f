// Scratch: decompose rewards for a trained checkpoint.
#include <cstdio>

#include "mbc/eval.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Rng init(0);
  PolicyBundle b = PolicyBundle::make(rc.cfg, init);
  CheckpointContainer c1 = c;
  c1.stage = 1;
  b.load_from_checkpoint(c1);

  std::printf("log_std: ");
  for (double v : b.blind_head.log_std) std::printf("%.2f ", v);
  std::printf("\n");

  // Rollout with sampled actions on stage-1 terrain, like training.
  Trainer tr(rc, Stage::One);
  tr.initialize();
  tr.bundle() = b;

  std::array<double, kNumRewardTerms> sums{};
  double total = 0;
  int steps = 0;
  EnvSlot slot;
  slot.env.cfg = rc.cfg.env;
  slot.env.reward_cfg = rc.cfg.rewards;
  slot.env.map_cfg = rc.cfg.map_cfg;
  slot.env.percep.noise = rc.cfg.noise;
  slot.env.rng = Rng(7);
  for (int ep = 0; ep < 8; ++ep) {
    tr.new_episode(slot);
    for (int t = 0; t < 300; ++t) {
      const std::vector<double> o =
          assemble_proprio(slot.env.st, slot.env.cmd, slot.env.omega_cmd_effective(), rc.cfg.env);
      slot.push_frame(o);
      std::vector<double> v_hat, e_hat;
      roa_estimates(b.history_encoder, slot.window, v_hat, e_hat);
      const std::vector<double> e_true = b.priv_encoder.forward(slot.env.dp.privileged_vector());
      const auto vb = body_velocity(slot.env.st);
      const std::vector<double> v_true = {vb[0], vb[1], vb[2]};
      const ObservationSet obs = assemble_observations(
          o, slot.env.percep.visible, v_hat, e_true, v_true, e_true,
          slot.a_blind_prev, slot.a_percep_prev);
      const std::vector<double> mean = b.blind_actor.forward(obs.s_blind);
      const std::vector<double> a = b.blind_head.sample(mean, slot.env.rng);
      const StepResult r = slot.env.step(a);
      slot.a_blind_prev = a;
      for (int k = 0; k < kNumRewardTerms; ++k) sums[k] += r.reward.terms[k];
      total += r.reward.total;
      ++steps;
      if (r.done) break;
    }
  }
  std::printf("steps=%d mean_total=%.4f  (cmd vx=%.2f)\n", steps, total / steps, slot.env.cmd.vx);
  for (int k = 0; k < kNumRewardTerms; ++k)
    std::printf("  %-18s %+.4f\n", reward_term_name(k), sums[k] / steps);
  return 0;
}
