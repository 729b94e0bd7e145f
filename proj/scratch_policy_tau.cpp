// Scratch: reconstruction errors on maps the trained blind policy encounters.
#include <algorithm>
#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Rng init(0);
  PolicyBundle b = PolicyBundle::make(rc.cfg, init);
  b.load_from_checkpoint(c);

  Trainer tr(rc, Stage::One);
  tr.initialize();
  tr.bundle() = b;

  Rng prng(77);
  std::vector<double> es;
  EnvSlot slot;
  slot.env.cfg = rc.cfg.env;
  slot.env.reward_cfg = rc.cfg.rewards;
  slot.env.map_cfg = rc.cfg.map_cfg;
  slot.env.percep.noise = rc.cfg.noise;
  slot.env.rng = Rng(123);
  int episodes = 0;
  while (static_cast<int>(es.size()) < 2048) {
    tr.new_episode(slot, TrainPhase::Stage1, &prng);
    ++episodes;
    for (int t = 0; t < 400; ++t) {
      const auto d = tr.act_and_step(slot, false, true);
      if (t % 5 == 4) es.push_back(reconstruction_error(b.vae, d.map));
      if (d.done) break;
      if (static_cast<int>(es.size()) >= 2048) break;
    }
  }
  std::sort(es.begin(), es.end());
  std::printf("policy-visited stage-1 maps (%d eps): med %.4f p90 %.4f p99 %.4f max %.4f\n",
              episodes, es[es.size() / 2], es[static_cast<size_t>(es.size() * 0.9)],
              es[static_cast<size_t>(es.size() * 0.99)], es.back());
  return 0;
}
