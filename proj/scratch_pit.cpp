// Scratch: pit discrimination vs platform length and pose distance.
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
  const double tau = c.tau;
  std::printf("tau = %.4f\n", tau);

  for (double len : {4.0, 2.0, 1.6, 1.2, 0.8}) {
    RunConfig cfg = rc.cfg;
    cfg.terrain.pit_length = len;
    Rng rng(606);
    std::vector<double> es;
    for (int i = 0; i < 256; ++i)
      es.push_back(reconstruction_error(b.vae, sample_obstacle_patch(TerrainKind::Pit, cfg, rng)));
    std::sort(es.begin(), es.end());
    int zeros = 0;
    for (double e : es) zeros += e > tau ? 1 : 0;
    std::printf("pit_length %.1f  median %.4f  p90 %.4f  I=0 %.1f%%\n", len, es[es.size() / 2],
                es[static_cast<size_t>(es.size() * 0.9)], 100.0 * zeros / es.size());
  }
  return 0;
}
