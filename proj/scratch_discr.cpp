// Scratch: familiarity-threshold discrimination measurement.
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

  Rng rng(606);
  std::vector<double> fam, gap, pit;
  for (int i = 0; i < 512; ++i)
    fam.push_back(reconstruction_error(b.vae, sample_terrain_patch(TrainPhase::Stage1, rc.cfg, rng)));
  for (int i = 0; i < 512; ++i)
    gap.push_back(reconstruction_error(b.vae, sample_obstacle_patch(TerrainKind::Gap, rc.cfg, rng)));
  for (int i = 0; i < 512; ++i)
    pit.push_back(reconstruction_error(b.vae, sample_obstacle_patch(TerrainKind::Pit, rc.cfg, rng)));

  auto stats = [&](const char* name, std::vector<double> v) {
    std::sort(v.begin(), v.end());
    int below = 0;
    for (double e : v) below += e <= tau ? 1 : 0;
    std::printf("%-8s median %.4f  p90 %.4f  max %.4f  | I=1: %.1f%%\n", name, v[v.size() / 2],
                v[static_cast<size_t>(v.size() * 0.9)], v.back(), 100.0 * below / v.size());
  };
  std::printf("tau = %.4f\n", tau);
  stats("familiar", fam);
  stats("gap", gap);
  stats("pit", pit);
  return 0;
}
