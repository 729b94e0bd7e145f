#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Rng init(0);
  PolicyBundle b = PolicyBundle::make(rc.cfg, init);
  b.load_from_checkpoint(c);
  const int n = rc.cfg.map_cfg.rows * rc.cfg.map_cfg.cols;
  for (double h : {-0.31, -0.11, 0.2, 0.7, 2.0, 5.0}) {
    std::vector<double> map(n, h);
    std::printf("constant %+5.2f -> E = %.4f\n", h, reconstruction_error(b.vae, map));
  }
  // Two-level step map: near rows at -0.31, far rows at -0.31 + 0.35.
  std::vector<double> step(n, -0.31);
  for (int i = 12; i < 24; ++i)
    for (int j = 0; j < 16; ++j) step[i * 16 + j] += 0.35;
  std::printf("two-level step -> E = %.4f\n", reconstruction_error(b.vae, step));
  return 0;
}
