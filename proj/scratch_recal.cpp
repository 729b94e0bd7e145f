#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Trainer tr(rc, Stage::One);
  tr.initialize();
  tr.restore_checkpoint(c);
  tr.calibrate();
  std::printf("tau: %.6f -> %.6f\n", c.tau, tr.tau());
  save_checkpoint(tr.make_checkpoint(), argv[2]);
  return 0;
}
