// Scratch: criterion-10 rehearsal - paired gap trials, perception on vs off.
#include <cstdio>

#include "mbc/eval.hpp"

using namespace mbc;

int main(int argc, char** argv) {
  auto [policy, rc] = load_eval_policy(argv[1]);
  const double difficulty = argc > 2 ? std::atof(argv[2]) : 0.5;
  TerrainSpec gap;
  gap.kind = TerrainKind::Gap;
  gap.difficulty = difficulty;
  gap.gap_width = 0.15 + 0.30 * difficulty;

  int on_ok = 0, off_ok = 0, trials = argc > 3 ? std::atoi(argv[3]) : 100;
  std::map<std::string, int> on_term, off_term;
  for (int i = 0; i < trials; ++i) {
    const uint64_t ts = Rng::derive(1010, 0x9a9, i).next_u64();
    const TrialResult on = run_eval_trial(policy, rc.cfg, gap, ts, kToggleNever, 1.0, 1000);
    const TrialResult off = run_eval_trial(policy, rc.cfg, gap, ts, 0, 1.0, 1000);
    on_ok += on.crossed_obstacle;
    off_ok += off.crossed_obstacle;
    on_term[termination_name(on.reason)]++;
    off_term[termination_name(off.reason)]++;
  }
  std::printf("gap width %.2f m: crossing with perception %.2f, zeroed %.2f (diff %.2f)\n",
              gap.gap_width, double(on_ok) / trials, double(off_ok) / trials,
              double(on_ok - off_ok) / trials);
  std::printf("  on terminations:");
  for (auto& [k, v] : on_term) std::printf(" %s=%d", k.c_str(), v);
  std::printf("\n  off terminations:");
  for (auto& [k, v] : off_term) std::printf(" %s=%d", k.c_str(), v);
  std::printf("\n");
  return 0;
}
