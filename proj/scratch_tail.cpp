// Scratch: what drives the familiar reconstruction-error tail?
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

  struct Rec {
    double e, difficulty, yaw, x;
    TerrainKind kind;
  };
  Rng rng(606);
  std::vector<Rec> recs;
  for (int i = 0; i < 2048; ++i) {
    const double difficulty = rng.uniform();
    TerrainSpec spec = sample_terrain_spec(TrainPhase::Stage1, difficulty, rng, rc.cfg.ranges,
                                           rc.cfg.terrain);
    const Heightfield hf = generate_heightfield(spec, rc.cfg.terrain, rc.cfg.ranges);
    BasePose pose;
    pose.x = rng.uniform(hf.spawn_x, hf.goal_x);
    pose.y = hf.spawn_y + rng.uniform(-0.5, 0.5);
    pose.yaw = rng.uniform(-0.5, 0.5);
    pose.z = height_at(hf, pose.x, pose.y) + 0.31;
    ElevationMap truth = extract_elevation_map(hf, pose, rc.cfg.map_cfg);
    const double e =
        reconstruction_error(b.vae, corrupt_elevation_map(truth, rc.cfg.noise, rng).grid);
    recs.push_back({e, difficulty, pose.yaw, pose.x, spec.kind});
  }
  std::sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) { return a.e > b.e; });
  std::printf("top-12 familiar errors:\n");
  for (int i = 0; i < 12; ++i)
    std::printf("  E=%.4f kind=%s d=%.2f yaw=%+.2f x=%.1f\n", recs[i].e,
                terrain_kind_name(recs[i].kind), recs[i].difficulty, recs[i].yaw, recs[i].x);
  return 0;
}
