// Scratch: obstacle-patch reconstruction error vs approach distance.
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

  for (TerrainKind kind : {TerrainKind::Pit, TerrainKind::Gap}) {
    std::printf("%s:\n", terrain_kind_name(kind));
    for (double d0 : {0.1, 0.4, 0.8, 1.2}) {
      Rng rng(606);
      std::vector<double> es;
      for (int i = 0; i < 256; ++i) {
        const double difficulty = rng.uniform();
        TerrainSpec spec;
        spec.kind = kind;
        spec.difficulty = difficulty;
        spec.seed = rng.next_u64();
        spec.pit_height = lerp(rc.cfg.ranges.pit_height_m[0], rc.cfg.ranges.pit_height_m[1], difficulty);
        spec.gap_width = lerp(rc.cfg.ranges.gap_width_m[0], rc.cfg.ranges.gap_width_m[1], difficulty);
        const Heightfield hf = generate_heightfield(spec, rc.cfg.terrain, rc.cfg.ranges);
        BasePose pose;
        pose.x = hf.obstacle_x0 - d0 - rng.uniform(0.0, 0.3);
        pose.y = hf.spawn_y + rng.uniform(-0.5, 0.5);
        pose.yaw = rng.uniform(-0.3, 0.3);
        pose.z = height_at(hf, pose.x, pose.y) + 0.31;
        ElevationMap truth = extract_elevation_map(hf, pose, rc.cfg.map_cfg);
        es.push_back(reconstruction_error(b.vae, corrupt_elevation_map(truth, rc.cfg.noise, rng).grid));
      }
      std::sort(es.begin(), es.end());
      int z15 = 0;
      for (double e : es) z15 += e > 0.0152 ? 1 : 0;
      std::printf("  dist %.1f-%.1f m: med %.4f p25 %.4f | I=0 at tau=0.0152: %.0f%%\n", d0,
                  d0 + 0.3, es[es.size() / 2], es[es.size() / 4], 100.0 * z15 / es.size());
    }
  }
  return 0;
}
