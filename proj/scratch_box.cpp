// Scratch: box-shaped highland discrimination probe.
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

  const double box_len = argc > 2 ? std::atof(argv[2]) : 1.6;
  const double box_halfwidth = argc > 3 ? std::atof(argv[3]) : 1.0;

  Rng rng(606);
  std::vector<double> es;
  for (int i = 0; i < 256; ++i) {
    const double difficulty = rng.uniform();
    const double h = 0.1 + 0.35 * difficulty;
    // Build the box tile by hand.
    TerrainSpec spec;
    spec.kind = TerrainKind::Slope;
    spec.slope_incl_deg = 0.0;
    Heightfield hf = generate_heightfield(spec, rc.cfg.terrain, rc.cfg.ranges);
    const double x0 = 10.0, x1 = 10.0 + box_len;
    const double y0 = 2.0 - box_halfwidth, y1 = 2.0 + box_halfwidth;
    for (int ix = 0; ix < hf.nx; ++ix)
      for (int iy = 0; iy < hf.ny; ++iy) {
        const double x = (ix + 0.5) * hf.resolution, y = (iy + 0.5) * hf.resolution;
        if (x >= x0 && x < x1 && y >= y0 && y < y1) hf.at(ix, iy) = h;
      }
    BasePose pose;
    pose.x = x0 - rng.uniform(0.3, 1.5);
    pose.y = 2.0 + rng.uniform(-0.5, 0.5);
    pose.yaw = rng.uniform(-0.3, 0.3);
    pose.z = height_at(hf, pose.x, pose.y) + 0.31;
    ElevationMap truth = extract_elevation_map(hf, pose, rc.cfg.map_cfg);
    es.push_back(reconstruction_error(b.vae, corrupt_elevation_map(truth, rc.cfg.noise, rng).grid));
  }
  std::sort(es.begin(), es.end());
  int zeros = 0;
  for (double e : es) zeros += e > tau ? 1 : 0;
  std::printf("box len=%.1f halfw=%.1f: median %.4f p90 %.4f I=0 %.1f%%\n", box_len, box_halfwidth,
              es[es.size() / 2], es[static_cast<size_t>(es.size() * 0.9)],
              100.0 * zeros / es.size());
  return 0;
}
