// Scratch: does extra dedicated VAE fitting sharpen familiarity separation?
#include <algorithm>
#include <cstdio>

#include "mbc/training.hpp"

using namespace mbc;

static void measure(const nn::Vae& vae, const RunConfig& cfg, const char* label) {
  Rng rng(606);
  std::vector<double> fam, gap, pit;
  for (int i = 0; i < 384; ++i)
    fam.push_back(reconstruction_error(vae, sample_terrain_patch(TrainPhase::Stage1, cfg, rng)));
  for (int i = 0; i < 384; ++i)
    gap.push_back(reconstruction_error(vae, sample_obstacle_patch(TerrainKind::Gap, cfg, rng)));
  for (int i = 0; i < 384; ++i)
    pit.push_back(reconstruction_error(vae, sample_obstacle_patch(TerrainKind::Pit, cfg, rng)));
  std::sort(fam.begin(), fam.end());
  const double tau = fam.back();
  auto rate0 = [&](std::vector<double>& v) {
    int z = 0;
    for (double e : v) z += e > tau ? 1 : 0;
    return 100.0 * z / v.size();
  };
  std::sort(gap.begin(), gap.end());
  std::sort(pit.begin(), pit.end());
  std::printf("%s: tau~%.4f fam_med %.4f | gap med %.4f I0 %.0f%% | pit med %.4f p10 %.4f I0 %.0f%%\n",
              label, tau, fam[fam.size() / 2], gap[gap.size() / 2], rate0(gap),
              pit[pit.size() / 2], pit[static_cast<size_t>(pit.size() * 0.1)], rate0(pit));
}

int main(int argc, char** argv) {
  const CheckpointContainer c = load_checkpoint(argv[1]);
  ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  Rng init(0);
  PolicyBundle b = PolicyBundle::make(rc.cfg, init);
  b.load_from_checkpoint(c);
  measure(b.vae, rc.cfg, "before");

  // Dedicated finalization: fresh stage-1 patches, many epochs.
  Rng prng = Rng::derive(0, 0xf17);
  Rng vrng = Rng::derive(0, 0xf18);
  const int pool_n = 4096;
  const int map_dim = rc.cfg.map_cfg.rows * rc.cfg.map_cfg.cols;
  std::vector<double> pool;
  pool.reserve(static_cast<size_t>(pool_n) * map_dim);
  for (int i = 0; i < pool_n; ++i) {
    const auto h = sample_terrain_patch(TrainPhase::Stage1, rc.cfg, prng);
    pool.insert(pool.end(), h.begin(), h.end());
  }
  nn::AdamState adam;
  std::vector<int> order(pool_n);
  std::iota(order.begin(), order.end(), 0);
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 10;
  for (int ep = 0; ep < epochs; ++ep) {
    for (int i = pool_n - 1; i > 0; --i) {
      const int j = static_cast<int>(vrng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
    std::vector<double> eg(b.vae.encoder.params.size()), dg(b.vae.decoder.params.size());
    for (int start = 0; start + 64 <= pool_n; start += 64) {
      std::fill(eg.begin(), eg.end(), 0.0);
      std::fill(dg.begin(), dg.end(), 0.0);
      for (int k = start; k < start + 64; ++k) {
        std::span<const double> map(pool.data() + static_cast<size_t>(order[k]) * map_dim, map_dim);
        b.vae.step(map, vrng, &eg, &dg);
      }
      for (auto& g : eg) g /= 64;
      for (auto& g : dg) g /= 64;
      std::vector<double> p(b.vae.encoder.params);
      p.insert(p.end(), b.vae.decoder.params.begin(), b.vae.decoder.params.end());
      std::vector<double> g(eg);
      g.insert(g.end(), dg.begin(), dg.end());
      nn::adam_update(p, g, 1e-4, adam);
      std::copy(p.begin(), p.begin() + b.vae.encoder.params.size(), b.vae.encoder.params.begin());
      std::copy(p.begin() + b.vae.encoder.params.size(), p.end(), b.vae.decoder.params.begin());
    }
    if ((ep + 1) % 5 == 0) measure(b.vae, rc.cfg, ("epoch " + std::to_string(ep + 1)).c_str());
  }
  return 0;
}
