#pragma once

#include <cstdio>
#include <deque>
#include <ostream>
#include <vector>

#include "mbc/common.hpp"
#include "mbc/terrain.hpp"

namespace mbc {

/// Robot-centric height grid, values relative to base z. Row index runs
/// along the body forward axis, column index to the left.
struct ElevationMap {
  int rows = 24;
  int cols = 16;
  double resolution = 0.10;
  int rows_behind = 8;  // rows - rows_behind sample ahead of the base
  std::vector<double> grid;
  bool active = true;
  int age_steps = 0;

  ElevationMap() { grid.assign(static_cast<size_t>(rows) * cols, 0.0); }
  ElevationMap(int r, int c, double res, int behind)
      : rows(r), cols(c), resolution(res), rows_behind(behind) {
    grid.assign(static_cast<size_t>(rows) * cols, 0.0);
  }

  double& at(int i, int j) { return grid[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return grid[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return grid.size(); }

  void zero() { std::fill(grid.begin(), grid.end(), 0.0); }
};

struct HeightmapNoiseConfig {
  double base_z_range[2] = {-0.05, 0.05};
  double gaussian_clamp[2] = {-0.02, 0.02};
  double gaussian_sigma = 0.01;
  double spike_proportion = 0.05;
  double spike_magnitude[2] = {0.1, 0.5};
  int update_delay_steps = 5;   // 100 ms at 50 Hz
  int update_period_steps = 5;  // 10 Hz refresh
};

struct BasePose {
  double x = 0, y = 0, z = 0, yaw = 0;
};

/// Sample the heightfield on a yaw-aligned, body-centered lattice and
/// subtract base z.
inline ElevationMap extract_elevation_map(const Heightfield& hf, const BasePose& pose,
                                          const ElevationMap& cfg) {
  ElevationMap map(cfg.rows, cfg.cols, cfg.resolution, cfg.rows_behind);
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  for (int i = 0; i < map.rows; ++i) {
    const double fx = (i + 0.5 - map.rows_behind) * map.resolution;
    for (int j = 0; j < map.cols; ++j) {
      const double fy = (j + 0.5 - map.cols * 0.5) * map.resolution;
      const double wx = pose.x + c * fx - s * fy;
      const double wy = pose.y + s * fx + c * fy;
      map.at(i, j) = height_at(hf, wx, wy) - pose.z;
    }
  }
  return map;
}

/// One refresh worth of sensor corruption: a shared base-z offset, clamped
/// per-cell Gaussian noise, and sparse spikes.
inline ElevationMap corrupt_elevation_map(const ElevationMap& in, const HeightmapNoiseConfig& cfg,
                                          Rng& rng) {
  check(in.active, "corrupt_elevation_map requires an active map");
  ElevationMap out = in;
  const double base_off = rng.uniform(cfg.base_z_range[0], cfg.base_z_range[1]);
  for (auto& v : out.grid) {
    const double g =
        clamp(rng.normal(0.0, cfg.gaussian_sigma), cfg.gaussian_clamp[0], cfg.gaussian_clamp[1]);
    v += base_off + g;
    if (rng.uniform() < cfg.spike_proportion) {
      const double mag = rng.uniform(cfg.spike_magnitude[0], cfg.spike_magnitude[1]);
      v += rng.uniform() < 0.5 ? mag : -mag;
    }
  }
  return out;
}

inline ElevationMap set_perception_active(const ElevationMap& in, bool active) {
  ElevationMap out = in;
  out.active = active;
  if (!active) out.zero();
  return out;
}

/// Delay + refresh model. Truth maps are pushed every control step; the map
/// visible to policies reflects the state update_delay_steps ago, refreshed
/// every update_period_steps and held constant in between. Deactivating zeroes
/// the visible map and freezes refresh; reactivating resumes on the next tick.
struct PerceptionPipeline {
  HeightmapNoiseConfig noise;
  ElevationMap visible;
  std::deque<ElevationMap> ring;
  int step = 0;
  bool active = true;

  void reset(const Heightfield& hf, const BasePose& pose, const ElevationMap& cfg, Rng& rng) {
    visible = ElevationMap(cfg.rows, cfg.cols, cfg.resolution, cfg.rows_behind);
    ring.clear();
    step = 0;
    const ElevationMap truth = extract_elevation_map(hf, pose, cfg);
    for (int k = 0; k <= noise.update_delay_steps; ++k) ring.push_back(truth);
    visible = active ? corrupt_elevation_map(truth, noise, rng) : set_perception_active(truth, false);
    visible.active = active;
    visible.age_steps = 0;
  }

  /// Advance one control step with the current true pose.
  void advance(const Heightfield& hf, const BasePose& pose, Rng& rng) {
    ++step;
    ring.push_back(extract_elevation_map(hf, pose, visible));
    while (static_cast<int>(ring.size()) > noise.update_delay_steps + 1) ring.pop_front();
    visible.age_steps += 1;
    if (!active) {
      visible.zero();
      visible.active = false;
      return;
    }
    visible.active = true;
    if (step % noise.update_period_steps == 0) {
      ElevationMap refreshed = corrupt_elevation_map(ring.front(), noise, rng);
      refreshed.active = true;
      refreshed.age_steps = 0;
      visible = refreshed;
    }
  }

  void set_active(bool a) {
    active = a;
    visible = set_perception_active(visible, a);
  }
};

/// Map dump in the same portable text-grid format as terrain tiles; the
/// origin is the body-frame corner of the lattice.
inline void write_map_grid(std::ostream& os, const ElevationMap& map) {
  os << "mbc-grid 1\n";
  char buf[40];
  os << "origin " << -map.rows_behind * map.resolution << " "
     << -(map.cols * 0.5) * map.resolution << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", map.resolution);
  os << "resolution " << buf << "\n";
  os << "dims " << map.rows << " " << map.cols << "\n";
  os << "active " << (map.active ? 1 : 0) << " age " << map.age_steps << "\n";
  for (int i = 0; i < map.rows; ++i) {
    for (int j = 0; j < map.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(i, j));
      os << (j ? " " : "") << buf;
    }
    os << "\n";
  }
}

}  // namespace mbc
