#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mbc/common.hpp"

namespace mbc {

enum class TerrainKind { Slope, Stairs, Discrete, Pit, Gap, Pillar };

enum class TrainPhase { Stage1, Stage2 };

inline const char* terrain_kind_name(TerrainKind k) {
  switch (k) {
    case TerrainKind::Slope: return "slope";
    case TerrainKind::Stairs: return "stairs";
    case TerrainKind::Discrete: return "discrete";
    case TerrainKind::Pit: return "pit";
    case TerrainKind::Gap: return "gap";
    case TerrainKind::Pillar: return "pillar";
  }
  return "?";
}

inline TerrainKind terrain_kind_from_name(const std::string& s) {
  if (s == "slope") return TerrainKind::Slope;
  if (s == "stairs") return TerrainKind::Stairs;
  if (s == "discrete") return TerrainKind::Discrete;
  if (s == "pit" || s == "highland") return TerrainKind::Pit;
  if (s == "gap") return TerrainKind::Gap;
  if (s == "pillar") return TerrainKind::Pillar;
  throw std::invalid_argument("unknown terrain kind: " + s);
}

/// Per-kind parameter ranges. Difficulty 0 maps to the first value of each
/// range, difficulty 1 to the second (pillar spacing shrinks as difficulty
/// grows, so its "range" runs high to low).
struct TerrainRanges {
  double slope_incl_deg[2] = {0.0, 40.0};
  double stair_height_m[2] = {0.02, 0.15};
  double discrete_height_m[2] = {0.03, 0.18};
  double pit_height_m[2] = {0.10, 0.45};
  double gap_width_m[2] = {0.15, 0.45};
  double pillar_size_m[2] = {0.40, 0.60};
  double pillar_spacing_m[2] = {1.60, 1.40};
};

struct TerrainSpec {
  TerrainKind kind = TerrainKind::Slope;
  double difficulty = 0.0;
  uint64_t seed = 0;

  // Kind-specific parameters; only the fields for `kind` are meaningful.
  double slope_incl_deg = 0.0;
  double stair_step_height = 0.0;
  double stair_step_width = 0.31;
  double discrete_max_height = 0.0;
  double pit_height = 0.0;
  double gap_width = 0.0;
  double pillar_size = 0.0;
  double pillar_spacing = 0.0;
};

struct TerrainLayout {
  double tile_length = 24.0;
  double tile_width = 4.0;
  double resolution = 0.05;
  double spawn_x = 2.0;
  double goal_distance = 20.0;
  double stair_width = 0.31;    // default step width when not overridden
  double pillar_height = 1.0;
  double gap_depth = 1.0;       // >= 0.5 so a fallen robot cannot step out
  double pit_length = 4.0;
};

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

inline TerrainSpec sample_terrain_spec(TrainPhase phase, double difficulty, Rng& rng,
                                       const TerrainRanges& ranges = {},
                                       const TerrainLayout& layout = {}) {
  check_arg(difficulty >= 0.0 && difficulty <= 1.0, "difficulty must be in [0,1]");
  TerrainSpec spec;
  spec.difficulty = difficulty;
  spec.seed = rng.next_u64();

  const double u = rng.uniform();
  if (phase == TrainPhase::Stage1) {
    // 30% slope, 60% stairs, 10% discrete
    if (u < 0.30)
      spec.kind = TerrainKind::Slope;
    else if (u < 0.90)
      spec.kind = TerrainKind::Stairs;
    else
      spec.kind = TerrainKind::Discrete;
  } else {
    // 10% slope, 60% stairs, 30% complex (pit/gap/pillar uniform)
    if (u < 0.10) {
      spec.kind = TerrainKind::Slope;
    } else if (u < 0.70) {
      spec.kind = TerrainKind::Stairs;
    } else {
      const uint64_t c = rng.uniform_int(3);
      spec.kind = c == 0 ? TerrainKind::Pit : (c == 1 ? TerrainKind::Gap : TerrainKind::Pillar);
    }
  }

  const double d = difficulty;
  spec.slope_incl_deg = lerp(ranges.slope_incl_deg[0], ranges.slope_incl_deg[1], d);
  spec.stair_step_height = lerp(ranges.stair_height_m[0], ranges.stair_height_m[1], d);
  spec.stair_step_width = layout.stair_width;
  spec.discrete_max_height = lerp(ranges.discrete_height_m[0], ranges.discrete_height_m[1], d);
  spec.pit_height = lerp(ranges.pit_height_m[0], ranges.pit_height_m[1], d);
  spec.gap_width = lerp(ranges.gap_width_m[0], ranges.gap_width_m[1], d);
  spec.pillar_size = lerp(ranges.pillar_size_m[0], ranges.pillar_size_m[1], d);
  spec.pillar_spacing = lerp(ranges.pillar_spacing_m[0], ranges.pillar_spacing_m[1], d);
  return spec;
}

/// World-frame 2.5D terrain tile. Row index i runs along x, column j along y.
struct Heightfield {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double resolution = 0.05;
  int nx = 0;
  int ny = 0;
  std::vector<double> cells;  // nx * ny, row-major in x

  double spawn_x = 0.0;
  double spawn_y = 0.0;
  double spawn_yaw = 0.0;
  double goal_x = 0.0;
  // x range of the central obstacle (gap/pit/pillar zone); equal when none.
  double obstacle_x0 = 0.0;
  double obstacle_x1 = 0.0;
  TerrainSpec spec;

  double& at(int i, int j) { return cells[static_cast<size_t>(i) * ny + j]; }
  double at(int i, int j) const { return cells[static_cast<size_t>(i) * ny + j]; }
};

/// Nearest-cell height lookup. Queries outside the grid clamp to the border
/// cell. No interpolation: step faces stay sharp.
inline double height_at(const Heightfield& hf, double x, double y) {
  int i = static_cast<int>(std::floor((x - hf.origin_x) / hf.resolution));
  int j = static_cast<int>(std::floor((y - hf.origin_y) / hf.resolution));
  i = std::clamp(i, 0, hf.nx - 1);
  j = std::clamp(j, 0, hf.ny - 1);
  return hf.at(i, j);
}

namespace detail {

inline void validate_spec(const TerrainSpec& s, const TerrainRanges& r) {
  auto in = [](double v, const double* range) {
    const double lo = std::min(range[0], range[1]);
    const double hi = std::max(range[0], range[1]);
    return v >= lo - 1e-12 && v <= hi + 1e-12;
  };
  switch (s.kind) {
    case TerrainKind::Slope:
      check_arg(in(s.slope_incl_deg, r.slope_incl_deg), "slope inclination out of range");
      break;
    case TerrainKind::Stairs:
      check_arg(in(s.stair_step_height, r.stair_height_m), "stair step height out of range");
      check_arg(s.stair_step_width > 0, "stair step width must be positive");
      break;
    case TerrainKind::Discrete:
      check_arg(in(s.discrete_max_height, r.discrete_height_m), "discrete obstacle height out of range");
      break;
    case TerrainKind::Pit:
      check_arg(in(s.pit_height, r.pit_height_m), "pit height out of range");
      break;
    case TerrainKind::Gap:
      check_arg(in(s.gap_width, r.gap_width_m), "gap width out of range");
      break;
    case TerrainKind::Pillar:
      check_arg(in(s.pillar_size, r.pillar_size_m), "pillar size out of range");
      check_arg(in(s.pillar_spacing, r.pillar_spacing_m), "pillar spacing out of range");
      break;
  }
}

}  // namespace detail

/// Deterministic tile builder: the same spec (including seed) always yields a
/// bitwise-identical grid.
inline Heightfield generate_heightfield(const TerrainSpec& spec, const TerrainLayout& layout = {},
                                        const TerrainRanges& ranges = {}) {
  check_arg(layout.resolution > 0.0, "resolution must be positive");
  detail::validate_spec(spec, ranges);

  Heightfield hf;
  hf.resolution = layout.resolution;
  hf.nx = static_cast<int>(std::lround(layout.tile_length / layout.resolution));
  hf.ny = static_cast<int>(std::lround(layout.tile_width / layout.resolution));
  hf.cells.assign(static_cast<size_t>(hf.nx) * hf.ny, 0.0);
  hf.spawn_x = layout.spawn_x;
  hf.spawn_y = layout.tile_width * 0.5;
  hf.spawn_yaw = 0.0;
  hf.goal_x = layout.spawn_x + layout.goal_distance;
  hf.spec = spec;

  auto cell_x = [&](int i) { return hf.origin_x + (i + 0.5) * hf.resolution; };
  auto cell_y = [&](int j) { return hf.origin_y + (j + 0.5) * hf.resolution; };

  const double pad = layout.spawn_x + 2.0;  // flat ground around the spawn

  switch (spec.kind) {
    case TerrainKind::Slope: {
      const double slope = std::tan(spec.slope_incl_deg * M_PI / 180.0);
      for (int i = 0; i < hf.nx; ++i) {
        const double h = std::max(0.0, cell_x(i) - pad) * slope;
        for (int j = 0; j < hf.ny; ++j) hf.at(i, j) = h;
      }
      break;
    }
    case TerrainKind::Stairs: {
      // Ascending flight straight into the descending one; the apex is a
      // single step wide so long elevated plateaus never appear here.
      const int n_steps = 10;
      const double w = spec.stair_step_width;
      const double h = spec.stair_step_height;
      const double up0 = pad;
      const double up1 = up0 + n_steps * w;
      const double down0 = up1;
      const double down1 = down0 + n_steps * w;
      for (int i = 0; i < hf.nx; ++i) {
        const double x = cell_x(i);
        double z = 0.0;
        if (x >= up0 && x < up1) {
          z = (1.0 + std::floor((x - up0) / w)) * h;
        } else if (x >= up1 && x < down0) {
          z = n_steps * h;
        } else if (x >= down0 && x < down1) {
          z = (n_steps - 1.0 - std::floor((x - down0) / w)) * h;
        }
        for (int j = 0; j < hf.ny; ++j) hf.at(i, j) = z;
      }
      hf.obstacle_x0 = up0;
      hf.obstacle_x1 = down1;
      break;
    }
    case TerrainKind::Discrete: {
      Rng rng(spec.seed);
      const int n_blocks = 36;
      const double zone0 = pad;
      const double zone1 = layout.tile_length - 2.0;
      for (int b = 0; b < n_blocks; ++b) {
        const double cx = rng.uniform(zone0, zone1);
        const double cy = rng.uniform(0.0, layout.tile_width);
        const double sx = rng.uniform(0.4, 1.0);
        const double sy = rng.uniform(0.4, 1.0);
        const double bh = spec.discrete_max_height * rng.uniform(0.3, 1.0);
        const int i0 = std::max(0, static_cast<int>((cx - sx / 2) / hf.resolution));
        const int i1 = std::min(hf.nx - 1, static_cast<int>((cx + sx / 2) / hf.resolution));
        const int j0 = std::max(0, static_cast<int>((cy - sy / 2) / hf.resolution));
        const int j1 = std::min(hf.ny - 1, static_cast<int>((cy + sy / 2) / hf.resolution));
        for (int i = i0; i <= i1; ++i)
          for (int j = j0; j <= j1; ++j) hf.at(i, j) = std::max(hf.at(i, j), bh);
      }
      hf.obstacle_x0 = zone0;
      hf.obstacle_x1 = zone1;
      break;
    }
    case TerrainKind::Pit: {
      // Raised platform ("highland"): climb up, cross, climb down. Placed a
      // few metres past the spawn so training episodes reach it.
      const double x0 = 6.0;
      const double x1 = x0 + layout.pit_length;
      for (int i = 0; i < hf.nx; ++i) {
        const double x = cell_x(i);
        const double z = (x >= x0 && x < x1) ? spec.pit_height : 0.0;
        for (int j = 0; j < hf.ny; ++j) hf.at(i, j) = z;
      }
      hf.obstacle_x0 = x0;
      hf.obstacle_x1 = x1;
      break;
    }
    case TerrainKind::Gap: {
      const double x0 = 6.0;
      const double x1 = x0 + spec.gap_width;
      for (int i = 0; i < hf.nx; ++i) {
        const double x = cell_x(i);
        const double z = (x >= x0 && x < x1) ? -layout.gap_depth : 0.0;
        for (int j = 0; j < hf.ny; ++j) hf.at(i, j) = z;
      }
      hf.obstacle_x0 = x0;
      hf.obstacle_x1 = x1;
      break;
    }
    case TerrainKind::Pillar: {
      const double zone0 = 6.0;
      const double zone1 = 18.0;
      const double d = spec.pillar_spacing;
      const double half = spec.pillar_size * 0.5;
      int col = 0;
      for (double px = zone0; px <= zone1; px += d, ++col) {
        const double y_off = (col % 2 == 0) ? 0.0 : d * 0.5;
        for (double py = y_off - d; py <= layout.tile_width + d; py += d) {
          const int i0 = std::max(0, static_cast<int>((px - half) / hf.resolution));
          const int i1 = std::min(hf.nx - 1, static_cast<int>((px + half) / hf.resolution));
          const int j0 = std::max(0, static_cast<int>((py - half) / hf.resolution));
          const int j1 = std::min(hf.ny - 1, static_cast<int>((py + half) / hf.resolution));
          if (py + half < 0 || py - half > layout.tile_width) continue;
          for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) hf.at(i, j) = layout.pillar_height;
        }
      }
      hf.obstacle_x0 = zone0;
      hf.obstacle_x1 = zone1;
      break;
    }
  }

  // Spawn must sit on local ground, with the goal ahead of it.
  check(std::abs(height_at(hf, hf.spawn_x, hf.spawn_y)) < 1e-9, "spawn cell not at ground level");
  check(hf.goal_x > hf.spawn_x, "goal must lie ahead of the spawn");
  return hf;
}

// ---------------------------------------------------------------------------
// Portable text-grid format shared by terrain tiles and elevation map dumps.
// Header lines, then one row of heights per line ('%.17g', lossless).

inline void write_text_grid(std::ostream& os, const Heightfield& hf) {
  os << "mbc-grid 1\n";
  os << "origin " << hf.origin_x << " " << hf.origin_y << "\n";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", hf.resolution);
  os << "resolution " << buf << "\n";
  os << "dims " << hf.nx << " " << hf.ny << "\n";
  os << "spawn " << hf.spawn_x << " " << hf.spawn_y << " " << hf.spawn_yaw << "\n";
  os << "goal_x " << hf.goal_x << "\n";
  os << "kind " << terrain_kind_name(hf.spec.kind) << " difficulty " << hf.spec.difficulty
     << " seed " << hf.spec.seed << "\n";
  for (int i = 0; i < hf.nx; ++i) {
    for (int j = 0; j < hf.ny; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", hf.at(i, j));
      os << (j ? " " : "") << buf;
    }
    os << "\n";
  }
}

inline Heightfield read_text_grid(std::istream& is) {
  Heightfield hf;
  std::string tag;
  int version = 0;
  is >> tag >> version;
  check(tag == "mbc-grid" && version == 1, "bad grid header");
  std::string key;
  while (is >> key) {
    if (key == "origin") {
      is >> hf.origin_x >> hf.origin_y;
    } else if (key == "resolution") {
      is >> hf.resolution;
    } else if (key == "dims") {
      is >> hf.nx >> hf.ny;
    } else if (key == "spawn") {
      is >> hf.spawn_x >> hf.spawn_y >> hf.spawn_yaw;
    } else if (key == "goal_x") {
      is >> hf.goal_x;
    } else if (key == "kind") {
      std::string kind_name, dword, sword;
      is >> kind_name >> dword >> hf.spec.difficulty >> sword >> hf.spec.seed;
      hf.spec.kind = terrain_kind_from_name(kind_name);
      break;
    } else {
      throw std::runtime_error("unknown grid header key: " + key);
    }
  }
  check(hf.nx > 0 && hf.ny > 0, "grid dims missing");
  hf.cells.resize(static_cast<size_t>(hf.nx) * hf.ny);
  for (auto& c : hf.cells) is >> c;
  check(static_cast<bool>(is), "truncated grid data");
  return hf;
}

inline void write_grid_csv(std::ostream& os, const Heightfield& hf) {
  os << "x,y,height\n";
  char buf[40];
  for (int i = 0; i < hf.nx; ++i) {
    for (int j = 0; j < hf.ny; ++j) {
      const double x = hf.origin_x + (i + 0.5) * hf.resolution;
      const double y = hf.origin_y + (j + 0.5) * hf.resolution;
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.17g", x, y, hf.at(i, j));
      os << buf << "\n";
    }
  }
}

}  // namespace mbc
