#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mbc/common.hpp"

namespace mbc {

struct IterationStats {
  long iteration = 0;
  double wall_seconds = 0;
  double blind_surrogate = 0, blind_value = 0, blind_entropy = 0, blind_kl = 0, blind_lr = 0;
  double percep_surrogate = 0, percep_value = 0, percep_entropy = 0, percep_kl = 0, percep_lr = 0;
  double mean_return = 0;
  double mean_ep_len = 0;
  double mean_P = 0;
  double mean_I = 0;
  // Extra diagnostics kept out of the CSV contract.
  double mean_step_reward = 0;
  double probe_P = 0;
  double max_grad_norm = 0;
  double vae_loss = 0;
};

inline const char* kMetricsHeader =
    "iteration,wall_seconds,blind_surrogate,blind_value_loss,blind_entropy,blind_kl,blind_lr,"
    "percep_surrogate,percep_value_loss,percep_entropy,percep_kl,percep_lr,"
    "mean_return,mean_episode_length,mean_P,mean_I_rate";

/// Append-only run metrics; the header is written once per file, so resumed
/// runs continue without duplicating it.
struct MetricsWriter {
  std::string path;

  explicit MetricsWriter(std::string p = "") : path(std::move(p)) {}

  void append(const IterationStats& s) const {
    if (path.empty()) return;
    const bool fresh =
        !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream f(path, std::ios::app);
    check(f.good(), "cannot open metrics file: " + path);
    if (fresh) f << kMetricsHeader << "\n";
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%ld,%.3f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                  "%.17g,%.17g,%.17g",
                  s.iteration, s.wall_seconds, s.blind_surrogate, s.blind_value, s.blind_entropy,
                  s.blind_kl, s.blind_lr, s.percep_surrogate, s.percep_value, s.percep_entropy,
                  s.percep_kl, s.percep_lr, s.mean_return, s.mean_ep_len, s.mean_P, s.mean_I);
    f << buf << "\n";
    f.flush();
    check(f.good(), "metrics write failed: " + path);
  }
};

}  // namespace mbc
