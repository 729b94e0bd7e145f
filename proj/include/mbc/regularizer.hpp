#pragma once

#include <cstdio>
#include <functional>
#include <span>
#include <vector>

#include "mbc/common.hpp"
#include "mbc/nn.hpp"
#include "mbc/perception.hpp"

namespace mbc {

/// Mean squared reconstruction residual over the map cells, through the
/// posterior mean (deterministic at inference).
inline double reconstruction_error(const nn::Vae& vae, std::span<const double> h) {
  check(static_cast<int>(h.size()) == vae.encoder.in_dim(), "map dims do not match the VAE input");
  const std::vector<double> recon = vae.reconstruct(h);
  double e = 0.0;
  for (size_t j = 0; j < h.size(); ++j) {
    const double d = recon[j] - h[j];
    e += d * d;
  }
  return e / static_cast<double>(h.size());
}

/// Penalty factor: familiar terrain (E <= tau) is gated on; ties count as
/// familiar.
inline int penalty_indicator(double E, double tau) {
  check_arg(tau >= 0.0, "tau must be non-negative");
  return E <= tau ? 1 : 0;
}

/// Perception-cooperation constraint: batch mean of indicator-gated squared
/// action norms. d P / d a_ij = 2 * I_i * a_ij / m.
inline double cooperation_penalty(std::span<const double> actions, int m, int k,
                                  std::span<const int> indicators) {
  check(static_cast<int>(actions.size()) == m * k, "action matrix shape mismatch");
  check(static_cast<int>(indicators.size()) == m, "indicator length mismatch");
  double p = 0.0;
  for (int i = 0; i < m; ++i) {
    if (!indicators[i]) continue;
    double row = 0.0;
    for (int j = 0; j < k; ++j) {
      const double a = actions[static_cast<size_t>(i) * k + j];
      row += a * a;
    }
    p += row;
  }
  return p / m;
}

/// Total perceptive loss: surrogate + lambda_v * value - lambda_e * entropy
/// + lambda_a * P.
inline double percep_total_loss(double surrogate, double value_loss, double entropy, double P,
                                double lambda_v = 1.0, double lambda_e = 0.01,
                                double lambda_a = 0.01) {
  return surrogate + lambda_v * value_loss - lambda_e * entropy + lambda_a * P;
}

/// Familiarity threshold: the maximum reconstruction error the frozen VAE
/// makes on a calibration set of stage-1 maps. map_source(i) must return the
/// i-th calibration map.
inline double calibrate_tau(const nn::Vae& vae,
                            const std::function<std::vector<double>(int)>& map_source,
                            int n_patches = 2048) {
  check_arg(n_patches > 0, "need at least one calibration patch");
  double tau = 0.0;
  double sum = 0.0;
  for (int i = 0; i < n_patches; ++i) {
    const std::vector<double> h = map_source(i);
    const double e = reconstruction_error(vae, h);
    tau = std::max(tau, e);
    sum += e;
  }
  const double mean = sum / n_patches;
  if (tau > 10.0 * std::max(mean, 1e-9)) {
    std::fprintf(stderr, "warning: calibration max error %.4g is >10x the typical %.4g\n", tau,
                 mean);
  }
  return tau;
}

enum class Stage { One = 1, Two = 2 };

/// Final action composition. Stage 1 forces the perceptive contribution to
/// zero; stage 2 sums the two policies elementwise.
inline std::vector<double> combine_actions(std::span<const double> a_blind,
                                           std::span<const double> a_percep, Stage stage) {
  check(a_blind.size() == a_percep.size(), "action dimension mismatch");
  std::vector<double> a(a_blind.begin(), a_blind.end());
  if (stage == Stage::Two)
    for (size_t i = 0; i < a.size(); ++i) a[i] += a_percep[i];
  return a;
}

// ---------------------------------------------------------------------------
// Simplified two-sided latent regression standing in for online adaptation:
// the history encoder maps a proprioceptive window to (v_hat, e_hat); its
// targets are the measured velocity and the privileged encoding, and a small
// symmetric term pulls the privileged encoding toward the history estimate.

struct RoaResult {
  std::vector<double> v_hat;  // 3
  std::vector<double> e_hat;  // latent estimate from history
  std::vector<double> e;      // privileged encoding
  double loss = 0.0;
};

struct RoaConfig {
  int history_len = 20;
  int e_dim = 8;
  double symmetric_weight = 0.1;
};

/// Forward only (acting path): split history-encoder output into (v_hat, e_hat).
inline void roa_estimates(const nn::Mlp& hist_enc, std::span<const double> window,
                          std::vector<double>& v_hat, std::vector<double>& e_hat) {
  const std::vector<double> out = hist_enc.forward(window);
  v_hat.assign(out.begin(), out.begin() + 3);
  e_hat.assign(out.begin() + 3, out.end());
}

/// Loss + exact gradients; hist_grads / priv_grads accumulate when non-null.
/// Windows shorter than history_len are zero-padded at the front by the
/// caller (the rollout keeps them padded).
inline RoaResult roa_latent_loss(const nn::Mlp& hist_enc, const nn::Mlp& priv_enc,
                                 std::span<const double> window, std::span<const double> priv_vec,
                                 std::span<const double> v_true, const RoaConfig& cfg,
                                 std::vector<double>* hist_grads, std::vector<double>* priv_grads,
                                 double scale = 1.0) {
  nn::Mlp::Trace hist_tr, priv_tr;
  hist_enc.forward(window, hist_tr);
  priv_enc.forward(priv_vec, priv_tr);
  const std::vector<double>& hist_out = hist_tr.acts.back();
  const std::vector<double>& e = priv_tr.acts.back();
  check(static_cast<int>(hist_out.size()) == 3 + cfg.e_dim, "history encoder output dim mismatch");
  check(static_cast<int>(e.size()) == cfg.e_dim, "privileged encoder output dim mismatch");

  RoaResult r;
  r.v_hat.assign(hist_out.begin(), hist_out.begin() + 3);
  r.e_hat.assign(hist_out.begin() + 3, hist_out.end());
  r.e = e;

  double loss_v = 0.0, loss_e = 0.0, loss_sym = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = r.v_hat[i] - v_true[i];
    loss_v += d * d;
  }
  loss_v /= 3.0;
  for (int i = 0; i < cfg.e_dim; ++i) {
    const double d = r.e_hat[i] - e[i];
    loss_e += d * d;
    const double ds = e[i] - r.e_hat[i];
    loss_sym += ds * ds;
  }
  loss_e /= cfg.e_dim;
  loss_sym /= cfg.e_dim;
  r.loss = loss_v + loss_e + cfg.symmetric_weight * loss_sym;

  if (hist_grads || priv_grads) {
    // History encoder sees e detached; the privileged encoder sees e_hat
    // detached through the symmetric term.
    std::vector<double> d_hist(3 + cfg.e_dim, 0.0);
    for (int i = 0; i < 3; ++i) d_hist[i] = scale * 2.0 * (r.v_hat[i] - v_true[i]) / 3.0;
    for (int i = 0; i < cfg.e_dim; ++i)
      d_hist[3 + i] = scale * 2.0 * (r.e_hat[i] - e[i]) / cfg.e_dim;
    if (hist_grads) hist_enc.backward(hist_tr, d_hist, hist_grads);

    std::vector<double> d_priv(cfg.e_dim, 0.0);
    for (int i = 0; i < cfg.e_dim; ++i)
      d_priv[i] = scale * cfg.symmetric_weight * 2.0 * (e[i] - r.e_hat[i]) / cfg.e_dim;
    if (priv_grads) priv_enc.backward(priv_tr, d_priv, priv_grads);
  }
  return r;
}

}  // namespace mbc
