#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mbc/common.hpp"

namespace mbc {
namespace nn {

enum class Activation { Elu, Tanh };

/// Fully connected net with linear output layer. Parameters live in one flat
/// 64-bit array laid out per layer as [W (out x in, row-major), b]; gradient
/// vectors share the layout.
struct Mlp {
  std::vector<int> sizes;  // {in, h1, ..., out}
  Activation act = Activation::Elu;
  std::vector<double> params;

  static int param_count(const std::vector<int>& sizes) {
    int n = 0;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
    return n;
  }

  static Mlp make(std::vector<int> sizes, Activation act, Rng& rng) {
    check_arg(sizes.size() >= 2, "mlp needs at least input and output sizes");
    Mlp m;
    m.sizes = std::move(sizes);
    m.act = act;
    m.params.assign(param_count(m.sizes), 0.0);
    double* p = m.params.data();
    for (size_t l = 0; l + 1 < m.sizes.size(); ++l) {
      const int in = m.sizes[l], out = m.sizes[l + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      for (int i = 0; i < out * in; ++i) *p++ = rng.uniform(-limit, limit);
      for (int i = 0; i < out; ++i) *p++ = 0.0;  // biases
    }
    return m;
  }

  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }
  int layer_count() const { return static_cast<int>(sizes.size()) - 1; }

  /// Per-layer post-activation values kept for the backward pass.
  struct Trace {
    std::vector<std::vector<double>> acts;  // acts[0] = input, acts[L] = output
  };

  static double activate(Activation a, double x) {
    if (a == Activation::Elu) return x > 0 ? x : std::expm1(x);
    return std::tanh(x);
  }
  static double activate_grad(Activation a, double post) {
    // Both ELU and tanh derivatives are recoverable from the activation value.
    if (a == Activation::Elu) return post > 0 ? 1.0 : post + 1.0;
    return 1.0 - post * post;
  }

  void forward(std::span<const double> in, Trace& tr) const {
    check(static_cast<int>(in.size()) == in_dim(), "mlp input size mismatch");
    tr.acts.resize(sizes.size());
    tr.acts[0].assign(in.begin(), in.end());
    const double* p = params.data();
    for (int l = 0; l < layer_count(); ++l) {
      const int ni = sizes[l], no = sizes[l + 1];
      const std::vector<double>& x = tr.acts[l];
      std::vector<double>& y = tr.acts[l + 1];
      y.assign(no, 0.0);
      const double* W = p;
      const double* b = p + no * ni;
      for (int o = 0; o < no; ++o) {
        const double* w = W + static_cast<size_t>(o) * ni;
        double acc = b[o];
        for (int i = 0; i < ni; ++i) acc += w[i] * x[i];
        y[o] = (l + 1 == layer_count()) ? acc : activate(act, acc);
      }
      p += no * (ni + 1);
    }
  }

  std::vector<double> forward(std::span<const double> in) const {
    Trace tr;
    forward(in, tr);
    return tr.acts.back();
  }

  /// Reverse-mode pass for the scalar upstream^T * output. Accumulates (+=)
  /// into param_grads (same layout as params); returns gradient w.r.t. the
  /// input. param_grads may be null when only input gradients are needed.
  std::vector<double> backward(const Trace& tr, std::span<const double> upstream,
                               std::vector<double>* param_grads) const {
    check(static_cast<int>(upstream.size()) == out_dim(), "mlp upstream size mismatch");
    if (param_grads && param_grads->empty()) param_grads->assign(params.size(), 0.0);
    std::vector<double> delta(upstream.begin(), upstream.end());
    std::vector<double> prev;
    // Offsets of each layer's parameter block.
    std::vector<size_t> off(layer_count());
    size_t o = 0;
    for (int l = 0; l < layer_count(); ++l) {
      off[l] = o;
      o += static_cast<size_t>(sizes[l + 1]) * (sizes[l] + 1);
    }
    for (int l = layer_count() - 1; l >= 0; --l) {
      const int ni = sizes[l], no = sizes[l + 1];
      const std::vector<double>& x = tr.acts[l];
      const std::vector<double>& y = tr.acts[l + 1];
      if (l != layer_count() - 1)
        for (int k = 0; k < no; ++k) delta[k] *= activate_grad(act, y[k]);
      const double* W = params.data() + off[l];
      if (param_grads) {
        double* gW = param_grads->data() + off[l];
        double* gb = gW + static_cast<size_t>(no) * ni;
        for (int k = 0; k < no; ++k) {
          double* gw = gW + static_cast<size_t>(k) * ni;
          const double d = delta[k];
          for (int i = 0; i < ni; ++i) gw[i] += d * x[i];
          gb[k] += d;
        }
      }
      prev.assign(ni, 0.0);
      for (int k = 0; k < no; ++k) {
        const double* w = W + static_cast<size_t>(k) * ni;
        const double d = delta[k];
        for (int i = 0; i < ni; ++i) prev[i] += d * w[i];
      }
      delta.swap(prev);
    }
    return delta;
  }
};

/// Convenience wrapper matching the "evaluate with gradients" contract.
inline std::tuple<std::vector<double>, std::vector<double>, std::vector<double>>
mlp_eval_with_grads(const Mlp& m, std::span<const double> input, std::span<const double> upstream) {
  for (double v : input) check(std::isfinite(v), "non-finite mlp input");
  Mlp::Trace tr;
  m.forward(input, tr);
  std::vector<double> pgrads(m.params.size(), 0.0);
  std::vector<double> igrads = m.backward(tr, upstream, &pgrads);
  return {tr.acts.back(), std::move(pgrads), std::move(igrads)};
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian policy head with a state-independent log-std vector.

constexpr double kLogStdMin = -4.0;
constexpr double kLogStdMax = 1.0;

struct GaussianHead {
  std::vector<double> log_std;  // one entry per action dimension

  explicit GaussianHead(int dim = 12, double init = 0.0) : log_std(dim, init) {}

  void clamp_log_std() {
    for (auto& v : log_std) v = clamp(v, kLogStdMin, kLogStdMax);
  }

  std::vector<double> sample(std::span<const double> mean, Rng& rng) const {
    std::vector<double> a(mean.size());
    for (size_t i = 0; i < a.size(); ++i) a[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
    return a;
  }

  double log_prob(std::span<const double> mean, std::span<const double> action) const {
    const size_t k = mean.size();
    double lp = -0.5 * static_cast<double>(k) * std::log(2.0 * M_PI);
    for (size_t i = 0; i < k; ++i) {
      const double inv_std = std::exp(-log_std[i]);
      const double z = (action[i] - mean[i]) * inv_std;
      lp -= log_std[i] + 0.5 * z * z;
    }
    return lp;
  }

  /// d log_prob / d mean and d log_prob / d log_std at the given action.
  void log_prob_grads(std::span<const double> mean, std::span<const double> action,
                      std::vector<double>& d_mean, std::vector<double>& d_log_std) const {
    const size_t k = mean.size();
    d_mean.assign(k, 0.0);
    d_log_std.assign(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
      const double inv_var = std::exp(-2.0 * log_std[i]);
      const double diff = action[i] - mean[i];
      d_mean[i] = diff * inv_var;
      d_log_std[i] = diff * diff * inv_var - 1.0;
    }
  }

  double entropy() const {
    double h = 0.5 * log_std.size() * std::log(2.0 * M_PI * std::exp(1.0));
    for (double v : log_std) h += v;
    return h;
  }
};

/// sample omitted => draw one; otherwise evaluate log-prob at the action.
inline std::tuple<std::vector<double>, double, double> gaussian_head(
    std::span<const double> mean, const GaussianHead& head, Rng& rng,
    const std::vector<double>* action = nullptr) {
  for (double v : mean) check(std::isfinite(v), "non-finite gaussian mean");
  std::vector<double> a = action ? *action : head.sample(mean, rng);
  return {a, head.log_prob(mean, a), head.entropy()};
}

// ---------------------------------------------------------------------------
// VAE over flattened elevation maps.

struct Vae {
  Mlp encoder;  // input -> [mu, logvar]
  Mlp decoder;  // latent -> reconstruction
  int latent = 16;
  double beta = 0.001;

  static Vae make(int input, int hidden, int latent, Activation act, Rng& rng, double beta = 0.001) {
    Vae v;
    v.latent = latent;
    v.beta = beta;
    v.encoder = Mlp::make({input, hidden, 2 * latent}, act, rng);
    v.decoder = Mlp::make({latent, hidden, input}, act, rng);
    return v;
  }

  struct StepResult {
    std::vector<double> recon, mu, logvar;
    double loss = 0, recon_loss = 0, kl = 0;
  };

  /// Forward + exact gradients of (mean squared reconstruction error +
  /// beta * KL(q || N(0, I))) with reparameterized sampling. Gradients
  /// accumulate into enc_grads / dec_grads when provided.
  StepResult step(std::span<const double> h, Rng& rng, std::vector<double>* enc_grads,
                  std::vector<double>* dec_grads) const {
    for (double v : h) check(std::isfinite(v), "non-finite vae input");
    const int n = encoder.in_dim();
    check(static_cast<int>(h.size()) == n, "vae input size mismatch");

    Mlp::Trace enc_tr;
    encoder.forward(h, enc_tr);
    const std::vector<double>& enc_out = enc_tr.acts.back();
    StepResult r;
    r.mu.assign(enc_out.begin(), enc_out.begin() + latent);
    r.logvar.assign(enc_out.begin() + latent, enc_out.end());

    std::vector<double> eps(latent), z(latent);
    for (int i = 0; i < latent; ++i) {
      eps[i] = rng.normal();
      z[i] = r.mu[i] + std::exp(0.5 * r.logvar[i]) * eps[i];
    }

    Mlp::Trace dec_tr;
    decoder.forward(z, dec_tr);
    r.recon = dec_tr.acts.back();

    for (int i = 0; i < n; ++i) {
      const double d = r.recon[i] - h[i];
      r.recon_loss += d * d;
    }
    r.recon_loss /= n;
    for (int i = 0; i < latent; ++i)
      r.kl += -0.5 * (1.0 + r.logvar[i] - r.mu[i] * r.mu[i] - std::exp(r.logvar[i]));
    r.loss = r.recon_loss + beta * r.kl;

    if (enc_grads || dec_grads) {
      std::vector<double> d_recon(n);
      for (int i = 0; i < n; ++i) d_recon[i] = 2.0 * (r.recon[i] - h[i]) / n;
      std::vector<double> d_z = decoder.backward(dec_tr, d_recon, dec_grads);
      std::vector<double> d_enc(2 * latent, 0.0);
      for (int i = 0; i < latent; ++i) {
        d_enc[i] = d_z[i] + beta * r.mu[i];
        d_enc[latent + i] =
            d_z[i] * 0.5 * std::exp(0.5 * r.logvar[i]) * eps[i] + beta * 0.5 * (std::exp(r.logvar[i]) - 1.0);
      }
      encoder.backward(enc_tr, d_enc, enc_grads);
    }
    return r;
  }

  /// Deterministic reconstruction through the posterior mean (no sampling).
  std::vector<double> reconstruct(std::span<const double> h) const {
    std::vector<double> enc_out = encoder.forward(h);
    std::span<const double> mu(enc_out.data(), latent);
    return decoder.forward(mu);
  }
};

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer over a flat parameter vector, with a global
// gradient-norm clip applied before the update.

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double grad_clip = 1.0;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

/// Returns the pre-clip gradient norm.
inline double adam_update(std::vector<double>& params, std::vector<double> grads, double lr,
                          AdamState& st) {
  check(params.size() == grads.size(), "adam shape mismatch");
  if (st.m.size() != params.size()) st.init(params.size());
  double norm2 = 0;
  for (double g : grads) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  if (st.grad_clip > 0 && norm > st.grad_clip) {
    const double scale = st.grad_clip / norm;
    for (auto& g : grads) g *= scale;
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Central finite-difference oracle for gradient verification.

inline double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> params, const std::vector<double>& grads,
                                double h = 1e-5) {
  check(params.size() == grads.size(), "finite_diff_check shape mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fp = f(params);
    params[i] = saved - h;
    const double fm = f(params);
    params[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(grads[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace nn
}  // namespace mbc
