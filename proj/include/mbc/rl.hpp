#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "mbc/common.hpp"
#include "mbc/nn.hpp"

namespace mbc {
namespace rl {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int rollout_steps = 21;
  int epochs = 5;
  int minibatches = 4;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double clip = 0.2;
  double learning_rate = 1e-3;
  bool adaptive_lr = true;
  double desired_kl = 0.01;
  double grad_clip = 1.0;
  double lr_min = 1e-6;
  double lr_max = 1e-2;
};

/// Standard GAE recursion over one environment's trajectory. done[t] marks
/// that the episode ended at step t; no value bootstraps across it.
inline void compute_gae(std::span<const double> rewards, std::span<const uint8_t> dones,
                        std::span<const double> values, double bootstrap_value, double gamma,
                        double lambda, std::span<double> advantages, std::span<double> returns) {
  const int T = static_cast<int>(rewards.size());
  double gae = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double nonterminal = dones[t] ? 0.0 : 1.0;
    const double next_value = (t == T - 1) ? bootstrap_value : values[t + 1];
    const double delta = rewards[t] + gamma * next_value * nonterminal - values[t];
    gae = delta + gamma * lambda * nonterminal * gae;
    advantages[t] = gae;
    returns[t] = gae + values[t];
  }
}

/// Mean-0 / std-1 normalization over the whole update batch. Degenerate
/// batches (zero variance) are left unshifted in scale.
inline void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= adv.size();
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / adv.size());
  for (auto& a : adv) a = std > 1e-8 ? (a - mean) / std : a - mean;
}

/// Per-agent trajectories, sample-major ([env * T + t] rows). Observation and
/// map snapshots are stored flat; reconstruction errors / indicators are
/// filled in before the stage-2 update.
struct RolloutBuffer {
  int n_envs = 0;
  int T = 0;
  int blind_dim = 0, percep_dim = 0, critic_dim = 0, map_dim = 0, window_dim = 0, priv_dim = 0;
  int act_dim = 12;

  std::vector<double> s_blind, s_percep, s_critic;
  std::vector<double> a_blind, a_percep;
  std::vector<double> logp_blind, logp_percep;
  std::vector<double> value_blind, value_percep;
  std::vector<double> reward;
  std::vector<uint8_t> done;
  std::vector<double> maps;
  std::vector<double> windows;
  std::vector<double> priv;
  std::vector<double> v_true;
  std::vector<double> bootstrap_blind, bootstrap_percep;  // per env
  std::vector<double> E;   // per-sample reconstruction error
  std::vector<uint8_t> I;  // per-sample penalty indicator

  int samples() const { return n_envs * T; }
  int index(int env, int t) const { return env * T + t; }

  void allocate(int envs, int steps, int blind, int percep, int critic, int map, int window,
                int priv_d) {
    n_envs = envs;
    T = steps;
    blind_dim = blind;
    percep_dim = percep;
    critic_dim = critic;
    map_dim = map;
    window_dim = window;
    priv_dim = priv_d;
    const size_t n = static_cast<size_t>(samples());
    s_blind.assign(n * blind_dim, 0.0);
    s_percep.assign(n * percep_dim, 0.0);
    s_critic.assign(n * critic_dim, 0.0);
    a_blind.assign(n * act_dim, 0.0);
    a_percep.assign(n * act_dim, 0.0);
    logp_blind.assign(n, 0.0);
    logp_percep.assign(n, 0.0);
    value_blind.assign(n, 0.0);
    value_percep.assign(n, 0.0);
    reward.assign(n, 0.0);
    done.assign(n, 0);
    maps.assign(n * map_dim, 0.0);
    windows.assign(n * window_dim, 0.0);
    priv.assign(n * priv_dim, 0.0);
    v_true.assign(n * 3, 0.0);
    bootstrap_blind.assign(n_envs, 0.0);
    bootstrap_percep.assign(n_envs, 0.0);
    E.assign(n, 0.0);
    I.assign(n, 0);
  }

  /// GAE over every environment row; advantages/returns are sample-major.
  void gae(const std::vector<double>& values, const std::vector<double>& bootstraps, double gamma,
           double lambda, std::vector<double>& advantages, std::vector<double>& returns) const {
    advantages.assign(samples(), 0.0);
    returns.assign(samples(), 0.0);
    for (int e = 0; e < n_envs; ++e) {
      const int base = index(e, 0);
      compute_gae(std::span<const double>(reward.data() + base, T),
                  std::span<const uint8_t>(done.data() + base, T),
                  std::span<const double>(values.data() + base, T), bootstraps[e], gamma, lambda,
                  std::span<double>(advantages.data() + base, T),
                  std::span<double>(returns.data() + base, T));
    }
  }
};

struct PpoLossStats {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
};

/// Pure loss evaluation used by the tests; the update path computes the same
/// quantities sample-by-sample with gradients.
inline PpoLossStats ppo_losses(std::span<const double> old_logp, std::span<const double> new_logp,
                               std::span<const double> advantages, std::span<const double> returns,
                               std::span<const double> new_values, std::span<const double> entropy,
                               const PpoConfig& cfg) {
  PpoLossStats s;
  const size_t n = old_logp.size();
  for (size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(new_logp[i] - old_logp[i]);
    const double clipped = clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    s.surrogate += -std::min(ratio * advantages[i], clipped * advantages[i]);
    const double vd = new_values[i] - returns[i];
    s.value_loss += vd * vd;
    s.entropy += entropy[i];
    s.approx_kl += old_logp[i] - new_logp[i];
  }
  s.surrogate /= n;
  s.value_loss /= n;
  s.entropy /= n;
  s.approx_kl /= n;
  return s;
}

/// Halve-or-grow learning-rate rule driven by the observed KL divergence.
inline double kl_adaptive_lr(double lr, double observed_kl, double desired_kl = 0.01,
                             double lr_min = 1e-6, double lr_max = 1e-2) {
  check_arg(lr > 0.0, "learning rate must be positive");
  if (observed_kl > 2.0 * desired_kl)
    lr /= 1.5;
  else if (observed_kl < 0.5 * desired_kl && observed_kl >= 0.0)
    lr *= 1.5;
  return clamp(lr, lr_min, lr_max);
}

/// Running normalizer for value-regression targets; keeps the critic loss
/// O(1) so the shared gradient-norm clip does not starve the policy terms.
struct ValueNormalizer {
  double mean = 0.0;
  double var = 1.0;
  long count = 0;

  void update(std::span<const double> batch) {
    if (batch.empty()) return;
    double m = 0;
    for (double v : batch) m += v;
    m /= batch.size();
    double s2 = 0;
    for (double v : batch) s2 += (v - m) * (v - m);
    s2 /= batch.size();
    const double w = count == 0 ? 1.0 : 0.05;  // slow exponential tracking
    mean = (1.0 - w) * mean + w * m;
    var = (1.0 - w) * var + w * s2;
    count += static_cast<long>(batch.size());
  }
  double std() const { return std::sqrt(std::max(var, 1e-8)); }
  double normalize(double v) const { return (v - mean) / std(); }
  double denormalize(double v) const { return v * std() + mean; }
};

struct UpdateStats {
  std::vector<double> surrogate;  // one entry per optimizer step
  std::vector<double> value_loss;
  std::vector<double> entropy;
  std::vector<double> approx_kl;
  std::vector<double> grad_norm;       // post-clip norms
  std::vector<double> grad_norm_raw;   // pre-clip norms
  std::vector<double> extra_loss;      // agent-specific additions
  double lr_final = 0.0;
  int optimizer_steps = 0;

  double mean(const std::vector<double>& v) const {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  }
};

/// Everything one agent needs for a PPO pass. Observations are sample-major
/// flat arrays. extra_loss lets the caller add differentiable terms (action
/// penalties, latent regression) into the same optimizer step: it receives
/// the sample id, the actor mean, 1/minibatch-size, and may add to d_mean or
/// its own captured gradient buffers; it returns its loss contribution.
struct AgentUpdateJob {
  nn::Mlp* actor = nullptr;
  nn::GaussianHead* head = nullptr;
  nn::Mlp* critic = nullptr;
  // Additional trainable vectors (encoders) updated in the same Adam step.
  std::vector<std::vector<double>*> extra_params;
  std::vector<std::vector<double>*> extra_grads;  // parallel to extra_params
  nn::AdamState* adam = nullptr;

  const std::vector<double>* obs = nullptr;
  int obs_dim = 0;
  const std::vector<double>* critic_obs = nullptr;
  int critic_obs_dim = 0;
  const std::vector<double>* actions = nullptr;
  const std::vector<double>* old_logp = nullptr;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::function<double(int sample, std::span<const double> mean, std::vector<double>& d_mean,
                       std::vector<double>& d_logstd, double inv_m)>
      extra_loss;
};

/// 5 epochs x 4 minibatches of shuffled samples; one Adam step per minibatch
/// with a global gradient-norm clip across every trainable vector of the
/// agent. Throws on non-finite losses.
inline UpdateStats ppo_update(AgentUpdateJob& job, PpoConfig cfg, Rng& rng) {
  const int n = static_cast<int>(job.old_logp->size());
  check(n > 0, "empty buffer");
  const int act_dim = job.actor->out_dim();

  normalize_advantages(job.advantages);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> actor_grads(job.actor->params.size());
  std::vector<double> critic_grads(job.critic->params.size());
  std::vector<double> logstd_grads(job.head->log_std.size());

  UpdateStats stats;
  double lr = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the agent's own stream.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
    double epoch_kl = 0.0;
    int start = 0;
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int count = n / cfg.minibatches + (mb < n % cfg.minibatches ? 1 : 0);
      const double inv_m = 1.0 / count;

      std::fill(actor_grads.begin(), actor_grads.end(), 0.0);
      std::fill(critic_grads.begin(), critic_grads.end(), 0.0);
      std::fill(logstd_grads.begin(), logstd_grads.end(), 0.0);
      for (auto* g : job.extra_grads) std::fill(g->begin(), g->end(), 0.0);

      double mb_surr = 0.0, mb_vloss = 0.0, mb_kl = 0.0, mb_extra = 0.0;
      std::vector<double> d_mean(act_dim), d_logstd_lp(act_dim);
      nn::Mlp::Trace actor_tr, critic_tr;

      for (int s = start; s < start + count; ++s) {
        const int idx = order[s];
        std::span<const double> obs(job.obs->data() + static_cast<size_t>(idx) * job.obs_dim,
                                    job.obs_dim);
        std::span<const double> cobs(
            job.critic_obs->data() + static_cast<size_t>(idx) * job.critic_obs_dim,
            job.critic_obs_dim);
        std::span<const double> action(job.actions->data() + static_cast<size_t>(idx) * act_dim,
                                       act_dim);

        job.actor->forward(obs, actor_tr);
        const std::vector<double>& mean = actor_tr.acts.back();
        const double new_logp = job.head->log_prob(mean, action);
        const double adv = job.advantages[idx];
        const double ratio = std::exp(new_logp - job.old_logp->at(idx));
        const double clipped = clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        const double surr1 = ratio * adv;
        const double surr2 = clipped * adv;
        mb_surr += -std::min(surr1, surr2) * inv_m;
        mb_kl += (job.old_logp->at(idx) - new_logp) * inv_m;

        // d(-min)/d new_logp: f(ratio)=ratio*adv active, or the clip is flat.
        double d_logp = 0.0;
        if (surr1 <= surr2) {
          d_logp = -surr1 * inv_m;
        } else if (ratio > 1.0 - cfg.clip && ratio < 1.0 + cfg.clip) {
          d_logp = -surr2 * inv_m;
        }

        job.head->log_prob_grads(mean, action, d_mean, d_logstd_lp);
        for (int k = 0; k < act_dim; ++k) {
          logstd_grads[k] += d_logp * d_logstd_lp[k];
          d_mean[k] *= d_logp;
        }
        if (job.extra_loss) mb_extra += job.extra_loss(idx, mean, d_mean, logstd_grads, inv_m);
        job.actor->backward(actor_tr, d_mean, &actor_grads);

        job.critic->forward(cobs, critic_tr);
        const double v = critic_tr.acts.back()[0];
        const double vd = v - job.returns[idx];
        mb_vloss += vd * vd * inv_m;
        const double d_v[1] = {cfg.value_coef * 2.0 * vd * inv_m};
        job.critic->backward(critic_tr, std::span<const double>(d_v, 1), &critic_grads);
      }
      start += count;

      // Entropy bonus: state-independent for a diagonal Gaussian.
      const double entropy = job.head->entropy();
      for (int k = 0; k < act_dim; ++k) logstd_grads[k] += -cfg.entropy_coef;

      const double mb_loss =
          mb_surr + cfg.value_coef * mb_vloss - cfg.entropy_coef * entropy + mb_extra;
      check(std::isfinite(mb_loss), "non-finite PPO loss (surrogate=" + std::to_string(mb_surr) +
                                        " value=" + std::to_string(mb_vloss) +
                                        " extra=" + std::to_string(mb_extra) + ")");

      // One flat Adam step over every trainable vector of the agent.
      std::vector<std::vector<double>*> params{&job.actor->params, &job.head->log_std,
                                               &job.critic->params};
      std::vector<std::vector<double>*> grads{&actor_grads, &logstd_grads, &critic_grads};
      for (size_t e = 0; e < job.extra_params.size(); ++e) {
        params.push_back(job.extra_params[e]);
        grads.push_back(job.extra_grads[e]);
      }
      size_t total = 0;
      for (auto* p : params) total += p->size();
      std::vector<double> flat_p, flat_g;
      flat_p.reserve(total);
      flat_g.reserve(total);
      for (size_t e = 0; e < params.size(); ++e) {
        flat_p.insert(flat_p.end(), params[e]->begin(), params[e]->end());
        flat_g.insert(flat_g.end(), grads[e]->begin(), grads[e]->end());
      }
      double raw_norm2 = 0.0;
      for (double g : flat_g) raw_norm2 += g * g;
      job.adam->grad_clip = cfg.grad_clip;
      nn::adam_update(flat_p, flat_g, lr, *job.adam);
      size_t off = 0;
      for (auto* p : params) {
        std::copy(flat_p.begin() + off, flat_p.begin() + off + p->size(), p->begin());
        off += p->size();
      }
      job.head->clamp_log_std();

      const double raw_norm = std::sqrt(raw_norm2);
      stats.surrogate.push_back(mb_surr);
      stats.value_loss.push_back(mb_vloss);
      stats.entropy.push_back(entropy);
      stats.approx_kl.push_back(mb_kl);
      stats.grad_norm_raw.push_back(raw_norm);
      stats.grad_norm.push_back(std::min(raw_norm, cfg.grad_clip));
      stats.extra_loss.push_back(mb_extra);
      epoch_kl += mb_kl / cfg.minibatches;
      stats.optimizer_steps += 1;
    }
    if (cfg.adaptive_lr)
      lr = kl_adaptive_lr(lr, epoch_kl, cfg.desired_kl, cfg.lr_min, cfg.lr_max);
  }
  stats.lr_final = lr;
  return stats;
}

/// Independent per-agent updates over a shared buffer: no gradient flows
/// between agents and each consumes only its own random stream.
inline std::pair<UpdateStats, UpdateStats> mappo_update(AgentUpdateJob& blind_job,
                                                        AgentUpdateJob& percep_job,
                                                        const PpoConfig& blind_cfg,
                                                        const PpoConfig& percep_cfg, Rng& blind_rng,
                                                        Rng& percep_rng) {
  UpdateStats sb = ppo_update(blind_job, blind_cfg, blind_rng);
  UpdateStats sp = ppo_update(percep_job, percep_cfg, percep_rng);
  return {std::move(sb), std::move(sp)};
}

}  // namespace rl
}  // namespace mbc
