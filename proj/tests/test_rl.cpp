#include <catch2/catch.hpp>

#include "mbc/rl.hpp"

using namespace mbc;

namespace {

/// Independent oracle: lambda-weighted mixture of k-step advantages,
/// truncated at episode ends / the rollout horizon.
std::vector<double> gae_oracle(const std::vector<double>& rewards, const std::vector<uint8_t>& dones,
                               const std::vector<double>& values, double bootstrap, double gamma,
                               double lambda) {
  const int T = static_cast<int>(rewards.size());
  std::vector<double> adv(T, 0.0);
  for (int t = 0; t < T; ++t) {
    // Steps until the episode ends at t+e-1 (inclusive), or horizon.
    int K = T - t;
    for (int s = t; s < T; ++s) {
      if (dones[s]) {
        K = s - t + 1;
        break;
      }
    }
    const bool ends_with_done = dones[t + K - 1] != 0;
    auto k_step = [&](int k) {
      double acc = 0.0, g = 1.0;
      for (int i = 0; i < k; ++i) {
        acc += g * rewards[t + i];
        g *= gamma;
      }
      const bool done_inside = ends_with_done && k >= K;
      if (!done_inside) {
        const double v_next = (t + k < T) ? values[t + k] : bootstrap;
        acc += g * v_next;
      }
      return acc - values[t];
    };
    double mix = 0.0, w = 1.0;
    for (int k = 1; k < K; ++k) {
      mix += (1.0 - lambda) * w * k_step(k);
      w *= lambda;
    }
    mix += w * k_step(K);
    adv[t] = mix;
  }
  return adv;
}

}  // namespace

TEST_CASE("one-step GAE is the TD residual") {
  std::vector<double> r = {1.0};
  std::vector<uint8_t> d = {0};
  std::vector<double> v = {0.0};
  std::vector<double> adv(1), ret(1);
  rl::compute_gae(r, d, v, 0.0, 0.99, 0.95, adv, ret);
  CHECK(adv[0] == Approx(1.0).margin(1e-15));
  CHECK(ret[0] == Approx(1.0).margin(1e-15));
}

TEST_CASE("lambda = 1 reduces to discounted monte-carlo minus value") {
  Rng rng(3);
  const int T = 8;
  std::vector<double> r(T), v(T);
  std::vector<uint8_t> d(T, 0);
  for (int i = 0; i < T; ++i) {
    r[i] = rng.uniform(-1, 1);
    v[i] = rng.uniform(-1, 1);
  }
  const double boot = rng.uniform(-1, 1);
  std::vector<double> adv(T), ret(T);
  rl::compute_gae(r, d, v, boot, 0.9, 1.0, adv, ret);
  for (int t = 0; t < T; ++t) {
    double mc = 0.0, g = 1.0;
    for (int i = t; i < T; ++i) {
      mc += g * r[i];
      g *= 0.9;
    }
    mc += g * boot;
    CHECK(adv[t] == Approx(mc - v[t]).margin(1e-12));
  }
}

TEST_CASE("GAE matches the brute-force oracle on 500 random rollouts") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const int T = 1 + static_cast<int>(rng.uniform_int(10));
    std::vector<double> r(T), v(T);
    std::vector<uint8_t> d(T);
    for (int i = 0; i < T; ++i) {
      r[i] = rng.uniform(-2, 2);
      v[i] = rng.uniform(-2, 2);
      d[i] = rng.uniform() < 0.2 ? 1 : 0;
    }
    const double boot = rng.uniform(-2, 2);
    const double gamma = rng.uniform(0.9, 0.999);
    const double lambda = rng.uniform(0.8, 1.0);
    std::vector<double> adv(T), ret(T);
    rl::compute_gae(r, d, v, boot, gamma, lambda, adv, ret);
    const std::vector<double> oracle = gae_oracle(r, d, v, boot, gamma, lambda);
    for (int t = 0; t < T; ++t) {
      REQUIRE(std::abs(adv[t] - oracle[t]) <= 1e-10);
      REQUIRE(ret[t] == Approx(adv[t] + v[t]).margin(1e-12));
    }
  }
}

TEST_CASE("value targets never cross episode boundaries") {
  // Two episodes in one row; the first episode's advantages must not depend
  // on anything after its done flag.
  std::vector<double> r = {1.0, 2.0, 3.0, 4.0};
  std::vector<uint8_t> d = {0, 1, 0, 0};
  std::vector<double> v = {0.5, 0.25, 0.125, 0.0625};
  std::vector<double> adv(4), ret(4), adv2(4), ret2(4);
  rl::compute_gae(r, d, v, 9.0, 0.99, 0.95, adv, ret);
  // Mutate the second episode wildly; the first two advantages must be equal.
  std::vector<double> r2 = {1.0, 2.0, -50.0, 100.0};
  std::vector<double> v2 = {0.5, 0.25, 10.0, -3.0};
  rl::compute_gae(r2, d, v2, -77.0, 0.99, 0.95, adv2, ret2);
  CHECK(adv[0] == Approx(adv2[0]).margin(1e-12));
  CHECK(adv[1] == Approx(adv2[1]).margin(1e-12));
}

TEST_CASE("advantage normalization and shift invariance of the clipped surrogate") {
  Rng rng(11);
  const int n = 64;
  std::vector<double> old_lp(n), new_lp(n), adv(n), shifted(n), ret(n), val(n), ent(n, 1.0);
  for (int i = 0; i < n; ++i) {
    old_lp[i] = rng.uniform(-2, 0);
    new_lp[i] = old_lp[i] + rng.uniform(-0.1, 0.1);
    adv[i] = rng.uniform(-1, 1);
    shifted[i] = adv[i] + 7.5;
    ret[i] = rng.uniform(-1, 1);
    val[i] = rng.uniform(-1, 1);
  }
  std::vector<double> a = adv, b = shifted;
  rl::normalize_advantages(a);
  rl::normalize_advantages(b);
  rl::PpoConfig cfg;
  const auto sa = rl::ppo_losses(old_lp, new_lp, a, ret, val, ent, cfg);
  const auto sb = rl::ppo_losses(old_lp, new_lp, b, ret, val, ent, cfg);
  CHECK(sa.surrogate == Approx(sb.surrogate).margin(1e-9));

  double mean = 0;
  for (double x : a) mean += x;
  CHECK(mean / n == Approx(0.0).margin(1e-12));
}

TEST_CASE("ppo loss components on crafted batches") {
  rl::PpoConfig cfg;

  SECTION("identity ratio gives minus mean advantage") {
    std::vector<double> lp = {-1.0, -2.0, -0.5};
    std::vector<double> adv = {1.0, -0.5, 2.0};
    std::vector<double> ret = {0, 0, 0}, val = {0, 0, 0}, ent = {0, 0, 0};
    const auto s = rl::ppo_losses(lp, lp, adv, ret, val, ent, cfg);
    CHECK(s.surrogate == Approx(-(1.0 - 0.5 + 2.0) / 3.0).margin(1e-12));
    CHECK(s.approx_kl == Approx(0.0).margin(1e-15));
  }

  SECTION("ratio 2 with unit advantage clips at 1.2") {
    std::vector<double> old_lp = {0.0};
    std::vector<double> new_lp = {std::log(2.0)};
    std::vector<double> adv = {1.0};
    std::vector<double> ret = {0}, val = {0}, ent = {0};
    const auto s = rl::ppo_losses(old_lp, new_lp, adv, ret, val, ent, cfg);
    CHECK(s.surrogate == Approx(-1.2).margin(1e-12));
  }

  SECTION("value loss is the mean squared error to returns") {
    std::vector<double> lp = {0.0, 0.0};
    std::vector<double> adv = {0, 0}, ret = {1.0, -1.0}, val = {0.5, 0.5}, ent = {0, 0};
    const auto s = rl::ppo_losses(lp, lp, adv, ret, val, ent, cfg);
    CHECK(s.value_loss == Approx((0.25 + 2.25) / 2.0).margin(1e-12));
  }
}

TEST_CASE("kl-adaptive learning rate rule") {
  CHECK(rl::kl_adaptive_lr(1e-3, 0.01) == Approx(1e-3));
  CHECK(rl::kl_adaptive_lr(1e-3, 0.03) == Approx(1e-3 / 1.5));
  CHECK(rl::kl_adaptive_lr(1e-3, 0.004) == Approx(1.5e-3));
  // Clamped at both ends.
  CHECK(rl::kl_adaptive_lr(1.2e-6, 0.5) == Approx(1e-6));
  CHECK(rl::kl_adaptive_lr(9e-3, 0.001) == Approx(1e-2));
  CHECK_THROWS(rl::kl_adaptive_lr(0.0, 0.01));
}

namespace {

struct TinyAgent {
  nn::Mlp actor;
  nn::GaussianHead head{4};
  nn::Mlp critic;
  nn::AdamState adam;
  std::vector<double> obs, critic_obs, actions, old_logp, adv, ret;
  int n = 0;

  static TinyAgent make(uint64_t seed, int n_samples = 32) {
    TinyAgent a;
    Rng rng(seed);
    a.actor = nn::Mlp::make({6, 8, 4}, nn::Activation::Elu, rng);
    a.critic = nn::Mlp::make({6, 8, 1}, nn::Activation::Elu, rng);
    a.n = n_samples;
    a.obs.resize(n_samples * 6);
    a.actions.resize(n_samples * 4);
    a.old_logp.resize(n_samples);
    a.adv.resize(n_samples);
    a.ret.resize(n_samples);
    for (auto& v : a.obs) v = rng.uniform(-1, 1);
    a.critic_obs = a.obs;
    for (int i = 0; i < n_samples; ++i) {
      std::span<const double> o(a.obs.data() + i * 6, 6);
      const std::vector<double> mean = a.actor.forward(o);
      const std::vector<double> act = a.head.sample(mean, rng);
      std::copy(act.begin(), act.end(), a.actions.begin() + i * 4);
      a.old_logp[i] = a.head.log_prob(mean, act);
      a.adv[i] = rng.uniform(-1, 1);
      a.ret[i] = rng.uniform(-1, 1);
    }
    return a;
  }

  rl::AgentUpdateJob job() {
    rl::AgentUpdateJob j;
    j.actor = &actor;
    j.head = &head;
    j.critic = &critic;
    j.adam = &adam;
    j.obs = &obs;
    j.obs_dim = 6;
    j.critic_obs = &critic_obs;
    j.critic_obs_dim = 6;
    j.actions = &actions;
    j.old_logp = &old_logp;
    j.advantages = adv;
    j.returns = ret;
    return j;
  }
};

}  // namespace

TEST_CASE("ppo_update runs exactly epochs x minibatches optimizer steps") {
  TinyAgent a = TinyAgent::make(5);
  rl::AgentUpdateJob job = a.job();
  rl::PpoConfig cfg;
  cfg.adaptive_lr = false;
  Rng rng(1);
  const rl::UpdateStats s = rl::ppo_update(job, cfg, rng);
  CHECK(s.optimizer_steps == cfg.epochs * cfg.minibatches);
  CHECK(static_cast<int>(s.surrogate.size()) == 20);
  for (double g : s.grad_norm) CHECK(g <= cfg.grad_clip + 1e-12);
}

TEST_CASE("identical seeds give identical update statistics and parameters") {
  TinyAgent a = TinyAgent::make(6);
  TinyAgent b = TinyAgent::make(6);
  rl::AgentUpdateJob ja = a.job();
  rl::AgentUpdateJob jb = b.job();
  rl::PpoConfig cfg;
  Rng ra(2), rb(2);
  const rl::UpdateStats sa = rl::ppo_update(ja, cfg, ra);
  const rl::UpdateStats sb = rl::ppo_update(jb, cfg, rb);
  CHECK(sa.surrogate == sb.surrogate);
  CHECK(sa.approx_kl == sb.approx_kl);
  CHECK(a.actor.params == b.actor.params);
  CHECK(a.critic.params == b.critic.params);
}

TEST_CASE("zero advantages move the policy only through the entropy term") {
  TinyAgent a = TinyAgent::make(7);
  std::fill(a.adv.begin(), a.adv.end(), 0.0);
  const std::vector<double> actor_before = a.actor.params;
  const std::vector<double> logstd_before = a.head.log_std;
  rl::AgentUpdateJob job = a.job();
  rl::PpoConfig cfg;
  cfg.adaptive_lr = false;
  Rng rng(3);
  rl::ppo_update(job, cfg, rng);
  CHECK(a.actor.params == actor_before);       // no policy-gradient signal
  CHECK(a.head.log_std != logstd_before);      // entropy bonus still acts
  // Critic still trains on returns.
}

TEST_CASE("mappo updates are independent across agents") {
  TinyAgent blind_a = TinyAgent::make(8);
  TinyAgent percep_a = TinyAgent::make(9);
  TinyAgent blind_b = TinyAgent::make(8);
  TinyAgent percep_b = TinyAgent::make(9);

  rl::PpoConfig cfg;
  cfg.adaptive_lr = false;

  // Run A: both agents update.
  {
    rl::AgentUpdateJob jb = blind_a.job();
    rl::AgentUpdateJob jp = percep_a.job();
    Rng rb(10), rp(11);
    rl::mappo_update(jb, jp, cfg, cfg, rb, rp);
  }
  // Run B: blind frozen (skipped); the perceptive update must be bitwise equal.
  {
    rl::AgentUpdateJob jp = percep_b.job();
    Rng rp(11);
    rl::ppo_update(jp, cfg, rp);
  }
  CHECK(percep_a.actor.params == percep_b.actor.params);
  CHECK(percep_a.critic.params == percep_b.critic.params);
  CHECK(percep_a.head.log_std == percep_b.head.log_std);
  // And the blind agent did actually change in run A.
  CHECK(blind_a.actor.params != blind_b.actor.params);
}

TEST_CASE("non-finite losses fail hard") {
  TinyAgent a = TinyAgent::make(12);
  a.adv[0] = std::numeric_limits<double>::infinity();
  rl::AgentUpdateJob job = a.job();
  rl::PpoConfig cfg;
  Rng rng(4);
  CHECK_THROWS(rl::ppo_update(job, cfg, rng));
}
