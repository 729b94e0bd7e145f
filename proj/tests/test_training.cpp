#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "mbc/eval.hpp"
#include "mbc/training.hpp"

using namespace mbc;

namespace {

ResolvedConfig tiny_config(uint64_t seed, int iters1 = 3, int iters2 = 2, int ckpt_every = 0) {
  json user = {
      {"seed", seed},
      {"network",
       {{"actor_hidden", {16, 8}},
        {"critic_hidden", {16, 8}},
        {"priv_encoder_hidden", {8}},
        {"history_encoder_hidden", {16}},
        {"vae_hidden", 16},
        {"vae_latent", 4},
        {"history_length", 5}}},
      {"ppo_stage1",
       {{"num_envs", 8}, {"iterations", iters1}, {"rollout_steps", 8}, {"checkpoint_every", ckpt_every}}},
      {"ppo_stage2",
       {{"num_envs", 8},
        {"iterations", iters2},
        {"rollout_steps", 8},
        {"checkpoint_every", 0},
        {"familiar_probe_size", 16}}},
      {"env", {{"episode_length_steps", 60}, {"stuck_window_steps", 30}}},
      {"calibration", {{"tau_patches", 32}}},
  };
  return ResolvedConfig::make(user, /*desk=*/true);
}

std::string fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

/// Numeric CSV columns except wall_seconds (column 1).
std::string strip_wall(const std::string& row) {
  std::string out;
  int col = 0;
  for (size_t i = 0; i <= row.size(); ++i) {
    if (i == row.size() || row[i] == ',') {
      ++col;
      out.push_back('|');
    } else if (col != 1) {
      out.push_back(row[i]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("tiny stage-1 run trains, calibrates and checkpoints") {
  const std::string dir = fresh_dir("mbc_s1_tiny");
  const ResolvedConfig rc = tiny_config(3);
  const TrainResult r = train_stage1(rc, dir);
  CHECK(static_cast<int>(r.iters.size()) == 3);
  CHECK(r.tau > 0.0);
  REQUIRE(std::filesystem::exists(r.checkpoint_path));

  const CheckpointContainer c = load_checkpoint(r.checkpoint_path);
  CHECK(c.stage == 1);
  CHECK(c.iteration == 3);
  CHECK(c.tau == r.tau);
  CHECK_NOTHROW(validate_checkpoint_schema(c));
  CHECK(std::filesystem::exists(dir + "/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/manifest.json"));

  const auto lines = read_lines(dir + "/metrics.csv");
  REQUIRE(lines.size() == 4);  // header + 3 rows
  CHECK(lines[0] == kMetricsHeader);
}

TEST_CASE("identical seeds reproduce metrics and parameters bitwise") {
  const std::string da = fresh_dir("mbc_det_a");
  const std::string db = fresh_dir("mbc_det_b");
  const TrainResult ra = train_stage1(tiny_config(7), da);
  const TrainResult rb = train_stage1(tiny_config(7), db);
  const auto la = read_lines(da + "/metrics.csv");
  const auto lb = read_lines(db + "/metrics.csv");
  REQUIRE(la.size() == lb.size());
  for (size_t i = 0; i < la.size(); ++i) CHECK(strip_wall(la[i]) == strip_wall(lb[i]));

  const CheckpointContainer ca = load_checkpoint(ra.checkpoint_path);
  const CheckpointContainer cb = load_checkpoint(rb.checkpoint_path);
  CHECK(ca.require("blind.actor").f64 == cb.require("blind.actor").f64);
  CHECK(ca.require("vae.encoder").f64 == cb.require("vae.encoder").f64);
  CHECK(ca.tau == cb.tau);
}

TEST_CASE("interrupt and resume equals uninterrupted training") {
  // Uninterrupted six iterations.
  const std::string da = fresh_dir("mbc_resume_a");
  const TrainResult ra = train_stage1(tiny_config(11, 6), da);

  // Three iterations, checkpoint, resume for three more into the same dir.
  const std::string db = fresh_dir("mbc_resume_b");
  const TrainResult rb3 = train_stage1(tiny_config(11, 3), db);
  const TrainResult rb6 = train_stage1(tiny_config(11, 6), db, rb3.checkpoint_path);
  CHECK(static_cast<int>(rb6.iters.size()) == 3);  // the resumed segment

  const CheckpointContainer ca = load_checkpoint(ra.checkpoint_path);
  const CheckpointContainer cb = load_checkpoint(rb6.checkpoint_path);
  for (const char* block : {"blind.actor", "blind.logstd", "blind.critic", "blind.priv",
                            "blind.history", "vae.encoder", "vae.decoder"}) {
    INFO(block);
    CHECK(ca.require(block).f64 == cb.require(block).f64);
  }
  CHECK(ca.tau == cb.tau);

  const auto la = read_lines(da + "/metrics.csv");
  const auto lb = read_lines(db + "/metrics.csv");
  REQUIRE(la.size() == 7);
  REQUIRE(lb.size() == 7);       // resumed file continues without a new header
  CHECK(lb[0] == kMetricsHeader);
  for (size_t i = 1; i < 7; ++i) CHECK(strip_wall(la[i]) == strip_wall(lb[i]));
}

TEST_CASE("stage 1 never reads the perceptive agent") {
  const ResolvedConfig rc = tiny_config(13);
  Trainer a(rc, Stage::One), b(rc, Stage::One);
  a.initialize();
  b.initialize();
  for (auto& p : b.bundle().percep_actor.params) p += 100.0;  // scramble
  for (auto& p : b.bundle().percep_critic.params) p -= 3.0;
  for (int i = 0; i < 2; ++i) {
    const IterationStats sa = a.run_iteration();
    const IterationStats sb = b.run_iteration();
    CHECK(sa.mean_step_reward == sb.mean_step_reward);
    CHECK(sa.blind_kl == sb.blind_kl);
  }
  CHECK(a.bundle().blind_actor.params == b.bundle().blind_actor.params);
}

TEST_CASE("tiny stage-2 run keeps the VAE frozen and gates actions") {
  const std::string d1 = fresh_dir("mbc_s2_from");
  const ResolvedConfig rc = tiny_config(17);
  const TrainResult r1 = train_stage1(rc, d1);

  const std::string d2 = fresh_dir("mbc_s2_out");
  const TrainResult r2 = train_stage2(rc, r1.checkpoint_path, d2);
  CHECK(static_cast<int>(r2.iters.size()) == 2);
  for (const IterationStats& s : r2.iters) {
    CHECK(s.mean_I >= 0.0);
    CHECK(s.mean_I <= 1.0);
    CHECK(s.mean_P >= 0.0);
    CHECK(std::isfinite(s.percep_kl));
  }

  const CheckpointContainer c1 = load_checkpoint(r1.checkpoint_path);
  const CheckpointContainer c2 = load_checkpoint(r2.checkpoint_path);
  CHECK(c2.stage == 2);
  CHECK_NOTHROW(validate_checkpoint_schema(c2));
  // Freeze contract, bitwise.
  CHECK(c1.require("vae.encoder").f64 == c2.require("vae.encoder").f64);
  CHECK(c1.require("vae.decoder").f64 == c2.require("vae.decoder").f64);
  CHECK(c2.tau == c1.tau);
}

TEST_CASE("stage 2 without a stage-1 checkpoint fails hard") {
  const std::string d = fresh_dir("mbc_s2_fail");
  CHECK_THROWS(train_stage2(tiny_config(19), "", d));
  CHECK_THROWS(train_stage2(tiny_config(19), d + "/nonexistent.ckpt", d));
}

TEST_CASE("a stage-2 checkpoint does not load as a stage-1 start") {
  const std::string d1 = fresh_dir("mbc_sx_a");
  const ResolvedConfig rc = tiny_config(23);
  const TrainResult r1 = train_stage1(rc, d1);
  const std::string d2 = fresh_dir("mbc_sx_b");
  const TrainResult r2 = train_stage2(rc, r1.checkpoint_path, d2);
  const std::string d3 = fresh_dir("mbc_sx_c");
  CHECK_THROWS(train_stage2(rc, r2.checkpoint_path, d3));  // must be stage 1
}

TEST_CASE("disabling the regularizer equals a zero action-penalty coefficient") {
  const std::string d1 = fresh_dir("mbc_abl_from");
  const ResolvedConfig rc = tiny_config(29);
  const TrainResult r1 = train_stage1(rc, d1);

  json u1 = rc.doc;
  u1["ppo_stage2"]["regularizer_enabled"] = false;
  json u2 = rc.doc;
  u2["ppo_stage2"]["action_penalty_coef"] = 0.0;
  const ResolvedConfig rc1 = ResolvedConfig::make(u1, false);
  const ResolvedConfig rc2 = ResolvedConfig::make(u2, false);

  const std::string da = fresh_dir("mbc_abl_a");
  const std::string db = fresh_dir("mbc_abl_b");
  const TrainResult ta = train_stage2(rc1, r1.checkpoint_path, da);
  const TrainResult tb = train_stage2(rc2, r1.checkpoint_path, db);
  const CheckpointContainer ca = load_checkpoint(ta.checkpoint_path);
  const CheckpointContainer cb = load_checkpoint(tb.checkpoint_path);
  CHECK(ca.require("percep.actor").f64 == cb.require("percep.actor").f64);
}
