#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbc/eval.hpp"
#include "mbc/training.hpp"

namespace mbc {

/// Parse "kind=gap,difficulty=0.5,seed=42" into a fully interpolated spec.
inline TerrainSpec parse_terrain_spec(const std::string& text, const RunConfig& cfg) {
  std::string kind_name;
  double difficulty = 0.5;
  uint64_t seed = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    check_arg(eq != std::string::npos, "terrain spec items must be key=value: " + item);
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "kind")
      kind_name = val;
    else if (key == "difficulty")
      difficulty = std::stod(val);
    else if (key == "seed")
      seed = std::stoull(val);
    else
      throw std::invalid_argument("unknown terrain spec key: " + key);
  }
  check_arg(!kind_name.empty(), "terrain spec requires kind=");
  check_arg(difficulty >= 0.0 && difficulty <= 1.0, "difficulty must be in [0,1]");

  TerrainSpec s;
  s.kind = terrain_kind_from_name(kind_name);
  s.difficulty = difficulty;
  s.seed = seed;
  s.slope_incl_deg = lerp(cfg.ranges.slope_incl_deg[0], cfg.ranges.slope_incl_deg[1], difficulty);
  s.stair_step_height = lerp(cfg.ranges.stair_height_m[0], cfg.ranges.stair_height_m[1], difficulty);
  s.stair_step_width = cfg.terrain.stair_width;
  s.discrete_max_height =
      lerp(cfg.ranges.discrete_height_m[0], cfg.ranges.discrete_height_m[1], difficulty);
  s.pit_height = lerp(cfg.ranges.pit_height_m[0], cfg.ranges.pit_height_m[1], difficulty);
  s.gap_width = lerp(cfg.ranges.gap_width_m[0], cfg.ranges.gap_width_m[1], difficulty);
  s.pillar_size = lerp(cfg.ranges.pillar_size_m[0], cfg.ranges.pillar_size_m[1], difficulty);
  s.pillar_spacing = lerp(cfg.ranges.pillar_spacing_m[0], cfg.ranges.pillar_spacing_m[1], difficulty);
  return s;
}

inline void ckpt_inspect(const std::string& path, std::ostream& os) {
  const CheckpointContainer c = load_checkpoint(path);
  os << "checkpoint: " << path << "\n";
  os << "format_version: " << kCkptVersion << "\n";
  os << "stage: " << c.stage << "\n";
  os << "iteration: " << c.iteration << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", c.tau);
  os << "tau: " << buf << "\n";
  os << "config_hash: " << fnv1a64(c.config_text.data(), c.config_text.size()) << "\n";
  const ResolvedConfig rc = ResolvedConfig::from_text(c.config_text);
  auto dims = [](const std::vector<int>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
  };
  os << "actor_hidden: " << dims(rc.cfg.network.actor_hidden) << "\n";
  os << "critic_hidden: " << dims(rc.cfg.network.critic_hidden) << "\n";
  os << "vae_latent: " << rc.cfg.network.vae_latent << "\n";
  os << "rng_streams: " << c.rng_states.size() << "\n";
  os << "blocks:\n";
  for (const auto& b : c.blocks) {
    os << "  " << b.name << "  shape=[";
    for (size_t i = 0; i < b.shape.size(); ++i) os << (i ? ", " : "") << b.shape[i];
    os << "]  dtype=" << (b.is_u64() ? "u64" : "f64") << "\n";
  }
}

inline int run_command(const std::vector<std::string>& args) {
  CLI::App app{"two-policy quadruped locomotion trainer"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a training stage");
  std::string train_stage, train_config, train_out, train_from, train_resume;
  int64_t seed_override = -1;
  bool desk = false;
  train->add_option("stage", train_stage, "stage1 or stage2")->required();
  train->add_option("--config", train_config, "config JSON file");
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_option("--from", train_from, "stage-1 checkpoint (stage2 only)");
  train->add_option("--resume", train_resume, "resume from a mid-run checkpoint");
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_flag("--desk", desk, "desk-scale profile (64 envs, small nets)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run an evaluation protocol");
  std::string eval_protocol, eval_ckpt, eval_terrain, eval_out, eval_trace;
  int eval_trials = 100;
  long toggle_step = 500;
  int64_t eval_seed = 0;
  eval_cmd->add_option("protocol", eval_protocol, "success, blind, or hotswap")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "stage-2 checkpoint")->required();
  eval_cmd->add_option("--terrain", eval_terrain, "kind=...,difficulty=...,seed=...")->required();
  eval_cmd->add_option("--trials", eval_trials, "number of trials");
  eval_cmd->add_option("--out", eval_out, "JSON report path");
  eval_cmd->add_option("--toggle-step", toggle_step, "perception-failure step (hotswap)");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--trace", eval_trace, "per-step trajectory CSV (first trial)");

  // terrain
  auto* terrain_cmd = app.add_subcommand("terrain", "terrain tools");
  auto* terrain_gen = terrain_cmd->add_subcommand("gen", "generate a heightfield");
  std::string tg_spec, tg_out, tg_csv;
  terrain_gen->add_option("--spec", tg_spec, "kind=...,difficulty=...,seed=...")->required();
  terrain_gen->add_option("--out", tg_out, "text-grid output file")->required();
  terrain_gen->add_option("--csv", tg_csv, "also write x,y,height CSV");

  // ckpt
  auto* ckpt_cmd = app.add_subcommand("ckpt", "checkpoint tools");
  auto* ckpt_ins = ckpt_cmd->add_subcommand("inspect", "print checkpoint schema");
  std::string ci_path;
  ckpt_ins->add_option("path", ci_path, "checkpoint file")->required();

  try {
    std::vector<const char*> argv;
    argv.push_back("mbc");
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train->parsed()) {
      check_arg(train_stage == "stage1" || train_stage == "stage2",
                "train stage must be stage1 or stage2");
      ResolvedConfig rc = train_config.empty()
                              ? ResolvedConfig::make(json::object(), desk, seed_override)
                              : ResolvedConfig::from_file(train_config, desk, seed_override);
      if (train_stage == "stage1") {
        const TrainResult r = train_stage1(rc, train_out, train_resume, [](const IterationStats& s) {
          std::printf("iter %ld  step_r %.4f  return %.2f  ep_len %.1f  kl %.4f  lr %.2e\n",
                      s.iteration, s.mean_step_reward, s.mean_return, s.mean_ep_len, s.blind_kl,
                      s.blind_lr);
          std::fflush(stdout);
        });
        std::printf("stage1 done: tau=%.6g  checkpoint=%s\n", r.tau, r.checkpoint_path.c_str());
      } else {
        check_arg(!train_from.empty() || !train_resume.empty(),
                  "train stage2 requires --from STAGE1_CKPT");
        const TrainResult r =
            train_stage2(rc, train_from, train_out, train_resume, [](const IterationStats& s) {
              std::printf("iter %ld  return %.3f  P %.4f  I %.2f  kl(b/p) %.4f/%.4f\n", s.iteration,
                          s.mean_return, s.mean_P, s.mean_I, s.blind_kl, s.percep_kl);
              std::fflush(stdout);
            });
        std::printf("stage2 done: checkpoint=%s\n", r.checkpoint_path.c_str());
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      auto [bundle, rc] = load_eval_policy(eval_ckpt);
      const TerrainSpec spec = parse_terrain_spec(eval_terrain, rc.cfg);
      EvalReport rep;
      std::vector<TrialTraceRow> trace;
      if (eval_protocol == "success") {
        rep = success_eval(bundle, rc.cfg, spec, eval_trials, static_cast<uint64_t>(eval_seed));
      } else if (eval_protocol == "blind") {
        rep = blind_failure_eval(bundle, rc.cfg, spec, eval_trials, static_cast<uint64_t>(eval_seed));
      } else if (eval_protocol == "hotswap") {
        rep = hot_swap_test(bundle, rc.cfg, spec, eval_trials, static_cast<uint64_t>(eval_seed),
                            toggle_step, eval_trace.empty() ? nullptr : &trace);
      } else {
        throw std::invalid_argument("unknown eval protocol: " + eval_protocol);
      }
      rep.config_hash = rc.hash();
      const std::string text = rep.to_json().dump(2);
      if (!eval_out.empty()) {
        std::ofstream f(eval_out);
        check(f.good(), "cannot write report: " + eval_out);
        f << text << "\n";
      }
      if (!eval_trace.empty() && !trace.empty()) {
        std::ofstream f(eval_trace);
        check(f.good(), "cannot write trace: " + eval_trace);
        write_trace_csv(f, trace);
      }
      std::printf("%s\n", text.c_str());
      return 0;
    }

    if (terrain_gen->parsed()) {
      const ResolvedConfig rc = ResolvedConfig::make(json::object(), false);
      const TerrainSpec spec = parse_terrain_spec(tg_spec, rc.cfg);
      const Heightfield hf = generate_heightfield(spec, rc.cfg.terrain, rc.cfg.ranges);
      std::ofstream f(tg_out);
      check(f.good(), "cannot write: " + tg_out);
      write_text_grid(f, hf);
      if (!tg_csv.empty()) {
        std::ofstream fc(tg_csv);
        check(fc.good(), "cannot write: " + tg_csv);
        write_grid_csv(fc, hf);
      }
      std::printf("wrote %s (%d x %d cells)\n", tg_out.c_str(), hf.nx, hf.ny);
      return 0;
    }

    if (ckpt_ins->parsed()) {
      ckpt_inspect(ci_path, std::cout);
      return 0;
    }

    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace mbc
