#include "cmat/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cmat/model.hpp"

namespace fs = std::filesystem;

namespace cmat {

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
}

void write_summary_csv(const std::string& path, const ExperimentOutcome& outcome) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "seed,final_eval_mean,final_eval_std,env_steps,early_stopped\n";
  char buf[64];
  for (const auto& s : outcome.seeds) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.final_eval_mean);
    os << s.seed << "," << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", s.final_eval_std);
    os << buf << "," << s.env_steps << "," << (s.early_stopped ? 1 : 0) << "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.17g", outcome.mean_over_seeds);
  os << "all," << buf << ",";
  std::snprintf(buf, sizeof(buf), "%.17g", outcome.std_over_seeds);
  os << buf << ",,\n";
}

void finish_outcome(ExperimentOutcome& outcome) {
  if (outcome.seeds.empty()) return;
  double mean = 0.0;
  for (const auto& s : outcome.seeds) mean += s.final_eval_mean;
  mean /= outcome.seeds.size();
  double var = 0.0;
  for (const auto& s : outcome.seeds) var += (s.final_eval_mean - mean) * (s.final_eval_mean - mean);
  var /= outcome.seeds.size();
  outcome.mean_over_seeds = mean;
  outcome.std_over_seeds = std::sqrt(var);
}

ExperimentOutcome run_training(const ExperimentConfig& cfg, bool quiet, bool finetune) {
  fs::create_directories(cfg.out_dir);
  write_text_file(cfg.out_dir + "/effective.cfg", cfg.to_text());
  auto env = cfg.make_env();
  ExperimentOutcome outcome;
  std::vector<std::vector<MetricRow>> run_metrics;
  for (std::uint64_t seed : cfg.seeds) {
    std::string dir = cfg.out_dir + "/seed_" + std::to_string(seed);
    fs::create_directories(dir);
    auto policy = cfg.make_policy(*env, seed);
    auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    try {
      if (finetune) {
        policy->params().load_values(cfg.init_checkpoint);
        result = finetune_policy(*policy, *env, parse_finetune_mode(cfg.finetune_mode),
                                 cfg.trainer_config(seed));
      } else {
        result = train_policy(*policy, *env, cfg.trainer_config(seed));
      }
    } catch (const Error& err) {
      write_text_file(cfg.out_dir + "/error.txt",
                      "seed " + std::to_string(seed) + ": " + err.what() + "\n");
      throw;
    }
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_metrics_csv(dir + "/metrics.csv", result.metrics);
    write_eval_csv(dir + "/eval.csv", result.evals);
    write_timing_csv(dir + "/timing.csv", result.update_seconds);
    std::string ckpt = dir + "/final.ckpt";
    policy->params().save(ckpt);
    outcome.seeds.push_back({seed, result.final_eval_mean,
                             result.evals.empty() ? 0.0 : result.evals.back().stats.stddev,
                             result.env_steps, result.early_stopped, ckpt, elapsed});
    run_metrics.push_back(result.metrics);
    if (!quiet) {
      std::cout << cfg.model << " seed " << seed << ": final greedy return " << result.final_eval_mean
                << " after " << result.env_steps << " env steps (" << elapsed << " s)\n";
    }
  }
  finish_outcome(outcome);
  write_summary_csv(cfg.out_dir + "/summary.csv", outcome);
  bool has_rows = false;
  for (const auto& m : run_metrics) has_rows = has_rows || !m.empty();
  if (has_rows) {
    bool resampled = false;
    std::vector<std::vector<MetricRow>> nonempty;
    for (auto& m : run_metrics) {
      if (!m.empty()) nonempty.push_back(std::move(m));
    }
    write_curve_csv(cfg.out_dir + "/curve.csv", aligned_curve(nonempty, &resampled));
    if (resampled && !quiet) {
      std::cerr << "warning: seed step grids differ, resampled to the coarsest grid\n";
    }
  }
  return outcome;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool quiet) {
  return run_training(cfg, quiet, /*finetune=*/false);
}

ExperimentOutcome run_finetune(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.init_checkpoint.empty()) throw ConfigError("finetune requires init_checkpoint");
  if (cfg.finetune_mode.empty()) throw ConfigError("finetune requires finetune_mode");
  return run_training(cfg, quiet, /*finetune=*/true);
}

EvalStats run_evaluate(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.init_checkpoint.empty()) throw ConfigError("evaluate requires init_checkpoint");
  auto env = cfg.make_env();
  auto policy = cfg.make_policy(*env, cfg.seeds.front());
  policy->params().load_values(cfg.init_checkpoint);
  RngStream rng(cfg.seeds.front(), 7777);
  ActMode mode = cfg.eval_mode == "sample" ? ActMode::Sample : ActMode::Greedy;
  EvalStats stats = evaluate_policy(*env, *policy, cfg.eval_episodes, mode, cfg.ppo.gamma, rng);
  if (!quiet) {
    std::cout << "episodes " << stats.episodes << " mean " << stats.mean << " std " << stats.stddev
              << " min " << stats.min << " max " << stats.max << "\n";
  }
  return stats;
}

AblationOutcome run_ablate_m(const ExperimentConfig& cfg, bool quiet) {
  auto env = cfg.make_env();
  int n = env->num_agents();
  std::vector<std::pair<std::string, int>> ms;
  for (int mi : {0, n / 2, n, 2 * n}) {
    std::string name = "m" + std::to_string(mi);
    bool dup = false;
    for (const auto& [existing, v] : ms) dup = dup || v == mi;
    if (!dup) ms.emplace_back(name, mi);
  }
  AblationOutcome outcome;
  for (const auto& [name, mi] : ms) {
    ExperimentConfig sub = cfg;
    sub.model = "cmat";
    sub.m = mi;
    sub.out_dir = cfg.out_dir + "/" + name;
    outcome.variants.emplace_back(name, run_experiment(sub, quiet));
  }
  {
    ExperimentConfig sub = cfg;
    sub.model = "cmat-last-consensus";
    sub.m = n;
    sub.out_dir = cfg.out_dir + "/last_consensus";
    outcome.variants.emplace_back("last_consensus", run_experiment(sub, quiet));
  }
  return outcome;
}

std::string FailureCaseReport::to_text() const {
  std::ostringstream os;
  os << "failure-case comparison on the 2x2 cooperative game (" << seeds << " seeds)\n";
  os << "oracle optimal return: " << oracle_return << "\n";
  os << "cmat:           (B,B) optimal " << cmat_optimal << "/" << seeds << " rate " << cmat_rate()
     << ", (A,A) pareto-suboptimal-ne " << cmat_suboptimal_ne << ", other " << cmat_other << "\n";
  os << "mat-sequential: (B,B) optimal " << mat_optimal << "/" << seeds << " rate " << mat_rate()
     << ", (A,A) pareto-suboptimal-ne " << mat_suboptimal_ne << ", other " << mat_other << "\n";
  return os.str();
}

FailureCaseReport run_failure_case(const ExperimentConfig& base, int seed_count, bool quiet) {
  if (seed_count < 1) throw ConfigError("failure-case needs at least one seed");
  ExperimentConfig cfg = base;
  cfg.env = "matrix";
  cfg.ppo.entropy_coef = 0.0;  // the scenario assumes no entropy bonus
  cfg.validate();
  auto env = cfg.make_env();
  FailureCaseReport report;
  report.seeds = seed_count;
  report.oracle_return = oracle_optimal_return(*env, cfg.ppo.gamma);
  fs::create_directories(cfg.out_dir);

  for (int s = 1; s <= seed_count; ++s) {
    for (const std::string& model : {std::string("cmat"), std::string("mat-sequential")}) {
      ExperimentConfig sub = cfg;
      sub.model = model;
      auto policy = sub.make_policy(*env, static_cast<std::uint64_t>(s));
      train_policy(*policy, *env, sub.trainer_config(static_cast<std::uint64_t>(s)));
      RngStream rng(static_cast<std::uint64_t>(s), 9999);
      ActResult act = policy->act(env->clone()->reset(), ActMode::Greedy, rng);
      bool optimal = act.actions[0] == 1 && act.actions[1] == 1;
      bool subopt = act.actions[0] == 0 && act.actions[1] == 0;
      if (model == "cmat") {
        report.cmat_optimal += optimal ? 1 : 0;
        report.cmat_suboptimal_ne += subopt ? 1 : 0;
        report.cmat_other += !optimal && !subopt ? 1 : 0;
      } else {
        report.mat_optimal += optimal ? 1 : 0;
        report.mat_suboptimal_ne += subopt ? 1 : 0;
        report.mat_other += !optimal && !subopt ? 1 : 0;
      }
    }
    if (!quiet) std::cout << "failure-case seed " << s << "/" << seed_count << " done\n";
  }
  write_text_file(cfg.out_dir + "/failure_report.txt", report.to_text());
  if (!quiet) std::cout << report.to_text();
  return report;
}

std::vector<std::string> emit_plot_data(const std::vector<std::string>& run_dirs, bool quiet) {
  if (run_dirs.empty()) throw ConfigError("plot-data: need at least one run directory");
  std::vector<std::string> written;
  for (const auto& dir : run_dirs) {
    std::vector<std::pair<long, std::string>> seed_files;
    if (fs::exists(dir + "/metrics.csv")) {
      seed_files.emplace_back(0, dir + "/metrics.csv");
    } else if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        std::string name = entry.path().filename().string();
        if (name.rfind("seed_", 0) != 0) continue;
        std::string metrics = entry.path().string() + "/metrics.csv";
        if (!fs::exists(metrics)) continue;
        long seed = 0;
        try {
          seed = std::stol(name.substr(5));
        } catch (const std::exception&) {
          seed = 0;
        }
        seed_files.emplace_back(seed, metrics);
      }
      std::sort(seed_files.begin(), seed_files.end());
    }
    if (seed_files.empty()) throw ConfigError("plot-data: no metrics.csv found under " + dir);
    std::vector<std::vector<MetricRow>> runs;
    for (const auto& [seed, path] : seed_files) runs.push_back(read_metrics_csv(path));
    bool resampled = false;
    auto curve = aligned_curve(runs, &resampled);
    if (resampled) std::cerr << "warning: step grids differ under " << dir << ", resampled to coarsest\n";
    std::string out = dir + "/curve.csv";
    write_curve_csv(out, curve);
    written.push_back(out);
    if (!quiet) std::cout << "wrote " << out << " from " << runs.size() << " run(s)\n";
  }
  return written;
}

GradCheckSummary run_grad_check(bool quiet) {
  GradCheckSummary summary;
  RngStream rng(2024, 0);

  // full CMAT loss over a small random 2-agent batch
  {
    CmatConfig mc;
    mc.agents = 2;
    mc.obs_dim = 4;
    mc.num_actions = 3;
    mc.d = 8;
    mc.heads = 2;
    mc.encoder_blocks = 2;
    mc.decoder_blocks = 2;
    mc.compressor_heads = 2;
    mc.m = 2;
    CmatPolicy policy(mc, 42);
    TrajectoryBatch batch;
    std::vector<int> indices;
    for (int t = 0; t < 3; ++t) {
      std::vector<std::vector<double>> rows;
      for (int i = 0; i < mc.agents; ++i) {
        std::vector<double> r;
        for (int j = 0; j < mc.obs_dim; ++j) r.push_back(rng.normal());
        rows.push_back(std::move(r));
      }
      JointObservation obs = JointObservation::from_rows(rows);
      std::vector<int> actions = {rng.uniform_int(mc.num_actions), rng.uniform_int(mc.num_actions)};
      EvalOutput eval = policy.evaluate_actions(obs, actions);
      batch.obs.push_back(obs);
      batch.actions.push_back(actions);
      batch.rewards.push_back(rng.normal());
      batch.dones.push_back(1);
      batch.values.push_back(0.0);
      // keep ratios strictly inside the clip interval so the loss is smooth
      batch.behavior_joint_logp.push_back(eval.joint_logp.scalar_value() + rng.uniform(-0.05, 0.05));
      batch.behavior_agent_logp.push_back({0.0, 0.0});
      batch.advantages.push_back(rng.normal());
      batch.returns.push_back(rng.normal());
      indices.push_back(t);
    }
    PpoConfig ppo;
    auto f = [&]() {
      LossBundle losses = cmat_losses(policy, batch, indices, ppo);
      return add(losses.actor, mul_scalar(losses.critic, ppo.value_coef));
    };
    std::vector<Tensor> inputs;
    for (auto& e : policy.params().entries()) inputs.push_back(e.tensor);
    auto report = grad_check(f, inputs, 1e-5, 1e-4);
    summary.full_model = report.max_rel_err;
    if (!quiet) {
      std::cout << "full-model loss grad check over " << policy.params().total_size()
                << " parameters: max rel err " << report.max_rel_err << "\n";
    }
  }

  // per-block checks
  auto check_block = [&](const char* name, ParameterStore& store, const std::function<Tensor()>& f) {
    std::vector<Tensor> inputs;
    for (auto& e : store.entries()) inputs.push_back(e.tensor);
    auto report = grad_check(f, inputs, 1e-5, 1e-4);
    summary.worst_block = std::max(summary.worst_block, report.max_rel_err);
    if (!quiet) std::cout << name << ": max rel err " << report.max_rel_err << "\n";
  };

  {
    ParameterStore store;
    RngStream init(7, 0);
    Mlp mlp({3, 5, 2}, Activation::Relu, store, "mlp", init);
    Tensor x = Tensor::zeros({4, 3});
    for (int i = 0; i < x.size(); ++i) x.values()[i] = rng.normal();
    Tensor target = Tensor::zeros({4, 2});
    for (int i = 0; i < target.size(); ++i) target.values()[i] = rng.normal();
    check_block("mlp", store, [&]() { return sum(mul(mlp.forward(x), target)); });
  }
  {
    ParameterStore store;
    RngStream init(8, 0);
    EncoderBlock block(4, 2, store, "enc", init);
    Tensor x = Tensor::zeros({3, 4});
    for (int i = 0; i < x.size(); ++i) x.values()[i] = rng.normal();
    Tensor target = Tensor::zeros({3, 4});
    for (int i = 0; i < target.size(); ++i) target.values()[i] = rng.normal();
    check_block("encoder block", store, [&]() { return sum(mul(block.forward(x), target)); });
  }
  {
    ParameterStore store;
    RngStream init(9, 0);
    DecoderBlock block(4, 2, store, "dec", init);
    Tensor seq = Tensor::zeros({3, 4});
    for (int i = 0; i < seq.size(); ++i) seq.values()[i] = rng.normal();
    Tensor memory = Tensor::zeros({2, 4});
    for (int i = 0; i < memory.size(); ++i) memory.values()[i] = rng.normal();
    Tensor target = Tensor::zeros({3, 4});
    for (int i = 0; i < target.size(); ++i) target.values()[i] = rng.normal();
    check_block("decoder block", store, [&]() { return sum(mul(block.forward(seq, memory), target)); });
  }
  {
    ParameterStore store;
    RngStream init(10, 0);
    Compressor comp = make_critic_compressor(4, 2, store, "comp", init);
    Tensor x = Tensor::zeros({3, 4});
    for (int i = 0; i < x.size(); ++i) x.values()[i] = rng.normal();
    Tensor target = Tensor::zeros({4});
    for (int i = 0; i < target.size(); ++i) target.values()[i] = rng.normal();
    check_block("compressor", store, [&]() { return sum(mul(comp.forward(x), target)); });
  }
  summary.pass = summary.full_model <= 1e-4 && summary.worst_block <= 1e-4;
  if (!quiet) std::cout << (summary.pass ? "grad check PASS" : "grad check FAIL") << "\n";
  return summary;
}

}  // namespace cmat
