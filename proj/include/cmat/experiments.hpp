#pragma once

#include "cmat/config.hpp"
#include "cmat/metrics.hpp"

namespace cmat {

struct SeedOutcome {
  std::uint64_t seed = 0;
  double final_eval_mean = 0.0;
  double final_eval_std = 0.0;
  long env_steps = 0;
  bool early_stopped = false;
  std::string checkpoint_path;
  double wall_clock_seconds = 0.0;
};

struct ExperimentOutcome {
  std::vector<SeedOutcome> seeds;
  double mean_over_seeds = 0.0;
  double std_over_seeds = 0.0;  // population convention
};

// Trains one seed per entry of cfg.seeds under cfg.out_dir/seed_<s>/ with
// metrics.csv, eval.csv, timing.csv and final.ckpt, plus effective.cfg,
// summary.csv and curve.csv at the top. Mid-run numeric failures leave the
// partial artifacts plus error.txt and rethrow.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool quiet);

// Same artifact layout; loads cfg.init_checkpoint and applies the
// finetune_mode freeze mask before training.
ExperimentOutcome run_finetune(const ExperimentConfig& cfg, bool quiet);

EvalStats run_evaluate(const ExperimentConfig& cfg, bool quiet);

// Consensus-iteration ablation: m in {0, floor(n/2), n, 2n} plus the
// last-consensus variant, each as a full experiment under out/<variant>/.
struct AblationOutcome {
  std::vector<std::pair<std::string, ExperimentOutcome>> variants;
};
AblationOutcome run_ablate_m(const ExperimentConfig& cfg, bool quiet);

// Trains CMAT and the sequential baseline on the 2x2 game with entropy 0 over
// `seed_count` seeds and tallies which pure joint action each greedy policy
// lands on.
struct FailureCaseReport {
  int seeds = 0;
  int cmat_optimal = 0;        // (B, B), return 100
  int cmat_suboptimal_ne = 0;  // (A, A), return 1
  int cmat_other = 0;
  int mat_optimal = 0;
  int mat_suboptimal_ne = 0;
  int mat_other = 0;
  double oracle_return = 0.0;

  double cmat_rate() const { return seeds ? static_cast<double>(cmat_optimal) / seeds : 0.0; }
  double mat_rate() const { return seeds ? static_cast<double>(mat_optimal) / seeds : 0.0; }
  std::string to_text() const;
};
FailureCaseReport run_failure_case(const ExperimentConfig& cfg, int seed_count, bool quiet);

// Aggregates seed_*/metrics.csv under each experiment directory into
// <dir>/curve.csv. Returns the list of curve files written.
std::vector<std::string> emit_plot_data(const std::vector<std::string>& run_dirs, bool quiet);

// Gradient integrity report over a small randomized model; returns max
// relative error across the full-model and per-block checks.
struct GradCheckSummary {
  double full_model = 0.0;
  double worst_block = 0.0;
  bool pass = false;
};
GradCheckSummary run_grad_check(bool quiet);

}  // namespace cmat
