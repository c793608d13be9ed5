#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmat/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
  std::string config_path;
  long seed_override = -1;
  std::string out_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config file (key=value)");
  if (config_required) c->required();
  cmd->add_option("--seed-override", opts.seed_override, "replace the config seed list with one seed");
  cmd->add_option("--out", opts.out_dir, "override the output directory");
  cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
}

cmat::ExperimentConfig load_config(const CommonOpts& opts) {
  cmat::ExperimentConfig cfg = cmat::ExperimentConfig::parse_file(opts.config_path);
  if (opts.seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(opts.seed_override)};
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus multi-agent transformer experiments"};
  app.require_subcommand(1);

  CommonOpts train_opts, finetune_opts, eval_opts, ablate_opts, failure_opts, oracle_opts;
  std::string eval_checkpoint;
  int eval_episodes = -1;
  std::string eval_mode;
  int failure_seeds = 20;
  std::vector<std::string> plot_dirs;
  bool plot_quiet = false;
  bool gc_quiet = false;

  auto* train_cmd = app.add_subcommand("train", "train a policy per seed and write artifacts");
  add_common(train_cmd, train_opts);

  auto* finetune_cmd = app.add_subcommand("finetune", "continue training with a freeze mask");
  add_common(finetune_cmd, finetune_opts);

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to load (overrides init_checkpoint)");
  eval_cmd->add_option("--episodes", eval_episodes, "number of evaluation episodes");
  eval_cmd->add_option("--mode", eval_mode, "greedy or sample");

  auto* ablate_cmd = app.add_subcommand("ablate-m", "run the consensus-iteration ablation set");
  add_common(ablate_cmd, ablate_opts);

  auto* failure_cmd = app.add_subcommand("failure-case", "compare CMAT vs sequential MAT on the 2x2 game");
  add_common(failure_cmd, failure_opts, /*config_required=*/false);
  failure_cmd->add_option("--seeds", failure_seeds, "number of seeds to compare");

  auto* plot_cmd = app.add_subcommand("plot-data", "aggregate seed metrics into curve files");
  plot_cmd->add_option("dirs", plot_dirs, "experiment directories")->required();
  plot_cmd->add_flag("--quiet", plot_quiet, "suppress progress output");

  auto* gc_cmd = app.add_subcommand("grad-check", "run the gradient integrity checks");
  gc_cmd->add_flag("--quiet", gc_quiet, "suppress per-block output");

  auto* oracle_cmd = app.add_subcommand("oracle", "print the exact optimal return of the configured env");
  add_common(oracle_cmd, oracle_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) {
      cmat::run_experiment(load_config(train_opts), train_opts.quiet);
    } else if (*finetune_cmd) {
      cmat::run_finetune(load_config(finetune_opts), finetune_opts.quiet);
    } else if (*eval_cmd) {
      cmat::ExperimentConfig cfg = load_config(eval_opts);
      if (!eval_checkpoint.empty()) cfg.init_checkpoint = eval_checkpoint;
      if (eval_episodes >= 0) cfg.eval_episodes = eval_episodes;
      if (!eval_mode.empty()) cfg.eval_mode = eval_mode;
      cfg.validate();
      cmat::run_evaluate(cfg, eval_opts.quiet);
    } else if (*ablate_cmd) {
      cmat::run_ablate_m(load_config(ablate_opts), ablate_opts.quiet);
    } else if (*failure_cmd) {
      cmat::ExperimentConfig cfg;
      if (!failure_opts.config_path.empty()) {
        cfg = load_config(failure_opts);
      } else {
        cfg.env = "matrix";
        cfg.hidden_dim = 32;
        cfg.total_steps = 6000;
        cfg.horizon = 8;
        cfg.out_dir = "runs/failure_case";
        if (!failure_opts.out_dir.empty()) cfg.out_dir = failure_opts.out_dir;
        cfg.validate();
      }
      cmat::run_failure_case(cfg, failure_seeds, failure_opts.quiet);
    } else if (*plot_cmd) {
      cmat::emit_plot_data(plot_dirs, plot_quiet);
    } else if (*gc_cmd) {
      auto summary = cmat::run_grad_check(gc_quiet);
      if (!summary.pass) return kExitNumeric;
    } else if (*oracle_cmd) {
      cmat::ExperimentConfig cfg = load_config(oracle_opts);
      auto env = cfg.make_env();
      double optimal = cmat::oracle_optimal_return(*env, cfg.ppo.gamma);
      double greedy = cmat::oracle_greedy_rollout(*env, cfg.ppo.gamma);
      std::cout << "optimal discounted return: " << optimal << "\n";
      std::cout << "greedy-extraction rollout: " << greedy << "\n";
    }
  } catch (const cmat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cmat::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}
