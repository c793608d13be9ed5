#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cmat/env.hpp"
#include "cmat/trainer.hpp"

namespace cmat {

// Plain-text key=value experiment configuration with '#' comments. Unknown
// keys are rejected with the key name and line number; every value below is a
// documented default. CMAT_WORKERS in the environment overrides `workers`.
struct ExperimentConfig {
  // model
  std::string model = "cmat";  // cmat | cmat-last-consensus | mat-sequential | simultaneous
  int m = -1;                  // consensus iterations, -1 = number of agents
  int hidden_dim = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int compressor_heads = 4;
  std::vector<int> order;  // mat-sequential decision order, empty = 0..n-1

  // environment
  std::string env;  // required: matrix | spread
  std::vector<double> payoff = {1.0, -100.0, 0.0, 100.0};  // row-major, rows = agent 2
  int spread_agents = 2;
  int spread_length = 5;
  int spread_horizon = 3;
  std::vector<int> spread_landmarks = {1, 3};
  std::vector<int> spread_starts;  // empty = evenly spread
  double spread_penalty = 0.1;

  PpoConfig ppo;

  // run control
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  long total_steps = 20000;
  int workers = 8;
  int horizon = 16;
  int eval_every = 10;
  int eval_episodes = 32;
  double early_stop_return = std::numeric_limits<double>::quiet_NaN();
  std::string out_dir = "runs/out";
  std::string eval_mode = "greedy";  // greedy | sample
  std::string finetune_mode;         // consensus | action
  std::string init_checkpoint;

  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_text(const std::string& text, const std::string& origin);
  std::string to_text() const;  // effective config, defaults resolved
  void validate() const;

  std::unique_ptr<Env> make_env() const;
  std::unique_ptr<JointPolicy> make_policy(const Env& env, std::uint64_t seed) const;
  TrainerConfig trainer_config(std::uint64_t seed) const;
};

}  // namespace cmat
