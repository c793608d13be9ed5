#pragma once

#include <limits>

#include "cmat/env.hpp"

namespace cmat {

struct TrainerConfig {
  PpoConfig ppo;
  int workers = 8;
  int horizon = 16;
  long total_steps = 20000;
  int eval_every = 10;     // updates between greedy evaluations
  int eval_episodes = 32;  // episodes per evaluation
  double early_stop_return = std::numeric_limits<double>::quiet_NaN();  // NaN = disabled
  std::uint64_t seed = 1;
};

struct MetricRow {
  int update = 0;
  long env_steps = 0;
  double mean_return = 0.0;  // discounted returns of episodes finished during collection
  double std_return = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct EvalStats {
  int episodes = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct EvalRow {
  int update = 0;
  long env_steps = 0;
  EvalStats stats;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  std::vector<EvalRow> evals;
  std::vector<double> update_seconds;  // wall clock, nondeterministic sidecar
  long env_steps = 0;
  bool early_stopped = false;
  double final_eval_mean = std::numeric_limits<double>::quiet_NaN();
};

// Greedy or sampled evaluation episodes; returns are discounted by gamma.
EvalStats evaluate_policy(const Env& env_proto, const JointPolicy& policy, int episodes, ActMode mode,
                          double gamma, RngStream& rng);

// Algorithm loop: snapshot behavior log-probs at collection, GAE with the
// target-critic values, PPO epochs minimizing actor + value_coef * critic,
// soft-update of the target. Raises NumericError naming the update on a
// non-finite loss.
TrainResult train_policy(JointPolicy& policy, const Env& env_proto, const TrainerConfig& cfg);

enum class FinetuneMode { Consensus, Action };
FinetuneMode parse_finetune_mode(const std::string& name);

// Applies the mode's freeze mask to a CMAT parameter store and verifies the
// trainable/frozen split covers every parameter exactly once.
void apply_finetune_mask(ParameterStore& store, FinetuneMode mode);

// Same loop as train_policy with the mode's freeze mask applied first.
TrainResult finetune_policy(JointPolicy& policy, const Env& env_proto, FinetuneMode mode,
                            const TrainerConfig& cfg);

}  // namespace cmat
