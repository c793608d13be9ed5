#pragma once

#include <cstdint>
#include <vector>

#include "cmat/policy.hpp"

namespace cmat {

struct PpoConfig {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int epochs = 5;
  int minibatch_size = 0;  // 0 = full batch
  double tau = 0.005;
  double lr = 3e-4;
  bool adv_norm = true;

  void validate() const;
};

// Rollout storage. Steps are stored flat; `segments` marks the contiguous
// per-worker slices, each with its own bootstrap value for the state after the
// final step (0 when that step ended the episode). Advantages are computed
// once after collection and stay frozen through the update epochs.
struct TrajectoryBatch {
  std::vector<JointObservation> obs;
  std::vector<std::vector<int>> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<double> values;  // V from the target critic at collection time
  std::vector<double> behavior_joint_logp;
  std::vector<std::vector<double>> behavior_agent_logp;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<std::pair<int, int>> segments;  // [begin, end)
  std::vector<double> bootstrap_values;       // per segment

  int size() const { return static_cast<int>(rewards.size()); }
};

// delta_t = R_t + gamma * V_{t+1} * (1 - done_t) - V_t
// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1); returns = A + V.
void compute_gae(TrajectoryBatch& batch, double gamma, double lambda);

// In-place mean-0 / std-1 normalization over the whole update batch.
void normalize_advantages(TrajectoryBatch& batch);

// exp(current - behavior) over joint log-probs, computed in log space.
// Non-finite ratios raise NumericError naming the offending step.
std::vector<double> cmat_ratio(const std::vector<double>& current_joint_logp,
                               const std::vector<double>& behavior_joint_logp);
Tensor ratio_from_logp(const Tensor& current_logp, double behavior_logp, int step_index);

struct LossBundle {
  Tensor critic;   // scalar mean squared error against the return targets
  Tensor actor;    // scalar clipped surrogate (sign-flipped) minus entropy bonus
  Tensor entropy;  // scalar mean entropy per step
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// Joint-ratio PPO losses (CMAT and the simultaneous baseline): one clipped
// term per timestep, critic regressed on V(O_t).
LossBundle cmat_losses(const JointPolicy& policy, const TrajectoryBatch& batch,
                       const std::vector<int>& indices, const PpoConfig& cfg);

// Per-agent-ratio losses for the sequential baseline: clipped term per
// (agent, timestep) with the shared joint advantage, critic per V(o^i_t).
LossBundle mat_losses(const JointPolicy& policy, const TrajectoryBatch& batch,
                      const std::vector<int>& indices, const PpoConfig& cfg);

// target <- tau * online + (1 - tau) * target, matched by name and shape.
void soft_update(ParameterStore& target, const ParameterStore& online, double tau);

// Standard bias-corrected Adam over a ParameterStore. Frozen entries are
// skipped entirely: neither the value nor the moment state moves.
class Adam {
 public:
  explicit Adam(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step();
  int steps_taken() const { return t_; }

 private:
  ParameterStore& store_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Eigen::VectorXd> m_;
  std::vector<Eigen::VectorXd> v_;
};

}  // namespace cmat
