#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cmat/params.hpp"
#include "cmat/rng.hpp"
#include "cmat/tensor.hpp"

namespace cmat {

// Per-agent observation vectors for one timestep, one row per agent, plus the
// canonical environment state id for oracle tooling.
struct JointObservation {
  Tensor features;             // [n, obs_dim]
  std::int64_t state_key = -1;

  static JointObservation from_rows(const std::vector<std::vector<double>>& rows);
  int num_agents() const { return features.shape()[0]; }
  int width() const { return features.shape()[1]; }
};

enum class ActMode { Sample, Greedy };

struct ActResult {
  std::vector<int> actions;
  std::vector<double> per_agent_logp;
  double joint_logp = 0.0;
};

// Tape-recorded evaluation of a stored joint action under current parameters.
struct EvalOutput {
  Tensor value;                          // scalar V(O)
  std::vector<Tensor> per_agent_logp;    // scalar log pi^i(a^i | .)
  Tensor joint_logp;                     // scalar, sum over agents
  Tensor entropy;                        // scalar, sum of per-agent entropies
  std::vector<Tensor> per_agent_value;   // only for per-agent-critic policies
};

// Evaluation of several stored joint actions against one observation. The
// forward pass is shared wherever the policy's distribution depends only on
// the observation, so repeated states cost one graph instead of many.
struct GroupEval {
  std::vector<EvalOutput> samples;
};

class JointPolicy {
 public:
  virtual ~JointPolicy() = default;
  virtual std::string kind() const = 0;
  virtual int num_agents() const = 0;
  virtual int num_actions() const = 0;
  virtual int obs_width() const = 0;
  virtual ParameterStore& params() = 0;
  virtual const ParameterStore& params() const = 0;
  // Pure inference; never records on a tape.
  virtual ActResult act(const JointObservation& obs, ActMode mode, RngStream& rng) const = 0;
  virtual double value_estimate(const JointObservation& obs) const = 0;
  virtual EvalOutput evaluate_actions(const JointObservation& obs, const std::vector<int>& actions) const = 0;
  // Default: one independent evaluation per action set. Policies with an
  // action-independent forward pass override this to share it.
  virtual GroupEval evaluate_group(const JointObservation& obs,
                                   const std::vector<std::vector<int>>& action_sets) const;
  // Per-agent action log-probability table as plain doubles, for cached
  // rollouts. Only meaningful when distribution_depends_only_on_obs().
  virtual bool distribution_depends_only_on_obs() const { return false; }
  virtual RowMat action_log_prob_table(const JointObservation& obs) const;
  virtual std::unique_ptr<JointPolicy> clone() const = 0;
  // True when the critic is per agent and losses average over agents (the
  // sequential baseline); false for joint-critic policies.
  virtual bool per_agent_critic() const { return false; }
};

}  // namespace cmat
