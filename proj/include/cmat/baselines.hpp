#pragma once

#include "cmat/compressor.hpp"
#include "cmat/policy.hpp"

namespace cmat {

struct SequentialConfig {
  int agents = 2;
  int obs_dim = 3;
  int num_actions = 2;
  int d = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  std::vector<int> order;  // decision order over agents; empty means 0..n-1

  std::vector<int> resolved_order() const;
};

// MAT-style sequential policy: shared encoder, causal decoder over action
// tokens, per-agent value heads. Agent order[i]'s distribution depends on the
// observations and the actions already taken by order[0..i-1].
class SequentialPolicy : public JointPolicy {
 public:
  SequentialPolicy(SequentialConfig cfg, std::uint64_t init_seed);

  std::string kind() const override { return "mat-sequential"; }
  int num_agents() const override { return cfg_.agents; }
  int num_actions() const override { return cfg_.num_actions; }
  int obs_width() const override { return cfg_.obs_dim; }
  ParameterStore& params() override { return store_; }
  const ParameterStore& params() const override { return store_; }
  ActResult act(const JointObservation& obs, ActMode mode, RngStream& rng) const override;
  double value_estimate(const JointObservation& obs) const override;
  EvalOutput evaluate_actions(const JointObservation& obs, const std::vector<int>& actions) const override;
  GroupEval evaluate_group(const JointObservation& obs,
                           const std::vector<std::vector<int>>& action_sets) const override;
  std::unique_ptr<JointPolicy> clone() const override;
  bool per_agent_critic() const override { return true; }

  // Teacher-forced decoder logits for every decision position, [n, |A|];
  // position i holds the distribution of agent order[i].
  Tensor decision_logits(const Tensor& features, const std::vector<int>& actions) const;
  Tensor encode_features(const JointObservation& obs) const;  // [n, d]
  const SequentialConfig& config() const { return cfg_; }

 private:
  SequentialConfig cfg_;
  ParameterStore store_;
  Mlp embed_;
  std::vector<EncoderBlock> encoder_;
  Mlp value_mlp_;
  Tensor start_token_;
  Tensor action_embed_;  // [|A|, d]
  PositionalEmbedding pos_;
  std::vector<DecoderBlock> decoder_;
  Mlp head_;
};

struct SimultaneousConfig {
  int agents = 2;
  int obs_dim = 3;
  int num_actions = 2;
  int d = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int compressor_heads = 4;
};

// Consensus-free factorized policy: shared encoder, per-agent actor MLP on the
// agent's own feature row, central critic on the compressed feature sequence.
// No inter-agent conditioning at action time.
class SimultaneousPolicy : public JointPolicy {
 public:
  SimultaneousPolicy(SimultaneousConfig cfg, std::uint64_t init_seed);

  std::string kind() const override { return "simultaneous"; }
  int num_agents() const override { return cfg_.agents; }
  int num_actions() const override { return cfg_.num_actions; }
  int obs_width() const override { return cfg_.obs_dim; }
  ParameterStore& params() override { return store_; }
  const ParameterStore& params() const override { return store_; }
  ActResult act(const JointObservation& obs, ActMode mode, RngStream& rng) const override;
  double value_estimate(const JointObservation& obs) const override;
  EvalOutput evaluate_actions(const JointObservation& obs, const std::vector<int>& actions) const override;
  GroupEval evaluate_group(const JointObservation& obs,
                           const std::vector<std::vector<int>>& action_sets) const override;
  bool distribution_depends_only_on_obs() const override { return true; }
  RowMat action_log_prob_table(const JointObservation& obs) const override;
  std::unique_ptr<JointPolicy> clone() const override;

  Tensor actor_logits(const JointObservation& obs) const;  // [n, |A|]

 private:
  SimultaneousConfig cfg_;
  ParameterStore store_;
  Mlp embed_;
  std::vector<EncoderBlock> encoder_;
  Compressor critic_comp_;
  Mlp critic_mlp_;
  Mlp actor_mlp_;
};

}  // namespace cmat
