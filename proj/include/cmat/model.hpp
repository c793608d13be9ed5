#pragma once

#include "cmat/compressor.hpp"
#include "cmat/policy.hpp"

namespace cmat {

struct CmatConfig {
  int agents = 2;
  int obs_dim = 3;
  int num_actions = 2;
  int d = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int compressor_heads = 4;
  int m = -1;                   // consensus iterations; -1 means "number of agents"
  bool last_consensus = false;  // ablation: use e^m directly instead of compressing E
  bool zero_consensus = false;  // ablation wiring: agents act on their own features alone

  int resolved_m() const { return m < 0 ? agents : m; }
};

// Full CMAT policy: encoder -> Critic-Compressor -> Critic-MLP for the value,
// decoder consensus iteration -> Actor-Compressor -> per-agent actor heads for
// the joint action. Consensus generation is deterministic; only the per-agent
// discrete action draws are stochastic.
class CmatPolicy : public JointPolicy {
 public:
  CmatPolicy(CmatConfig cfg, std::uint64_t init_seed);

  struct Encoded {
    Tensor features;  // [n, d] encoder output
    Tensor e0;        // [d] initial consensus
    Tensor value;     // scalar V(O)
  };
  Encoded encode(const JointObservation& obs) const;

  struct Consensus {
    std::vector<Tensor> sequence;  // E = {e^0 .. e^m}
    Tensor c;                      // [d] final consensus
  };
  Consensus generate_consensus(const Tensor& features, const Tensor& e0) const;

  Tensor actor_logits(const Tensor& features, const Tensor& c) const;  // [n, |A|]

  std::string kind() const override { return cfg_.last_consensus ? "cmat-last-consensus" : "cmat"; }
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

  const CmatConfig& config() const { return cfg_; }

 private:
  CmatConfig cfg_;
  ParameterStore store_;
  Mlp embed_;
  std::vector<EncoderBlock> encoder_;
  Compressor critic_comp_;
  Mlp critic_mlp_;
  std::vector<DecoderBlock> decoder_;
  PositionalEmbedding pos_;
  Compressor actor_comp_;
  Mlp actor_mlp_;
};

// Greedy/sampled action helpers shared by the policy classes: row-stable
// log-softmax over a logits row held as plain doubles.
std::vector<double> logits_row_log_probs(const Tensor& logits, int row);
int argmax_row(const Tensor& logits, int row);

}  // namespace cmat
