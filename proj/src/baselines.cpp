#include "cmat/baselines.hpp"

#include <algorithm>
#include <map>

#include "cmat/model.hpp"

namespace cmat {

std::vector<int> SequentialConfig::resolved_order() const {
  if (order.empty()) {
    std::vector<int> natural(static_cast<std::size_t>(agents));
    for (int i = 0; i < agents; ++i) natural[static_cast<std::size_t>(i)] = i;
    return natural;
  }
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < agents; ++i) {
    if (sorted[static_cast<std::size_t>(i)] != i) {
      throw ContractError("decision order must be a permutation of 0..n-1");
    }
  }
  return order;
}

SequentialPolicy::SequentialPolicy(SequentialConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), store_(kind()) {
  cfg_.resolved_order();  // validate
  RngStream rng(init_seed, 0);
  int d = cfg_.d;
  embed_ = Mlp({cfg_.obs_dim, d, d}, Activation::Relu, store_, "embed", rng);
  for (int i = 0; i < cfg_.encoder_blocks; ++i) {
    encoder_.emplace_back(d, cfg_.heads, store_, "enc" + std::to_string(i), rng);
  }
  value_mlp_ = Mlp({d, d, 1}, Activation::Relu, store_, "value_mlp", rng, 0.0);
  Tensor start = Tensor::zeros({d});
  for (int i = 0; i < d; ++i) start.values()[i] = rng.normal(0.0, 0.02);
  start_token_ = store_.add("dec.start", start.set_requires_grad(true));
  Tensor aemb = Tensor::zeros({cfg_.num_actions, d});
  for (int i = 0; i < aemb.size(); ++i) aemb.values()[i] = rng.normal(0.0, 0.02);
  action_embed_ = store_.add("dec.action_embed", aemb.set_requires_grad(true));
  pos_ = PositionalEmbedding(cfg_.agents, d, store_, "dec.pos", rng);
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_.emplace_back(d, cfg_.heads, store_, "dec" + std::to_string(i), rng);
  }
  head_ = Mlp({2 * d, d, cfg_.num_actions}, Activation::Relu, store_, "head", rng, 0.01);
}

Tensor SequentialPolicy::encode_features(const JointObservation& obs) const {
  if (obs.width() != cfg_.obs_dim) {
    throw ContractError("encode: observation width " + std::to_string(obs.width()) + " expected " +
                        std::to_string(cfg_.obs_dim));
  }
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  return x;
}

// Token i is the embedded action of agent order[i-1] (token 0 is the start
// token); the causal mask keeps position i blind to later decisions.
Tensor SequentialPolicy::decision_logits(const Tensor& features, const std::vector<int>& actions) const {
  auto order = cfg_.resolved_order();
  std::vector<Tensor> tokens;
  tokens.push_back(add(start_token_, pos_.lookup(0)));
  for (int i = 1; i < cfg_.agents; ++i) {
    int prev_agent = order[static_cast<std::size_t>(i - 1)];
    int a = actions[static_cast<std::size_t>(prev_agent)];
    if (a < 0 || a >= cfg_.num_actions) throw ContractError("decision_logits: invalid action index");
    tokens.push_back(add(row(action_embed_, a), pos_.lookup(i)));
  }
  Tensor seq = stack_rows(tokens);
  for (const auto& block : decoder_) seq = block.forward(seq, features);
  std::vector<Tensor> rows_in;
  for (int i = 0; i < cfg_.agents; ++i) {
    rows_in.push_back(concat({row(seq, i), row(features, order[static_cast<std::size_t>(i)])}));
  }
  return head_.forward(stack_rows(rows_in));
}

ActResult SequentialPolicy::act(const JointObservation& obs, ActMode mode, RngStream& rng) const {
  Tensor features = encode_features(obs);
  auto order = cfg_.resolved_order();
  ActResult result;
  result.actions.assign(static_cast<std::size_t>(cfg_.agents), 0);
  result.per_agent_logp.assign(static_cast<std::size_t>(cfg_.agents), 0.0);
  std::vector<Tensor> tokens;
  tokens.push_back(add(start_token_, pos_.lookup(0)));
  for (int i = 0; i < cfg_.agents; ++i) {
    Tensor seq = stack_rows(tokens);
    for (const auto& block : decoder_) seq = block.forward(seq, features);
    int agent = order[static_cast<std::size_t>(i)];
    Tensor logits = head_.forward(
        stack_rows({concat({row(seq, i), row(features, agent)})}));
    auto lp = logits_row_log_probs(logits, 0);
    int a = mode == ActMode::Greedy ? argmax_row(logits, 0)
                                    : rng.sample_logits(logits.values().data(), cfg_.num_actions);
    result.actions[static_cast<std::size_t>(agent)] = a;
    result.per_agent_logp[static_cast<std::size_t>(agent)] = lp[static_cast<std::size_t>(a)];
    result.joint_logp += lp[static_cast<std::size_t>(a)];
    if (i + 1 < cfg_.agents) tokens.push_back(add(row(action_embed_, a), pos_.lookup(i + 1)));
  }
  return result;
}

double SequentialPolicy::value_estimate(const JointObservation& obs) const {
  Tensor features = encode_features(obs);
  Tensor values = value_mlp_.forward(features);  // [n, 1]
  return values.values().mean();
}

EvalOutput SequentialPolicy::evaluate_actions(const JointObservation& obs,
                                              const std::vector<int>& actions) const {
  if (static_cast<int>(actions.size()) != cfg_.agents) {
    throw ContractError("evaluate_actions: expected " + std::to_string(cfg_.agents) + " actions");
  }
  Tensor features = encode_features(obs);
  Tensor logits = decision_logits(features, actions);
  auto order = cfg_.resolved_order();
  EvalOutput out;
  Tensor values = value_mlp_.forward(features);  // [n, 1]
  std::vector<Tensor> entropies;
  out.per_agent_logp.resize(static_cast<std::size_t>(cfg_.agents));
  for (int i = 0; i < cfg_.agents; ++i) {
    int agent = order[static_cast<std::size_t>(i)];
    Tensor lp = log_softmax(row(logits, i));
    out.per_agent_logp[static_cast<std::size_t>(agent)] =
        select(lp, actions[static_cast<std::size_t>(agent)]);
    entropies.push_back(neg(sum(mul(cmat::exp(lp), lp))));
  }
  for (int i = 0; i < cfg_.agents; ++i) {
    out.per_agent_value.push_back(select(flatten(values), i));
  }
  out.joint_logp = sum_tensors(out.per_agent_logp);
  out.entropy = sum_tensors(entropies);
  out.value = mul_scalar(sum_tensors(out.per_agent_value), 1.0 / static_cast<double>(cfg_.agents));
  return out;
}

// The decoder input depends on the fed-back actions, so sharing is only legal
// between samples with identical action vectors.
GroupEval SequentialPolicy::evaluate_group(const JointObservation& obs,
                                           const std::vector<std::vector<int>>& action_sets) const {
  GroupEval out;
  out.samples.resize(action_sets.size());
  std::map<std::vector<int>, std::size_t> first_index;
  for (std::size_t i = 0; i < action_sets.size(); ++i) {
    auto [it, fresh] = first_index.try_emplace(action_sets[i], i);
    if (fresh) {
      out.samples[i] = evaluate_actions(obs, action_sets[i]);
    } else {
      out.samples[i] = out.samples[it->second];
    }
  }
  return out;
}

std::unique_ptr<JointPolicy> SequentialPolicy::clone() const {
  auto copy = std::make_unique<SequentialPolicy>(cfg_, 0);
  copy->store_.copy_values_from(store_);
  copy->store_.disable_grads();
  return copy;
}

SimultaneousPolicy::SimultaneousPolicy(SimultaneousConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg), store_(kind()) {
  RngStream rng(init_seed, 0);
  int d = cfg_.d;
  embed_ = Mlp({cfg_.obs_dim, d, d}, Activation::Relu, store_, "embed", rng);
  for (int i = 0; i < cfg_.encoder_blocks; ++i) {
    encoder_.emplace_back(d, cfg_.heads, store_, "enc" + std::to_string(i), rng);
  }
  critic_comp_ = make_critic_compressor(d, cfg_.compressor_heads, store_, "critic_comp", rng);
  critic_mlp_ = Mlp({d, d, 1}, Activation::Relu, store_, "critic_mlp", rng, 0.0);
  actor_mlp_ = Mlp({d, d, cfg_.num_actions}, Activation::Relu, store_, "actor_mlp", rng, 0.01);
}

Tensor SimultaneousPolicy::actor_logits(const JointObservation& obs) const {
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  return actor_mlp_.forward(x);
}

ActResult SimultaneousPolicy::act(const JointObservation& obs, ActMode mode, RngStream& rng) const {
  Tensor logits = actor_logits(obs);
  ActResult result;
  result.actions.resize(static_cast<std::size_t>(cfg_.agents));
  result.per_agent_logp.resize(static_cast<std::size_t>(cfg_.agents));
  for (int i = 0; i < cfg_.agents; ++i) {
    auto lp = logits_row_log_probs(logits, i);
    int a = mode == ActMode::Greedy
                ? argmax_row(logits, i)
                : rng.sample_logits(logits.values().data() + i * cfg_.num_actions, cfg_.num_actions);
    result.actions[static_cast<std::size_t>(i)] = a;
    result.per_agent_logp[static_cast<std::size_t>(i)] = lp[static_cast<std::size_t>(a)];
    result.joint_logp += lp[static_cast<std::size_t>(a)];
  }
  return result;
}

double SimultaneousPolicy::value_estimate(const JointObservation& obs) const {
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  return critic_mlp_.forward(critic_comp_.forward(x)).scalar_value();
}

EvalOutput SimultaneousPolicy::evaluate_actions(const JointObservation& obs,
                                                const std::vector<int>& actions) const {
  if (static_cast<int>(actions.size()) != cfg_.agents) {
    throw ContractError("evaluate_actions: expected " + std::to_string(cfg_.agents) + " actions");
  }
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  Tensor logits = actor_mlp_.forward(x);
  EvalOutput out;
  out.value = critic_mlp_.forward(critic_comp_.forward(x));
  std::vector<Tensor> entropies;
  for (int i = 0; i < cfg_.agents; ++i) {
    int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= cfg_.num_actions) throw ContractError("evaluate_actions: invalid action index");
    Tensor lp = log_softmax(row(logits, i));
    out.per_agent_logp.push_back(select(lp, a));
    entropies.push_back(neg(sum(mul(cmat::exp(lp), lp))));
  }
  out.joint_logp = sum_tensors(out.per_agent_logp);
  out.entropy = sum_tensors(entropies);
  return out;
}

GroupEval SimultaneousPolicy::evaluate_group(const JointObservation& obs,
                                             const std::vector<std::vector<int>>& action_sets) const {
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  Tensor logits = actor_mlp_.forward(x);
  Tensor value = critic_mlp_.forward(critic_comp_.forward(x));
  std::vector<Tensor> log_probs;
  std::vector<Tensor> entropies;
  for (int i = 0; i < cfg_.agents; ++i) {
    Tensor lp = log_softmax(row(logits, i));
    entropies.push_back(neg(sum(mul(cmat::exp(lp), lp))));
    log_probs.push_back(lp);
  }
  Tensor entropy = sum_tensors(entropies);
  GroupEval out;
  out.samples.reserve(action_sets.size());
  for (const auto& actions : action_sets) {
    EvalOutput sample;
    sample.value = value;
    sample.entropy = entropy;
    for (int i = 0; i < cfg_.agents; ++i) {
      int a = actions[static_cast<std::size_t>(i)];
      if (a < 0 || a >= cfg_.num_actions) throw ContractError("evaluate_group: invalid action index");
      sample.per_agent_logp.push_back(select(log_probs[static_cast<std::size_t>(i)], a));
    }
    sample.joint_logp = sum_tensors(sample.per_agent_logp);
    out.samples.push_back(std::move(sample));
  }
  return out;
}

RowMat SimultaneousPolicy::action_log_prob_table(const JointObservation& obs) const {
  Tensor logits = actor_logits(obs);
  RowMat table(cfg_.agents, cfg_.num_actions);
  for (int i = 0; i < cfg_.agents; ++i) {
    auto lp = logits_row_log_probs(logits, i);
    for (int a = 0; a < cfg_.num_actions; ++a) table(i, a) = lp[static_cast<std::size_t>(a)];
  }
  return table;
}

std::unique_ptr<JointPolicy> SimultaneousPolicy::clone() const {
  auto copy = std::make_unique<SimultaneousPolicy>(cfg_, 0);
  copy->store_.copy_values_from(store_);
  copy->store_.disable_grads();
  return copy;
}

}  // namespace cmat
