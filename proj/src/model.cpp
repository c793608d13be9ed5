#include "cmat/model.hpp"

#include <cmath>

namespace cmat {

JointObservation JointObservation::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("JointObservation: need at least one agent");
  std::size_t width = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != width) {
      throw ContractError("JointObservation: ragged observation widths " + std::to_string(r.size()) +
                          " vs " + std::to_string(width));
    }
  }
  JointObservation obs;
  obs.features = Tensor::zeros({static_cast<int>(rows.size()), static_cast<int>(width)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      obs.features.values()[static_cast<int>(i * width + j)] = rows[i][j];
    }
  }
  return obs;
}

std::vector<double> logits_row_log_probs(const Tensor& logits, int r) {
  int k = logits.cols();
  std::vector<double> lp(static_cast<std::size_t>(k));
  double m = logits(r, 0);
  for (int j = 1; j < k; ++j) m = std::max(m, logits(r, j));
  double lse = 0.0;
  for (int j = 0; j < k; ++j) lse += std::exp(logits(r, j) - m);
  lse = std::log(lse);
  for (int j = 0; j < k; ++j) lp[static_cast<std::size_t>(j)] = logits(r, j) - m - lse;
  return lp;
}

GroupEval JointPolicy::evaluate_group(const JointObservation& obs,
                                      const std::vector<std::vector<int>>& action_sets) const {
  GroupEval out;
  out.samples.reserve(action_sets.size());
  for (const auto& actions : action_sets) out.samples.push_back(evaluate_actions(obs, actions));
  return out;
}

RowMat JointPolicy::action_log_prob_table(const JointObservation&) const {
  throw ContractError("policy does not expose a cached action distribution");
}

int argmax_row(const Tensor& logits, int r) {
  int best = 0;
  for (int j = 1; j < logits.cols(); ++j) {
    if (logits(r, j) > logits(r, best)) best = j;
  }
  return best;
}

CmatPolicy::CmatPolicy(CmatConfig cfg, std::uint64_t init_seed) : cfg_(cfg), store_(kind()) {
  RngStream rng(init_seed, 0);
  int d = cfg_.d;
  embed_ = Mlp({cfg_.obs_dim, d, d}, Activation::Relu, store_, "embed", rng);
  for (int i = 0; i < cfg_.encoder_blocks; ++i) {
    encoder_.emplace_back(d, cfg_.heads, store_, "enc" + std::to_string(i), rng);
  }
  critic_comp_ = make_critic_compressor(d, cfg_.compressor_heads, store_, "critic_comp", rng);
  // zero-init final layer so a fresh net estimates V ~ 0
  critic_mlp_ = Mlp({d, d, 1}, Activation::Relu, store_, "critic_mlp", rng, 0.0);
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_.emplace_back(d, cfg_.heads, store_, "dec" + std::to_string(i), rng);
  }
  pos_ = PositionalEmbedding(cfg_.resolved_m() + 1, d, store_, "dec.pos", rng);
  if (!cfg_.last_consensus) {
    actor_comp_ = make_actor_compressor(d, cfg_.compressor_heads, store_, "actor_comp", rng);
  }
  // near-uniform initial policy: the exploration premise of the training
  // criteria needs all joint actions sampled early
  actor_mlp_ = Mlp({2 * d, d, cfg_.num_actions}, Activation::Relu, store_, "actor_mlp", rng, 0.01);
}

CmatPolicy::Encoded CmatPolicy::encode(const JointObservation& obs) const {
  if (obs.width() != cfg_.obs_dim) {
    throw ContractError("encode: observation width " + std::to_string(obs.width()) + " expected " +
                        std::to_string(cfg_.obs_dim));
  }
  Tensor x = embed_.forward(obs.features);
  for (const auto& block : encoder_) x = block.forward(x);
  Tensor e0 = critic_comp_.forward(x);
  Tensor value = critic_mlp_.forward(e0);
  return {x, e0, value};
}

CmatPolicy::Consensus CmatPolicy::generate_consensus(const Tensor& features, const Tensor& e0) const {
  Consensus out;
  out.sequence.push_back(e0);
  std::vector<Tensor> seq_rows;
  seq_rows.push_back(add(e0, pos_.lookup(0)));
  for (int k = 1; k <= cfg_.resolved_m(); ++k) {
    Tensor seq = stack_rows(seq_rows);
    for (const auto& block : decoder_) seq = block.forward(seq, features);
    Tensor ek = row(seq, static_cast<int>(seq_rows.size()) - 1);
    out.sequence.push_back(ek);
    seq_rows.push_back(add(ek, pos_.lookup(k)));
  }
  if (cfg_.last_consensus) {
    out.c = out.sequence.back();
  } else {
    out.c = actor_comp_.forward(stack_rows(out.sequence));
  }
  return out;
}

Tensor CmatPolicy::actor_logits(const Tensor& features, const Tensor& c) const {
  Tensor c_used = cfg_.zero_consensus ? Tensor::zeros({cfg_.d}) : c;
  std::vector<Tensor> rows_in;
  rows_in.reserve(static_cast<std::size_t>(cfg_.agents));
  for (int i = 0; i < cfg_.agents; ++i) rows_in.push_back(concat({row(features, i), c_used}));
  return actor_mlp_.forward(stack_rows(rows_in));
}

ActResult CmatPolicy::act(const JointObservation& obs, ActMode mode, RngStream& rng) const {
  Encoded enc = encode(obs);
  Consensus cons = generate_consensus(enc.features, enc.e0);
  Tensor logits = actor_logits(enc.features, cons.c);
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

double CmatPolicy::value_estimate(const JointObservation& obs) const { return encode(obs).value.scalar_value(); }

EvalOutput CmatPolicy::evaluate_actions(const JointObservation& obs, const std::vector<int>& actions) const {
  if (static_cast<int>(actions.size()) != cfg_.agents) {
    throw ContractError("evaluate_actions: expected " + std::to_string(cfg_.agents) + " actions");
  }
  Encoded enc = encode(obs);
  Consensus cons = generate_consensus(enc.features, enc.e0);
  Tensor logits = actor_logits(enc.features, cons.c);
  EvalOutput out;
  out.value = enc.value;
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

GroupEval CmatPolicy::evaluate_group(const JointObservation& obs,
                                     const std::vector<std::vector<int>>& action_sets) const {
  Encoded enc = encode(obs);
  Consensus cons = generate_consensus(enc.features, enc.e0);
  Tensor logits = actor_logits(enc.features, cons.c);
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
    if (static_cast<int>(actions.size()) != cfg_.agents) {
      throw ContractError("evaluate_group: expected " + std::to_string(cfg_.agents) + " actions");
    }
    EvalOutput sample;
    sample.value = enc.value;
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

RowMat CmatPolicy::action_log_prob_table(const JointObservation& obs) const {
  Encoded enc = encode(obs);
  Consensus cons = generate_consensus(enc.features, enc.e0);
  Tensor logits = actor_logits(enc.features, cons.c);
  RowMat table(cfg_.agents, cfg_.num_actions);
  for (int i = 0; i < cfg_.agents; ++i) {
    auto lp = logits_row_log_probs(logits, i);
    for (int a = 0; a < cfg_.num_actions; ++a) table(i, a) = lp[static_cast<std::size_t>(a)];
  }
  return table;
}

std::unique_ptr<JointPolicy> CmatPolicy::clone() const {
  auto copy = std::make_unique<CmatPolicy>(cfg_, 0);
  copy->store_.copy_values_from(store_);
  copy->store_.disable_grads();
  return copy;
}

}  // namespace cmat
