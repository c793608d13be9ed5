#include "cmat/rl.hpp"

#include <cmath>
#include <unordered_map>

namespace cmat {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (minibatch_size < 0) throw ConfigError("minibatch_size must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw ConfigError("loss coefficients must be non-negative");
}

void compute_gae(TrajectoryBatch& batch, double gamma, double lambda) {
  int n = batch.size();
  if (static_cast<int>(batch.values.size()) != n) throw ContractError("compute_gae: values missing");
  if (batch.segments.size() != batch.bootstrap_values.size()) {
    throw ContractError("compute_gae: one bootstrap value per segment required");
  }
  batch.advantages.assign(static_cast<std::size_t>(n), 0.0);
  batch.returns.assign(static_cast<std::size_t>(n), 0.0);
  for (std::size_t s = 0; s < batch.segments.size(); ++s) {
    auto [begin, end] = batch.segments[s];
    double next_adv = 0.0;
    for (int t = end - 1; t >= begin; --t) {
      double mask = batch.dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
      double next_value =
          t + 1 == end ? batch.bootstrap_values[s] : batch.values[static_cast<std::size_t>(t + 1)];
      double delta = batch.rewards[static_cast<std::size_t>(t)] + gamma * next_value * mask -
                     batch.values[static_cast<std::size_t>(t)];
      next_adv = delta + gamma * lambda * mask * next_adv;
      batch.advantages[static_cast<std::size_t>(t)] = next_adv;
      batch.returns[static_cast<std::size_t>(t)] =
          next_adv + batch.values[static_cast<std::size_t>(t)];
    }
  }
}

void normalize_advantages(TrajectoryBatch& batch) {
  int n = batch.size();
  if (n == 0) return;
  double mean = 0.0;
  for (double a : batch.advantages) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  var /= n;
  double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (double& a : batch.advantages) a = (a - mean) * inv;
}

std::vector<double> cmat_ratio(const std::vector<double>& current, const std::vector<double>& behavior) {
  if (current.size() != behavior.size()) throw ContractError("cmat_ratio: length mismatch");
  std::vector<double> out(current.size());
  for (std::size_t t = 0; t < current.size(); ++t) {
    out[t] = std::exp(current[t] - behavior[t]);
    if (!std::isfinite(out[t])) {
      throw NumericError("cmat_ratio: non-finite ratio at step " + std::to_string(t));
    }
  }
  return out;
}

Tensor ratio_from_logp(const Tensor& current_logp, double behavior_logp, int step_index) {
  Tensor ratio = cmat::exp(add_scalar(current_logp, -behavior_logp));
  if (!std::isfinite(ratio.scalar_value())) {
    throw NumericError("ratio: non-finite ratio at step " + std::to_string(step_index));
  }
  return ratio;
}

namespace {

// min(rho * A, clip(rho, 1-eps, 1+eps) * A), plus clip bookkeeping.
Tensor clipped_term(const Tensor& ratio, double advantage, double eps, bool& clipped) {
  clipped = std::abs(ratio.scalar_value() - 1.0) > eps;
  Tensor unclipped = mul_scalar(ratio, advantage);
  Tensor clipped_t = mul_scalar(clip(ratio, 1.0 - eps, 1.0 + eps), advantage);
  return minimum(unclipped, clipped_t);
}

Tensor mean_of(std::vector<Tensor> terms) {
  Tensor total = sum_tensors(terms);
  return mul_scalar(total, 1.0 / static_cast<double>(terms.size()));
}

// Groups minibatch indices by observation identity (the env's canonical state
// id) so the policy forward pass is shared across repeated states. Indices
// with no state id each form their own group.
std::vector<std::vector<int>> group_by_observation(const TrajectoryBatch& batch,
                                                   const std::vector<int>& indices) {
  std::vector<std::vector<int>> groups;
  std::unordered_map<std::int64_t, std::size_t> by_key;
  for (int t : indices) {
    std::int64_t key = batch.obs[static_cast<std::size_t>(t)].state_key;
    if (key < 0) {
      groups.push_back({t});
      continue;
    }
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      by_key.emplace(key, groups.size());
      groups.push_back({t});
    } else {
      groups[it->second].push_back(t);
    }
  }
  return groups;
}

}  // namespace

LossBundle cmat_losses(const JointPolicy& policy, const TrajectoryBatch& batch,
                       const std::vector<int>& indices, const PpoConfig& cfg) {
  if (indices.empty()) throw ContractError("cmat_losses: empty minibatch");
  std::vector<Tensor> surrogate, critic_se, entropies;
  double kl = 0.0;
  int clipped_count = 0;
  for (const auto& group : group_by_observation(batch, indices)) {
    std::vector<std::vector<int>> action_sets;
    for (int t : group) action_sets.push_back(batch.actions[static_cast<std::size_t>(t)]);
    GroupEval evals = policy.evaluate_group(batch.obs[static_cast<std::size_t>(group.front())], action_sets);
    for (std::size_t g = 0; g < group.size(); ++g) {
      int t = group[g];
      auto ti = static_cast<std::size_t>(t);
      const EvalOutput& eval = evals.samples[g];
      Tensor ratio = ratio_from_logp(eval.joint_logp, batch.behavior_joint_logp[ti], t);
      bool clipped = false;
      surrogate.push_back(clipped_term(ratio, batch.advantages[ti], cfg.clip_eps, clipped));
      clipped_count += clipped ? 1 : 0;
      kl += batch.behavior_joint_logp[ti] - eval.joint_logp.scalar_value();
      Tensor err = add_scalar(eval.value, -batch.returns[ti]);
      critic_se.push_back(mul(err, err));
      entropies.push_back(eval.entropy);
    }
  }
  LossBundle out;
  out.entropy = mean_of(entropies);
  out.actor = sub(neg(mean_of(surrogate)), mul_scalar(out.entropy, cfg.entropy_coef));
  out.critic = mean_of(critic_se);
  out.clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(indices.size());
  out.approx_kl = kl / static_cast<double>(indices.size());
  return out;
}

LossBundle mat_losses(const JointPolicy& policy, const TrajectoryBatch& batch,
                      const std::vector<int>& indices, const PpoConfig& cfg) {
  if (indices.empty()) throw ContractError("mat_losses: empty minibatch");
  std::vector<Tensor> surrogate, critic_se, entropies;
  double kl = 0.0;
  int clipped_count = 0;
  int agents = policy.num_agents();
  for (const auto& group : group_by_observation(batch, indices)) {
    std::vector<std::vector<int>> action_sets;
    for (int t : group) action_sets.push_back(batch.actions[static_cast<std::size_t>(t)]);
    GroupEval evals = policy.evaluate_group(batch.obs[static_cast<std::size_t>(group.front())], action_sets);
    for (std::size_t g = 0; g < group.size(); ++g) {
      int t = group[g];
      auto ti = static_cast<std::size_t>(t);
      const EvalOutput& eval = evals.samples[g];
      if (eval.per_agent_value.empty()) {
        throw ContractError("mat_losses: policy does not expose per-agent values");
      }
      for (int i = 0; i < agents; ++i) {
        auto ii = static_cast<std::size_t>(i);
        Tensor ratio = ratio_from_logp(eval.per_agent_logp[ii], batch.behavior_agent_logp[ti][ii], t);
        bool clipped = false;
        surrogate.push_back(clipped_term(ratio, batch.advantages[ti], cfg.clip_eps, clipped));
        clipped_count += clipped ? 1 : 0;
        Tensor err = add_scalar(eval.per_agent_value[ii], -batch.returns[ti]);
        critic_se.push_back(mul(err, err));
      }
      kl += batch.behavior_joint_logp[ti] - eval.joint_logp.scalar_value();
      entropies.push_back(mul_scalar(eval.entropy, 1.0 / static_cast<double>(agents)));
    }
  }
  LossBundle out;
  out.entropy = mean_of(entropies);
  out.actor = sub(neg(mean_of(surrogate)), mul_scalar(out.entropy, cfg.entropy_coef));
  out.critic = mean_of(critic_se);
  out.clip_fraction =
      static_cast<double>(clipped_count) / static_cast<double>(indices.size() * static_cast<std::size_t>(agents));
  out.approx_kl = kl / static_cast<double>(indices.size());
  return out;
}

void soft_update(ParameterStore& target, const ParameterStore& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("soft_update: tau must be in [0, 1]");
  if (target.count() != online.count()) throw ContractError("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.count(); ++i) {
    auto& dst = target.entries()[i];
    const auto& src = online.entries()[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw ContractError("soft_update: mismatched parameter " + dst.name + " vs " + src.name);
    }
    dst.tensor.values() = tau * src.tensor.values() + (1.0 - tau) * dst.tensor.values();
  }
}

Adam::Adam(ParameterStore& store, double lr, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(store.count());
  v_.resize(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    int n = store.entries()[i].tensor.size();
    m_[i] = Eigen::VectorXd::Zero(n);
    v_[i] = Eigen::VectorXd::Zero(n);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < store_.count(); ++i) {
    auto& e = store_.entries()[i];
    if (e.frozen) continue;
    Eigen::VectorXd g = e.tensor.has_grad() ? e.tensor.grad() : Eigen::VectorXd::Zero(e.tensor.size());
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Eigen::VectorXd mhat = m_[i] / bc1;
    Eigen::VectorXd vhat = v_[i] / bc2;
    e.tensor.values() -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

}  // namespace cmat
