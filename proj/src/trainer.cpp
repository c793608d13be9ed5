#include "cmat/trainer.hpp"

#include <chrono>
#include <cmath>

namespace cmat {

namespace {

// Per-worker collection streams get ids 100+w; evaluation uses 7777.
constexpr std::uint64_t kWorkerStreamBase = 100;
constexpr std::uint64_t kEvalStream = 7777;

EvalStats stats_from_returns(const std::vector<double>& returns) {
  EvalStats s;
  s.episodes = static_cast<int>(returns.size());
  if (returns.empty()) return s;
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= returns.size();  // population convention
  s.mean = mean;
  s.stddev = std::sqrt(var);
  s.min = *std::min_element(returns.begin(), returns.end());
  s.max = *std::max_element(returns.begin(), returns.end());
  return s;
}

// Discounted returns of episodes completed inside the collected batch.
std::vector<double> completed_episode_returns(const TrajectoryBatch& batch, double gamma) {
  std::vector<double> returns;
  for (auto [begin, end] : batch.segments) {
    double acc = 0.0;
    double discount = 1.0;
    for (int t = begin; t < end; ++t) {
      acc += discount * batch.rewards[static_cast<std::size_t>(t)];
      discount *= gamma;
      if (batch.dones[static_cast<std::size_t>(t)]) {
        returns.push_back(acc);
        acc = 0.0;
        discount = 1.0;
      }
    }
  }
  return returns;
}

std::vector<std::vector<int>> minibatch_partition(int n, int minibatch_size) {
  std::vector<std::vector<int>> parts;
  int size = minibatch_size <= 0 ? n : minibatch_size;
  for (int begin = 0; begin < n; begin += size) {
    std::vector<int> idx;
    for (int t = begin; t < std::min(n, begin + size); ++t) idx.push_back(t);
    parts.push_back(std::move(idx));
  }
  return parts;
}

}  // namespace

EvalStats evaluate_policy(const Env& env_proto, const JointPolicy& policy, int episodes, ActMode mode,
                          double gamma, RngStream& rng) {
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    auto env = env_proto.clone();
    JointObservation obs = env->reset();
    double acc = 0.0;
    double discount = 1.0;
    for (int t = 0; t < env->horizon(); ++t) {
      ActResult act = policy.act(obs, mode, rng);
      EnvStep step = env->step(act.actions);
      acc += discount * step.reward;
      discount *= gamma;
      if (step.done) break;
      obs = step.next_obs;
    }
    returns.push_back(acc);
  }
  return stats_from_returns(returns);
}

TrainResult train_policy(JointPolicy& policy, const Env& env_proto, const TrainerConfig& cfg) {
  cfg.ppo.validate();
  if (cfg.workers < 1 || cfg.horizon < 1) throw ConfigError("workers and horizon must be positive");
  TrainResult result;
  auto target = policy.clone();  // target critic, moved only by soft_update
  auto value_fn = [&](const JointObservation& obs) { return target->value_estimate(obs); };

  std::vector<RngStream> streams;
  for (int w = 0; w < cfg.workers; ++w) streams.emplace_back(cfg.seed, kWorkerStreamBase + w);
  RngStream eval_rng(cfg.seed, kEvalStream);

  Adam adam(policy.params(), cfg.ppo.lr);
  bool joint_critic = !policy.per_agent_critic();

  auto run_eval = [&](int update) {
    EvalStats stats =
        evaluate_policy(env_proto, policy, cfg.eval_episodes, ActMode::Greedy, cfg.ppo.gamma, eval_rng);
    result.evals.push_back({update, result.env_steps, stats});
    result.final_eval_mean = stats.mean;
    return stats;
  };

  run_eval(0);  // baseline; the early-stop threshold applies only after training begins

  int update = 0;
  while (result.env_steps < cfg.total_steps) {
    auto t0 = std::chrono::steady_clock::now();
    ++update;
    // behavior log-probs are recorded here and never recomputed: the rollout
    // itself is the theta^- snapshot
    TrajectoryBatch batch = rollout(env_proto, policy, value_fn, cfg.workers, cfg.horizon, streams);
    result.env_steps += batch.size();
    compute_gae(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda);
    if (cfg.ppo.adv_norm) normalize_advantages(batch);

    MetricRow row;
    row.update = update;
    row.env_steps = result.env_steps;
    auto episode_returns = completed_episode_returns(batch, cfg.ppo.gamma);
    EvalStats collect_stats = stats_from_returns(episode_returns);
    row.mean_return = collect_stats.mean;
    row.std_return = collect_stats.stddev;

    auto parts = minibatch_partition(batch.size(), cfg.ppo.minibatch_size);
    double critic_acc = 0.0, actor_acc = 0.0, entropy_acc = 0.0, clip_acc = 0.0, kl_acc = 0.0;
    int loss_count = 0;
    for (int epoch = 0; epoch < cfg.ppo.epochs; ++epoch) {
      for (const auto& idx : parts) {
        policy.params().zero_grads();
        Tape tape;
        LossBundle losses = joint_critic ? cmat_losses(policy, batch, idx, cfg.ppo)
                                         : mat_losses(policy, batch, idx, cfg.ppo);
        Tensor total = add(losses.actor, mul_scalar(losses.critic, cfg.ppo.value_coef));
        if (!std::isfinite(total.scalar_value())) {
          throw NumericError("train: non-finite loss at update " + std::to_string(update));
        }
        tape.backward(total);
        adam.step();
        critic_acc += losses.critic.scalar_value();
        actor_acc += losses.actor.scalar_value();
        entropy_acc += losses.entropy.scalar_value();
        clip_acc += losses.clip_fraction;
        kl_acc += losses.approx_kl;
        ++loss_count;
      }
    }
    soft_update(target->params(), policy.params(), cfg.ppo.tau);

    row.critic_loss = critic_acc / loss_count;
    row.actor_loss = actor_acc / loss_count;
    row.entropy = entropy_acc / loss_count;
    row.clip_fraction = clip_acc / loss_count;
    row.approx_kl = kl_acc / loss_count;
    result.metrics.push_back(row);
    result.update_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (cfg.eval_every > 0 && update % cfg.eval_every == 0) {
      EvalStats stats = run_eval(update);
      if (!std::isnan(cfg.early_stop_return) && stats.mean >= cfg.early_stop_return) {
        result.early_stopped = true;
        return result;
      }
    }
  }
  if (result.evals.empty() || result.evals.back().update != update) run_eval(update);
  return result;
}

FinetuneMode parse_finetune_mode(const std::string& name) {
  if (name == "consensus") return FinetuneMode::Consensus;
  if (name == "action") return FinetuneMode::Action;
  throw ConfigError("unknown finetune mode '" + name + "' (expected consensus or action)");
}

void apply_finetune_mask(ParameterStore& store, FinetuneMode mode) {
  if (store.kind() != "cmat" && store.kind() != "cmat-last-consensus") {
    throw ConfigError("finetune modes are defined for CMAT models, got kind '" + store.kind() + "'");
  }
  // consensus enhancement trains the Critic-MLP, decoder (with its positional
  // table), and Actor-Compressor; action-policy enhancement trains the
  // Critic-MLP and Actor-MLP. Everything else stays frozen.
  std::vector<std::string> trainable = mode == FinetuneMode::Consensus
                                           ? std::vector<std::string>{"critic_mlp", "dec", "actor_comp"}
                                           : std::vector<std::string>{"critic_mlp", "actor_mlp"};
  store.set_trainable_prefixes(trainable);

  static const std::vector<std::string> kGroups = {"embed",      "enc",        "critic_comp", "critic_mlp",
                                                   "dec",        "actor_comp", "actor_mlp"};
  std::size_t trainable_count = 0, frozen_count = 0;
  for (const auto& e : store.entries()) {
    bool known = false;
    for (const auto& g : kGroups) known = known || e.name.rfind(g, 0) == 0;
    if (!known) throw ContractError("finetune mask: parameter outside known groups: " + e.name);
    (e.frozen ? frozen_count : trainable_count) += 1;
  }
  if (trainable_count + frozen_count != store.count() || trainable_count == 0 || frozen_count == 0) {
    throw ContractError("finetune mask: trainable/frozen split does not cover the parameter set");
  }
}

TrainResult finetune_policy(JointPolicy& policy, const Env& env_proto, FinetuneMode mode,
                            const TrainerConfig& cfg) {
  apply_finetune_mask(policy.params(), mode);
  return train_policy(policy, env_proto, cfg);
}

}  // namespace cmat
