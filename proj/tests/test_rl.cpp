#include <cmath>

#include "cmat/model.hpp"
#include "cmat/rl.hpp"
#include "cmat/rng.hpp"
#include "doctest.h"

using namespace cmat;

namespace {

TrajectoryBatch make_batch(const std::vector<double>& rewards, const std::vector<double>& values,
                           const std::vector<std::uint8_t>& dones, double bootstrap) {
  TrajectoryBatch b;
  b.rewards = rewards;
  b.values = values;
  b.dones = dones;
  b.segments.emplace_back(0, static_cast<int>(rewards.size()));
  b.bootstrap_values.push_back(bootstrap);
  return b;
}

JointObservation bias_obs() { return JointObservation::from_rows({{1, 1, 0}, {1, 0, 1}}); }

CmatPolicy small_policy(std::uint64_t seed) {
  CmatConfig cfg;
  cfg.agents = 2;
  cfg.obs_dim = 3;
  cfg.num_actions = 2;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.compressor_heads = 2;
  return CmatPolicy(cfg, seed);
}

// One-step batch around a policy evaluation, with an optional behavior shift.
TrajectoryBatch policy_batch(const CmatPolicy& policy, const JointObservation& obs,
                             const std::vector<int>& actions, double advantage, double ret,
                             double behavior_shift = 0.0) {
  EvalOutput eval = policy.evaluate_actions(obs, actions);
  TrajectoryBatch b;
  b.obs.push_back(obs);
  b.actions.push_back(actions);
  b.rewards.push_back(ret);
  b.dones.push_back(1);
  b.values.push_back(0.0);
  b.behavior_joint_logp.push_back(eval.joint_logp.scalar_value() + behavior_shift);
  b.behavior_agent_logp.push_back(
      {eval.per_agent_logp[0].scalar_value(), eval.per_agent_logp[1].scalar_value()});
  b.advantages.push_back(advantage);
  b.returns.push_back(ret);
  b.segments.emplace_back(0, 1);
  b.bootstrap_values.push_back(0.0);
  return b;
}

}  // namespace

TEST_CASE("gae with lambda 0 equals the one-step TD residuals exactly") {
  auto b = make_batch({1.0, -0.5, 2.0}, {0.3, 0.1, -0.2}, {0, 0, 1}, 0.0);
  compute_gae(b, 0.9, 0.0);
  CHECK(b.advantages[0] == 1.0 + 0.9 * 0.1 - 0.3);
  CHECK(b.advantages[1] == -0.5 + 0.9 * -0.2 - 0.1);
  CHECK(b.advantages[2] == 2.0 - -0.2);
  for (int t = 0; t < 3; ++t) CHECK(b.returns[static_cast<std::size_t>(t)] == b.advantages[static_cast<std::size_t>(t)] + b.values[static_cast<std::size_t>(t)]);
}

TEST_CASE("gae with lambda 1 equals brute-force discounted returns minus values") {
  RngStream rng(3, 0);
  double gamma = 0.97;
  std::vector<double> rewards, values;
  std::vector<std::uint8_t> dones;
  int n = 12;
  for (int t = 0; t < n; ++t) {
    rewards.push_back(rng.normal());
    values.push_back(rng.normal());
    dones.push_back(t == n - 1 ? 1 : 0);
  }
  auto b = make_batch(rewards, values, dones, 0.0);
  compute_gae(b, gamma, 1.0);
  for (int t = 0; t < n; ++t) {
    double discounted = 0.0;
    double d = 1.0;
    for (int u = t; u < n; ++u) {
      discounted += d * rewards[static_cast<std::size_t>(u)];
      d *= gamma;
    }
    CHECK(std::abs(b.advantages[static_cast<std::size_t>(t)] -
                   (discounted - values[static_cast<std::size_t>(t)])) <= 1e-10);
  }
}

TEST_CASE("gae three-step hand recursion") {
  // R = (1, 0, 2), V = (0.5, 0.5, 0.5), gamma = 0.9, lambda = 0.95, terminal
  auto b = make_batch({1.0, 0.0, 2.0}, {0.5, 0.5, 0.5}, {0, 0, 1}, 0.0);
  compute_gae(b, 0.9, 0.95);
  // delta2 = 1.5
  // A1 = delta1 + 0.855 * A2 = -0.05 + 0.855 * 1.5 = 1.2325
  // A0 = delta0 + 0.855 * A1 = 0.95 + 0.855 * 1.2325 = 2.0037875
  CHECK(b.advantages[2] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(b.advantages[1] == doctest::Approx(1.2325).epsilon(1e-12));
  CHECK(b.advantages[0] == doctest::Approx(2.0037875).epsilon(1e-12));
}

TEST_CASE("gae respects episode boundaries inside a segment") {
  auto b = make_batch({1.0, 2.0}, {0.4, 0.6}, {1, 0}, 0.7);
  compute_gae(b, 0.9, 0.95);
  CHECK(b.advantages[0] == doctest::Approx(1.0 - 0.4).epsilon(1e-12));  // done cuts the recursion
  CHECK(b.advantages[1] == doctest::Approx(2.0 + 0.9 * 0.7 - 0.6).epsilon(1e-12));
}

TEST_CASE("ratio identities") {
  auto r = cmat_ratio({-1.2, -0.8}, {-1.2, -0.8});
  CHECK(r[0] == 1.0);
  CHECK(r[1] == 1.0);
  auto r2 = cmat_ratio({-1.2 + std::log(2.0)}, {-1.2});
  CHECK(r2[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(cmat_ratio({1e6}, {-1e6}), NumericError);

  // joint ratio equals the product of per-agent probability ratios at fixed c
  RngStream rng(5, 0);
  double lp1 = rng.normal(), lp2 = rng.normal(), b1 = rng.normal(), b2 = rng.normal();
  double joint = std::exp((lp1 + lp2) - (b1 + b2));
  double product = std::exp(lp1 - b1) * std::exp(lp2 - b2);
  CHECK(joint == doctest::Approx(product).epsilon(1e-12));
}

TEST_CASE("cmat losses: zero advantages, hand-set clip case, clipped gradient is zero") {
  CmatPolicy policy = small_policy(7);
  JointObservation obs = bias_obs();
  PpoConfig ppo;
  ppo.entropy_coef = 0.0;

  SUBCASE("zero advantage gives zero actor loss regardless of ratio") {
    auto b = policy_batch(policy, obs, {0, 1}, 0.0, 1.0, -0.3);
    LossBundle losses = cmat_losses(policy, b, {0}, ppo);
    CHECK(losses.actor.scalar_value() == 0.0);
  }

  SUBCASE("(rho, A, eps) = (1.5, 2, 0.2) gives surrogate min(3, 2.4) = 2.4") {
    auto b = policy_batch(policy, obs, {0, 1}, 2.0, 1.0, -std::log(1.5));
    LossBundle losses = cmat_losses(policy, b, {0}, ppo);
    CHECK(losses.actor.scalar_value() == doctest::Approx(-2.4).epsilon(1e-12));
    CHECK(losses.clip_fraction == 1.0);
  }

  SUBCASE("clipped sample passes no gradient through the ratio") {
    auto b = policy_batch(policy, obs, {0, 1}, 2.0, 1.0, -std::log(1.5));
    policy.params().zero_grads();
    Tape tape;
    LossBundle losses = cmat_losses(policy, b, {0}, ppo);
    tape.backward(losses.actor);
    for (auto& e : policy.params().entries()) {
      if (!e.tensor.has_grad()) continue;
      for (int i = 0; i < e.tensor.size(); ++i) CHECK(e.tensor.grad()[i] == 0.0);
    }
  }
}

TEST_CASE("per-agent and per-timestep actor formulations agree to 1e-12") {
  CmatPolicy policy = small_policy(11);
  JointObservation obs = bias_obs();
  PpoConfig ppo;
  ppo.entropy_coef = 0.0;
  RngStream rng(9, 0);
  std::vector<int> indices;
  TrajectoryBatch batch;
  for (int t = 0; t < 4; ++t) {
    std::vector<int> actions = {rng.uniform_int(2), rng.uniform_int(2)};
    auto one = policy_batch(policy, obs, actions, rng.normal(), rng.normal(), rng.uniform(-0.1, 0.1));
    batch.obs.push_back(one.obs[0]);
    batch.actions.push_back(one.actions[0]);
    batch.rewards.push_back(one.rewards[0]);
    batch.dones.push_back(1);
    batch.values.push_back(0.0);
    batch.behavior_joint_logp.push_back(one.behavior_joint_logp[0]);
    batch.behavior_agent_logp.push_back(one.behavior_agent_logp[0]);
    batch.advantages.push_back(one.advantages[0]);
    batch.returns.push_back(one.returns[0]);
    indices.push_back(t);
  }
  batch.segments.emplace_back(0, 4);
  batch.bootstrap_values.push_back(0.0);

  LossBundle joint = cmat_losses(policy, batch, indices, ppo);
  // per-agent indexed form: the joint ratio term repeats once per agent
  double per_agent_total = 0.0;
  for (int t : indices) {
    auto ti = static_cast<std::size_t>(t);
    EvalOutput eval = policy.evaluate_actions(batch.obs[ti], batch.actions[ti]);
    double rho = std::exp(eval.joint_logp.scalar_value() - batch.behavior_joint_logp[ti]);
    double clipped = std::min(std::max(rho, 1.0 - ppo.clip_eps), 1.0 + ppo.clip_eps);
    double term = std::min(rho * batch.advantages[ti], clipped * batch.advantages[ti]);
    per_agent_total += 2.0 * term;  // i = 1..n, identical term
  }
  double per_agent_loss = -per_agent_total / (2.0 * indices.size());
  CHECK(std::abs(per_agent_loss - joint.actor.scalar_value()) <= 1e-12);
}

TEST_CASE("with a huge clip range the gradient equals the vanilla surrogate gradient") {
  CmatPolicy policy = small_policy(13);
  JointObservation obs = bias_obs();
  auto batch = policy_batch(policy, obs, {1, 0}, 1.7, 0.5, 0.2);
  PpoConfig ppo;
  ppo.entropy_coef = 0.0;
  ppo.clip_eps = 1e9;

  policy.params().zero_grads();
  {
    Tape tape;
    LossBundle losses = cmat_losses(policy, batch, {0}, ppo);
    tape.backward(losses.actor);
  }
  std::vector<Eigen::VectorXd> clipped_grads;
  for (auto& e : policy.params().entries()) {
    clipped_grads.push_back(e.tensor.has_grad() ? e.tensor.grad()
                                                : Eigen::VectorXd::Zero(e.tensor.size()));
  }

  policy.params().zero_grads();
  {
    Tape tape;
    EvalOutput eval = policy.evaluate_actions(batch.obs[0], batch.actions[0]);
    Tensor rho = ratio_from_logp(eval.joint_logp, batch.behavior_joint_logp[0], 0);
    Tensor vanilla = neg(mul_scalar(rho, batch.advantages[0]));
    tape.backward(vanilla);
  }
  std::size_t k = 0;
  for (auto& e : policy.params().entries()) {
    Eigen::VectorXd g = e.tensor.has_grad() ? e.tensor.grad() : Eigen::VectorXd::Zero(e.tensor.size());
    for (int i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - clipped_grads[k][i]) <= 1e-15);
    ++k;
  }
}

TEST_CASE("advantage normalization is mean 0 std 1") {
  RngStream rng(17, 0);
  TrajectoryBatch b;
  for (int t = 0; t < 64; ++t) b.advantages.push_back(rng.normal(2.0, 3.0));
  b.rewards.assign(64, 0.0);
  normalize_advantages(b);
  double mean = 0.0;
  for (double a : b.advantages) mean += a;
  mean /= 64;
  double var = 0.0;
  for (double a : b.advantages) var += (a - mean) * (a - mean);
  var /= 64;
  CHECK(std::abs(mean) <= 1e-9);
  CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
}

TEST_CASE("loss evaluation is invariant to the minibatch partition") {
  CmatPolicy policy = small_policy(19);
  JointObservation obs = bias_obs();
  PpoConfig ppo;
  RngStream rng(21, 0);
  TrajectoryBatch batch;
  for (int t = 0; t < 6; ++t) {
    auto one = policy_batch(policy, obs, {rng.uniform_int(2), rng.uniform_int(2)}, rng.normal(),
                            rng.normal(), rng.uniform(-0.1, 0.1));
    batch.obs.push_back(one.obs[0]);
    batch.actions.push_back(one.actions[0]);
    batch.rewards.push_back(one.rewards[0]);
    batch.dones.push_back(1);
    batch.values.push_back(0.0);
    batch.behavior_joint_logp.push_back(one.behavior_joint_logp[0]);
    batch.behavior_agent_logp.push_back(one.behavior_agent_logp[0]);
    batch.advantages.push_back(one.advantages[0]);
    batch.returns.push_back(one.returns[0]);
  }
  batch.segments.emplace_back(0, 6);
  batch.bootstrap_values.push_back(0.0);

  auto total_for = [&](const std::vector<std::vector<int>>& parts) {
    double weighted = 0.0;
    for (const auto& idx : parts) {
      LossBundle l = cmat_losses(policy, batch, idx, ppo);
      double tot = l.actor.scalar_value() + ppo.value_coef * l.critic.scalar_value();
      weighted += tot * static_cast<double>(idx.size());
    }
    return weighted / 6.0;
  };
  double full = total_for({{0, 1, 2, 3, 4, 5}});
  double halves = total_for({{0, 1, 2}, {3, 4, 5}});
  double reversed = total_for({{3, 4, 5}, {0, 1, 2}});
  CHECK(std::abs(full - halves) <= 1e-12);
  CHECK(std::abs(halves - reversed) <= 1e-12);
}

TEST_CASE("ppo config invariants are enforced") {
  PpoConfig bad;
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PpoConfig{};
  bad.gae_lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PpoConfig{};
  bad.clip_eps = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PpoConfig{};
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  PpoConfig good;
  CHECK_NOTHROW(good.validate());
}

TEST_CASE("soft update blends parameters") {
  ParameterStore target("x"), online("x");
  target.add("a", Tensor::scalar(0.0));
  online.add("a", Tensor::scalar(2.0));
  soft_update(target, online, 0.5);
  CHECK(target.get("a").scalar_value() == 1.0);
  soft_update(target, online, 1.0);  // hard copy
  CHECK(target.get("a").scalar_value() == 2.0);
  ParameterStore t2("x");
  t2.add("a", Tensor::scalar(5.0));
  soft_update(t2, online, 0.0);  // tau = 0 leaves the target untouched
  CHECK(t2.get("a").scalar_value() == 5.0);
  ParameterStore bad("x");
  bad.add("b", Tensor::scalar(0.0));
  CHECK_THROWS_AS(soft_update(bad, online, 0.5), ContractError);
}

TEST_CASE("adam first step, zero grad, and freeze contract") {
  ParameterStore store("x");
  Tensor p = store.add("p", Tensor::scalar(1.0).set_requires_grad(true));
  Adam adam(store, 0.1);

  // g = 1: bias-corrected first step is -lr / (1 + eps)
  p.grad_buffer()[0] = 1.0;
  adam.step();
  CHECK(std::abs(p.scalar_value() - (1.0 - 0.1)) <= 1e-7);

  // absent gradient on a fresh parameter leaves it unchanged
  ParameterStore store2("x");
  Tensor q = store2.add("q", Tensor::scalar(3.0).set_requires_grad(true));
  Adam adam2(store2, 0.1);
  adam2.step();
  CHECK(q.scalar_value() == 3.0);

  // frozen parameter with a nonzero gradient stays untouched
  ParameterStore store3("x");
  Tensor r = store3.add("r", Tensor::scalar(4.0).set_requires_grad(true));
  store3.set_frozen("r", true);
  Adam adam3(store3, 0.1);
  r.grad_buffer()[0] = 5.0;
  adam3.step();
  CHECK(r.scalar_value() == 4.0);
}
