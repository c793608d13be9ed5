#include <cmath>

#include "cmat/env.hpp"
#include "cmat/model.hpp"
#include "doctest.h"

using namespace cmat;

namespace {

CmatPolicy tiny_policy(const Env& env, std::uint64_t seed) {
  CmatConfig cfg;
  cfg.agents = env.num_agents();
  cfg.obs_dim = env.obs_width();
  cfg.num_actions = env.num_actions();
  cfg.d = 8;
  cfg.heads = 2;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.compressor_heads = 2;
  cfg.m = 1;
  return CmatPolicy(cfg, seed);
}

}  // namespace

TEST_CASE("matrix game payoff orientation matches the table") {
  auto env = matrix_env(MatrixGameSpec::coordination_game());
  // (a1, a2) pairs -> reward: rows are agent 2, columns agent 1
  auto play = [&](int a1, int a2) {
    auto e = env->clone();
    e->reset();
    return e->step({a1, a2});
  };
  CHECK(play(0, 0).reward == 1.0);     // (A, A)
  CHECK(play(1, 0).reward == -100.0);  // (B, A)
  CHECK(play(0, 1).reward == 0.0);     // (A, B)
  CHECK(play(1, 1).reward == 100.0);   // (B, B)
  CHECK(play(0, 0).done);
}

TEST_CASE("matrix game optimum and pure Nash equilibria") {
  auto env = matrix_env(MatrixGameSpec::coordination_game());
  CHECK(oracle_optimal_return(*env, 0.99) == 100.0);
  CHECK(oracle_greedy_rollout(*env, 0.99) == 100.0);

  auto ne = pure_nash_equilibria(MatrixGameSpec::coordination_game().payoff);
  REQUIRE(ne.size() == 2);
  CHECK(ne[0] == std::pair<int, int>(0, 0));  // (A, A)
  CHECK(ne[1] == std::pair<int, int>(1, 1));  // (B, B)

  // any single-step game: the optimum is the max payoff entry
  MatrixGameSpec odd;
  odd.payoff = RowMat(2, 2);
  odd.payoff << -3.0, 7.0, 2.5, -1.0;
  CHECK(oracle_optimal_return(*matrix_env(odd), 0.5) == 7.0);
}

TEST_CASE("spread rewards: landmarks singly occupied and collision penalty") {
  SpreadGridSpec spec;
  spec.agents = 2;
  spec.length = 5;
  spec.horizon = 3;
  spec.landmarks = {1, 3};
  spec.collision_penalty = 0.1;

  SUBCASE("agents on distinct landmarks staying put earn one per landmark") {
    spec.starts = {1, 3};
    auto env = spread_env(spec);
    env->reset();
    auto step = env->step({1, 1});  // both stay
    CHECK(step.reward == 2.0);
  }

  SUBCASE("two agents sharing a cell pay the pair penalty") {
    spec.starts = {2, 2};
    auto env = spread_env(spec);
    env->reset();
    auto step = env->step({1, 1});
    CHECK(step.reward == doctest::Approx(-0.1).epsilon(1e-15));
  }

  SUBCASE("moves clamp at the boundary and the horizon terminates episodes") {
    spec.starts = {0, 4};
    auto env = spread_env(spec);
    env->reset();
    auto s1 = env->step({0, 2});  // left off the edge, right off the edge
    CHECK_FALSE(s1.done);
    auto s2 = env->step({1, 1});
    auto s3 = env->step({1, 1});
    CHECK(s3.done);
    CHECK_THROWS_AS(env->step({1, 1}), ContractError);
  }
}

TEST_CASE("spread oracle matches the closed-form optimum 2(1 + g + g^2)") {
  SpreadGridSpec spec;  // defaults: n=2, L=5, T=3, landmarks {1,3}, starts {0,4}
  auto env = spread_env(spec);
  CHECK(env->initial_state() == env->clone()->reset().state_key);
  double gamma = 0.99;
  double expected = 2.0 * (1.0 + gamma + gamma * gamma);  // reach both landmarks in one move
  double optimal = oracle_optimal_return(*env, gamma);
  CHECK(std::abs(optimal - expected) <= 1e-9);
  CHECK(std::abs(oracle_greedy_rollout(*env, gamma) - optimal) <= 1e-9);
}

TEST_CASE("oracle refuses oversized spaces with a size report") {
  SpreadGridSpec big;
  big.agents = 8;
  big.length = 12;
  big.horizon = 5;
  big.landmarks = {1, 3, 5, 7, 9, 11, 2, 4};
  auto env = spread_env(big);
  CHECK_THROWS_WITH_AS(oracle_optimal_return(*env, 0.99), doctest::Contains("too large"), ContractError);
}

TEST_CASE("environment transitions are deterministic") {
  SpreadGridSpec spec;
  auto env1 = spread_env(spec);
  auto env2 = spread_env(spec);
  env1->reset();
  env2->reset();
  for (int t = 0; t < 3; ++t) {
    auto s1 = env1->step({2, 0});
    auto s2 = env2->step({2, 0});
    CHECK(s1.reward == s2.reward);
    CHECK(s1.done == s2.done);
    for (int i = 0; i < s1.next_obs.features.size(); ++i) {
      CHECK(s1.next_obs.features.values()[i] == s2.next_obs.features.values()[i]);
    }
  }
}

TEST_CASE("rollout bookkeeping and seeded determinism across 8 workers") {
  auto env = matrix_env(MatrixGameSpec::coordination_game());
  CmatPolicy policy = tiny_policy(*env, 5);
  auto value_fn = [](const JointObservation&) { return 0.0; };

  auto collect = [&]() {
    std::vector<RngStream> streams;
    for (int w = 0; w < 8; ++w) streams.emplace_back(123, 100 + w);
    return rollout(*env, policy, value_fn, 8, 4, streams);
  };
  TrajectoryBatch b1 = collect();
  TrajectoryBatch b2 = collect();
  CHECK(b1.size() == 8 * 4);  // total steps = workers x horizon
  CHECK(b1.segments.size() == 8);
  REQUIRE(b2.size() == b1.size());
  for (int t = 0; t < b1.size(); ++t) {
    auto ti = static_cast<std::size_t>(t);
    CHECK(b1.actions[ti] == b2.actions[ti]);
    CHECK(b1.rewards[ti] == b2.rewards[ti]);
    CHECK(b1.behavior_joint_logp[ti] == b2.behavior_joint_logp[ti]);
  }
  // matrix game episodes are one step long, all dones set
  for (int t = 0; t < b1.size(); ++t) CHECK(b1.dones[static_cast<std::size_t>(t)] == 1);
}

TEST_CASE("a deterministic policy yields one repeated transition under rollout") {
  auto env = matrix_env(MatrixGameSpec::coordination_game());
  CmatPolicy policy = tiny_policy(*env, 9);
  // a saturated actor head makes sampling effectively deterministic
  for (auto& e : policy.params().entries()) {
    if (e.name == "actor_mlp.l1.w") {
      for (int i = 0; i < e.tensor.size(); ++i) e.tensor.values()[i] = 0.0;
    }
    if (e.name == "actor_mlp.l1.b") {
      e.tensor.values()[0] = 50.0;  // action A for every agent
      e.tensor.values()[1] = -50.0;
    }
  }
  auto value_fn = [](const JointObservation&) { return 0.0; };
  std::vector<RngStream> streams;
  streams.emplace_back(5, 0);
  TrajectoryBatch b = rollout(*env, policy, value_fn, 1, 6, streams);
  for (int t = 0; t < b.size(); ++t) {
    CHECK(b.actions[static_cast<std::size_t>(t)] == std::vector<int>{0, 0});
    CHECK(b.rewards[static_cast<std::size_t>(t)] == 1.0);
  }
}

TEST_CASE("rollout validates the policy/env pairing and stream count") {
  auto env = matrix_env(MatrixGameSpec::coordination_game());
  CmatPolicy policy = tiny_policy(*env, 6);
  auto value_fn = [](const JointObservation&) { return 0.0; };
  std::vector<RngStream> streams;
  streams.emplace_back(1, 0);
  CHECK_THROWS_AS(rollout(*env, policy, value_fn, 2, 4, streams), ContractError);

  SpreadGridSpec spec;
  auto other = spread_env(spec);
  std::vector<RngStream> two;
  two.emplace_back(1, 0);
  two.emplace_back(1, 1);
  CHECK_THROWS_AS(rollout(*other, policy, value_fn, 2, 4, two), ContractError);
}

TEST_CASE("bad environment specs are rejected") {
  SpreadGridSpec bad;
  bad.agents = 6;
  bad.length = 5;
  CHECK_THROWS_AS(spread_env(bad), ConfigError);
  SpreadGridSpec bad2;
  bad2.landmarks = {7};
  CHECK_THROWS_AS(spread_env(bad2), ConfigError);
  MatrixGameSpec empty;
  empty.payoff = RowMat(2, 3);
  CHECK_THROWS_AS(matrix_env(empty), ConfigError);
}
