#pragma once

#include <functional>
#include <memory>

#include "cmat/rl.hpp"

namespace cmat {

struct EnvStep {
  JointObservation next_obs;
  double reward = 0.0;
  bool done = false;
};

// Fully observable cooperative Markov game with deterministic transitions and
// a finite horizon, enumerable for the exact DP oracle.
class Env {
 public:
  virtual ~Env() = default;
  virtual int num_agents() const = 0;
  virtual int num_actions() const = 0;
  virtual int obs_width() const = 0;
  virtual int horizon() const = 0;
  virtual JointObservation reset() = 0;
  virtual EnvStep step(const std::vector<int>& actions) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  // Enumerable model (time handled by the oracle, not the state id).
  virtual std::int64_t num_states() const = 0;
  virtual std::int64_t initial_state() const = 0;
  virtual std::int64_t current_state() const = 0;
  virtual std::pair<std::int64_t, double> transition(std::int64_t state,
                                                     const std::vector<int>& actions) const = 0;
  virtual JointObservation observe(std::int64_t state) const = 0;
};

// One-step cooperative matrix game. payoff(row, col) is indexed by agent 2's
// action (row) and agent 1's action (column).
struct MatrixGameSpec {
  RowMat payoff;  // square

  // Two pure equilibria, one Pareto-dominant: [[1, -100], [0, 100]].
  static MatrixGameSpec coordination_game();
};

std::unique_ptr<Env> matrix_env(const MatrixGameSpec& spec);

// Line-world cooperative navigation: agents move {left, stay, right}; each
// step rewards the number of landmarks occupied by exactly one agent minus a
// penalty per agent pair sharing a cell.
struct SpreadGridSpec {
  int agents = 2;
  int length = 5;
  int horizon = 3;
  std::vector<int> landmarks = {1, 3};
  std::vector<int> starts;  // empty = evenly spread
  double collision_penalty = 0.1;

  std::vector<int> resolved_starts() const;
};

std::unique_ptr<Env> spread_env(const SpreadGridSpec& spec);

// Exact optimal discounted return by backward induction over the enumerable
// state space. Refuses joint spaces larger than max_space (states x actions x
// horizon) with a size report.
double oracle_optimal_return(const Env& env, double gamma, std::int64_t max_space = 4'000'000);

// Extracts the greedy policy from the DP tables and rolls it out; by
// construction this should reproduce the optimal return to fp accuracy.
double oracle_greedy_rollout(const Env& env, double gamma, std::int64_t max_space = 4'000'000);

// Enumerates pure-strategy Nash equilibria of a matrix game payoff table.
std::vector<std::pair<int, int>> pure_nash_equilibria(const RowMat& payoff);

// Collects workers x horizon steps. Worker w uses streams[w] for its action
// sampling; workers run independently with their own env instances, and the
// batch is their concatenation in worker order. value_fn supplies V for GAE
// (typically the target critic).
TrajectoryBatch rollout(const Env& env_proto, const JointPolicy& policy,
                        const std::function<double(const JointObservation&)>& value_fn, int workers,
                        int horizon, std::vector<RngStream>& streams);

}  // namespace cmat
