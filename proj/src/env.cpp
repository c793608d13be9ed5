#include "cmat/env.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace cmat {

namespace {

std::vector<int> decode_joint_action(std::int64_t index, int agents, int num_actions) {
  std::vector<int> actions(static_cast<std::size_t>(agents));
  for (int i = 0; i < agents; ++i) {
    actions[static_cast<std::size_t>(i)] = static_cast<int>(index % num_actions);
    index /= num_actions;
  }
  return actions;
}

class MatrixGameEnv final : public Env {
 public:
  explicit MatrixGameEnv(MatrixGameSpec spec) : spec_(std::move(spec)) {
    if (spec_.payoff.rows() != spec_.payoff.cols() || spec_.payoff.rows() < 1) {
      throw ConfigError("matrix game payoff must be a non-empty square matrix");
    }
    if (!spec_.payoff.allFinite()) throw ConfigError("matrix game payoff must be finite");
  }

  int num_agents() const override { return 2; }
  int num_actions() const override { return static_cast<int>(spec_.payoff.rows()); }
  int obs_width() const override { return 1 + num_agents(); }
  int horizon() const override { return 1; }

  JointObservation reset() override {
    done_ = false;
    return observe(0);
  }

  EnvStep step(const std::vector<int>& actions) override {
    if (done_) throw ContractError("step: episode already finished");
    validate_actions(actions);
    done_ = true;
    EnvStep out;
    out.reward = spec_.payoff(actions[1], actions[0]);  // rows: agent 2, cols: agent 1
    out.done = true;
    out.next_obs = observe(0);
    return out;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<MatrixGameEnv>(spec_); }

  std::int64_t num_states() const override { return 1; }
  std::int64_t initial_state() const override { return 0; }
  std::int64_t current_state() const override { return 0; }

  std::pair<std::int64_t, double> transition(std::int64_t, const std::vector<int>& actions) const override {
    return {0, spec_.payoff(actions[1], actions[0])};
  }

  JointObservation observe(std::int64_t) const override {
    // single-state game: a constant bias plus the agent one-hot keeps the
    // network input non-degenerate
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < num_agents(); ++i) {
      std::vector<double> r(static_cast<std::size_t>(obs_width()), 0.0);
      r[0] = 1.0;
      r[static_cast<std::size_t>(1 + i)] = 1.0;
      rows.push_back(std::move(r));
    }
    auto obs = JointObservation::from_rows(rows);
    obs.state_key = 0;
    return obs;
  }

 private:
  void validate_actions(const std::vector<int>& actions) const {
    if (static_cast<int>(actions.size()) != num_agents()) throw ContractError("step: wrong action count");
    for (int a : actions) {
      if (a < 0 || a >= num_actions()) throw ContractError("step: action index out of range");
    }
  }

  MatrixGameSpec spec_;
  bool done_ = false;
};

class SpreadGridEnv final : public Env {
 public:
  explicit SpreadGridEnv(SpreadGridSpec spec) : spec_(std::move(spec)) {
    if (spec_.agents < 1) throw ConfigError("spread: need at least one agent");
    if (spec_.agents > spec_.length) throw ConfigError("spread: more agents than cells");
    if (spec_.horizon < 1) throw ConfigError("spread: horizon must be at least 1");
    for (int l : spec_.landmarks) {
      if (l < 0 || l >= spec_.length) throw ConfigError("spread: landmark outside [0, length)");
    }
    starts_ = spec_.resolved_starts();
    for (int s : starts_) {
      if (s < 0 || s >= spec_.length) throw ConfigError("spread: start position outside [0, length)");
    }
    positions_ = starts_;
  }

  int num_agents() const override { return spec_.agents; }
  int num_actions() const override { return 3; }  // left, stay, right
  int obs_width() const override {
    return spec_.agents + static_cast<int>(spec_.landmarks.size()) + spec_.agents;
  }
  int horizon() const override { return spec_.horizon; }

  JointObservation reset() override {
    positions_ = starts_;
    t_ = 0;
    return observe(current_state());
  }

  EnvStep step(const std::vector<int>& actions) override {
    if (t_ >= spec_.horizon) throw ContractError("step: episode already finished");
    if (static_cast<int>(actions.size()) != spec_.agents) throw ContractError("step: wrong action count");
    auto [next, reward] = transition(current_state(), actions);
    decode_state(next, positions_);
    ++t_;
    EnvStep out;
    out.reward = reward;
    out.done = t_ >= spec_.horizon;
    out.next_obs = observe(next);
    return out;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<SpreadGridEnv>(spec_); }

  std::int64_t num_states() const override {
    std::int64_t n = 1;
    for (int i = 0; i < spec_.agents; ++i) n *= spec_.length;
    return n;
  }

  std::int64_t initial_state() const override { return encode_state(starts_); }
  std::int64_t current_state() const override { return encode_state(positions_); }

  std::pair<std::int64_t, double> transition(std::int64_t state,
                                             const std::vector<int>& actions) const override {
    std::vector<int> pos(static_cast<std::size_t>(spec_.agents));
    decode_state(state, pos);
    for (int i = 0; i < spec_.agents; ++i) {
      int a = actions[static_cast<std::size_t>(i)];
      if (a < 0 || a > 2) throw ContractError("step: action index out of range");
      int delta = a - 1;
      pos[static_cast<std::size_t>(i)] =
          std::clamp(pos[static_cast<std::size_t>(i)] + delta, 0, spec_.length - 1);
    }
    double reward = 0.0;
    for (int l : spec_.landmarks) {
      int occupants = 0;
      for (int p : pos) occupants += p == l ? 1 : 0;
      if (occupants == 1) reward += 1.0;
    }
    for (int i = 0; i < spec_.agents; ++i) {
      for (int j = i + 1; j < spec_.agents; ++j) {
        if (pos[static_cast<std::size_t>(i)] == pos[static_cast<std::size_t>(j)]) {
          reward -= spec_.collision_penalty;
        }
      }
    }
    return {encode_state(pos), reward};
  }

  JointObservation observe(std::int64_t state) const override {
    std::vector<int> pos(static_cast<std::size_t>(spec_.agents));
    decode_state(state, pos);
    double scale = spec_.length > 1 ? 1.0 / (spec_.length - 1) : 1.0;
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < spec_.agents; ++i) {
      std::vector<double> r;
      for (int p : pos) r.push_back(p * scale);
      for (int l : spec_.landmarks) r.push_back(l * scale);
      for (int k = 0; k < spec_.agents; ++k) r.push_back(k == i ? 1.0 : 0.0);
      rows.push_back(std::move(r));
    }
    auto obs = JointObservation::from_rows(rows);
    obs.state_key = state;
    return obs;
  }

 private:
  std::int64_t encode_state(const std::vector<int>& pos) const {
    std::int64_t s = 0;
    for (int i = spec_.agents - 1; i >= 0; --i) s = s * spec_.length + pos[static_cast<std::size_t>(i)];
    return s;
  }

  void decode_state(std::int64_t state, std::vector<int>& pos) const {
    for (int i = 0; i < spec_.agents; ++i) {
      pos[static_cast<std::size_t>(i)] = static_cast<int>(state % spec_.length);
      state /= spec_.length;
    }
  }

  SpreadGridSpec spec_;
  std::vector<int> starts_;
  std::vector<int> positions_;
  int t_ = 0;
};

// Backward-induction tables V[t][s] and the greedy joint action per (t, s).
struct DpTables {
  std::vector<std::vector<double>> value;
  std::vector<std::vector<std::int64_t>> greedy;
};

DpTables solve_dp(const Env& env, double gamma, std::int64_t max_space) {
  std::int64_t states = env.num_states();
  std::int64_t joint_actions = 1;
  for (int i = 0; i < env.num_agents(); ++i) joint_actions *= env.num_actions();
  std::int64_t space = states * joint_actions * env.horizon();
  if (space > max_space) {
    throw ContractError("oracle: state-action space too large: " + std::to_string(states) + " states x " +
                        std::to_string(joint_actions) + " joint actions x " +
                        std::to_string(env.horizon()) + " steps = " + std::to_string(space) +
                        " > bound " + std::to_string(max_space));
  }
  DpTables dp;
  dp.value.assign(static_cast<std::size_t>(env.horizon()) + 1,
                  std::vector<double>(static_cast<std::size_t>(states), 0.0));
  dp.greedy.assign(static_cast<std::size_t>(env.horizon()),
                   std::vector<std::int64_t>(static_cast<std::size_t>(states), 0));
  for (int t = env.horizon() - 1; t >= 0; --t) {
    for (std::int64_t s = 0; s < states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      std::int64_t best_a = 0;
      for (std::int64_t a = 0; a < joint_actions; ++a) {
        auto actions = decode_joint_action(a, env.num_agents(), env.num_actions());
        auto [next, reward] = env.transition(s, actions);
        double q = reward + gamma * dp.value[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(next)];
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      dp.value[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] = best;
      dp.greedy[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] = best_a;
    }
  }
  return dp;
}

}  // namespace

MatrixGameSpec MatrixGameSpec::coordination_game() {
  MatrixGameSpec spec;
  spec.payoff = RowMat(2, 2);
  spec.payoff << 1.0, -100.0, 0.0, 100.0;
  return spec;
}

std::vector<int> SpreadGridSpec::resolved_starts() const {
  if (!starts.empty()) {
    if (static_cast<int>(starts.size()) != agents) {
      throw ConfigError("spread: starts must list one position per agent");
    }
    return starts;
  }
  std::vector<int> out(static_cast<std::size_t>(agents));
  for (int i = 0; i < agents; ++i) {
    out[static_cast<std::size_t>(i)] =
        agents == 1 ? 0 : static_cast<int>(static_cast<std::int64_t>(i) * (length - 1) / (agents - 1));
  }
  return out;
}

std::unique_ptr<Env> matrix_env(const MatrixGameSpec& spec) { return std::make_unique<MatrixGameEnv>(spec); }

std::unique_ptr<Env> spread_env(const SpreadGridSpec& spec) { return std::make_unique<SpreadGridEnv>(spec); }

double oracle_optimal_return(const Env& env, double gamma, std::int64_t max_space) {
  DpTables dp = solve_dp(env, gamma, max_space);
  return dp.value[0][static_cast<std::size_t>(env.initial_state())];
}

double oracle_greedy_rollout(const Env& env, double gamma, std::int64_t max_space) {
  DpTables dp = solve_dp(env, gamma, max_space);
  auto copy = env.clone();
  copy->reset();
  double ret = 0.0;
  double discount = 1.0;
  for (int t = 0; t < copy->horizon(); ++t) {
    std::int64_t s = copy->current_state();
    auto actions = decode_joint_action(dp.greedy[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)],
                                       copy->num_agents(), copy->num_actions());
    EnvStep step = copy->step(actions);
    ret += discount * step.reward;
    discount *= gamma;
    if (step.done) break;
  }
  return ret;
}

std::vector<std::pair<int, int>> pure_nash_equilibria(const RowMat& payoff) {
  std::vector<std::pair<int, int>> out;
  for (int a1 = 0; a1 < payoff.cols(); ++a1) {
    for (int a2 = 0; a2 < payoff.rows(); ++a2) {
      bool nash = true;
      for (int d = 0; d < payoff.cols(); ++d) {
        if (payoff(a2, d) > payoff(a2, a1)) nash = false;
      }
      for (int d = 0; d < payoff.rows(); ++d) {
        if (payoff(d, a1) > payoff(a2, a1)) nash = false;
      }
      if (nash) out.emplace_back(a1, a2);
    }
  }
  return out;
}

TrajectoryBatch rollout(const Env& env_proto, const JointPolicy& policy,
                        const std::function<double(const JointObservation&)>& value_fn, int workers,
                        int horizon, std::vector<RngStream>& streams) {
  if (workers < 1 || horizon < 1) throw ContractError("rollout: workers and horizon must be positive");
  if (static_cast<int>(streams.size()) != workers) {
    throw ContractError("rollout: need one RNG stream per worker");
  }
  if (env_proto.num_agents() != policy.num_agents() || env_proto.num_actions() != policy.num_actions() ||
      env_proto.obs_width() != policy.obs_width()) {
    throw ContractError("rollout: policy and environment disagree on agents/actions/observation width");
  }
  // Policy and critic outputs are pure functions of the observation while
  // parameters stay fixed, so both are memoized on the env's state id.
  bool cacheable = policy.distribution_depends_only_on_obs();
  std::unordered_map<std::int64_t, RowMat> table_cache;
  std::unordered_map<std::int64_t, double> value_cache;
  auto cached_value = [&](const JointObservation& obs) {
    if (obs.state_key < 0) return value_fn(obs);
    auto it = value_cache.find(obs.state_key);
    if (it == value_cache.end()) it = value_cache.emplace(obs.state_key, value_fn(obs)).first;
    return it->second;
  };
  auto sample_cached = [&](const JointObservation& obs, RngStream& rng) {
    auto it = table_cache.find(obs.state_key);
    if (it == table_cache.end()) {
      it = table_cache.emplace(obs.state_key, policy.action_log_prob_table(obs)).first;
    }
    const RowMat& table = it->second;
    ActResult act;
    int agents = policy.num_agents();
    int num_actions = policy.num_actions();
    act.actions.resize(static_cast<std::size_t>(agents));
    act.per_agent_logp.resize(static_cast<std::size_t>(agents));
    for (int i = 0; i < agents; ++i) {
      int a = rng.sample_logits(table.data() + i * num_actions, num_actions);
      act.actions[static_cast<std::size_t>(i)] = a;
      act.per_agent_logp[static_cast<std::size_t>(i)] = table(i, a);
      act.joint_logp += table(i, a);
    }
    return act;
  };

  TrajectoryBatch batch;
  for (int w = 0; w < workers; ++w) {
    auto env = env_proto.clone();
    JointObservation obs = env->reset();
    int begin = batch.size();
    bool last_done = false;
    for (int t = 0; t < horizon; ++t) {
      ActResult act = cacheable && obs.state_key >= 0
                          ? sample_cached(obs, streams[static_cast<std::size_t>(w)])
                          : policy.act(obs, ActMode::Sample, streams[static_cast<std::size_t>(w)]);
      EnvStep step = env->step(act.actions);
      batch.obs.push_back(obs);
      batch.actions.push_back(act.actions);
      batch.rewards.push_back(step.reward);
      batch.dones.push_back(step.done ? 1 : 0);
      batch.values.push_back(cached_value(obs));
      batch.behavior_joint_logp.push_back(act.joint_logp);
      batch.behavior_agent_logp.push_back(act.per_agent_logp);
      last_done = step.done;
      obs = step.done ? env->reset() : step.next_obs;
    }
    batch.segments.emplace_back(begin, batch.size());
    batch.bootstrap_values.push_back(last_done ? 0.0 : cached_value(obs));
  }
  return batch;
}

}  // namespace cmat
