#include "cmat/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cmat/baselines.hpp"
#include "cmat/model.hpp"

namespace cmat {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value '" + v + "' for key '" + key + "' at line " + std::to_string(line));
  }
}

long parse_long(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value '" + v + "' for key '" + key + "' at line " + std::to_string(line));
  }
}

bool parse_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean value '" + v + "' for key '" + key + "' at line " + std::to_string(line));
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Fn>
std::vector<T> parse_list(const std::string& v, Fn fn) {
  std::vector<T> out;
  for (const auto& item : split_csv(v)) out.push_back(fn(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str(), path);
}

ExperimentConfig ExperimentConfig::parse_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  bool env_seen = false;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = raw;
    std::size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ": expected key=value at line " + std::to_string(line));
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (seen.count(key)) {
      throw ConfigError(origin + ": duplicate key '" + key + "' at line " + std::to_string(line));
    }
    seen.insert(key);

    if (key == "model") cfg.model = value;
    else if (key == "m") cfg.m = static_cast<int>(parse_long(value, key, line));
    else if (key == "hidden_dim") cfg.hidden_dim = static_cast<int>(parse_long(value, key, line));
    else if (key == "heads") cfg.heads = static_cast<int>(parse_long(value, key, line));
    else if (key == "encoder_blocks") cfg.encoder_blocks = static_cast<int>(parse_long(value, key, line));
    else if (key == "decoder_blocks") cfg.decoder_blocks = static_cast<int>(parse_long(value, key, line));
    else if (key == "compressor_heads") cfg.compressor_heads = static_cast<int>(parse_long(value, key, line));
    else if (key == "order") cfg.order = parse_list<int>(value, [&](const std::string& v) {
      return static_cast<int>(parse_long(v, key, line));
    });
    else if (key == "env") { cfg.env = value; env_seen = true; }
    else if (key == "payoff") cfg.payoff = parse_list<double>(value, [&](const std::string& v) {
      return parse_double(v, key, line);
    });
    else if (key == "spread_agents") cfg.spread_agents = static_cast<int>(parse_long(value, key, line));
    else if (key == "spread_length") cfg.spread_length = static_cast<int>(parse_long(value, key, line));
    else if (key == "spread_horizon") cfg.spread_horizon = static_cast<int>(parse_long(value, key, line));
    else if (key == "spread_landmarks") cfg.spread_landmarks = parse_list<int>(value, [&](const std::string& v) {
      return static_cast<int>(parse_long(v, key, line));
    });
    else if (key == "spread_starts") cfg.spread_starts = parse_list<int>(value, [&](const std::string& v) {
      return static_cast<int>(parse_long(v, key, line));
    });
    else if (key == "spread_penalty") cfg.spread_penalty = parse_double(value, key, line);
    else if (key == "clip_eps") cfg.ppo.clip_eps = parse_double(value, key, line);
    else if (key == "gamma") cfg.ppo.gamma = parse_double(value, key, line);
    else if (key == "gae_lambda") cfg.ppo.gae_lambda = parse_double(value, key, line);
    else if (key == "entropy_coef") cfg.ppo.entropy_coef = parse_double(value, key, line);
    else if (key == "value_coef") cfg.ppo.value_coef = parse_double(value, key, line);
    else if (key == "epochs") cfg.ppo.epochs = static_cast<int>(parse_long(value, key, line));
    else if (key == "minibatch_size") cfg.ppo.minibatch_size = static_cast<int>(parse_long(value, key, line));
    else if (key == "tau") cfg.ppo.tau = parse_double(value, key, line);
    else if (key == "lr") cfg.ppo.lr = parse_double(value, key, line);
    else if (key == "adv_norm") cfg.ppo.adv_norm = parse_bool(value, key, line);
    else if (key == "seeds") cfg.seeds = parse_list<std::uint64_t>(value, [&](const std::string& v) {
      return static_cast<std::uint64_t>(parse_long(v, key, line));
    });
    else if (key == "total_steps") cfg.total_steps = parse_long(value, key, line);
    else if (key == "workers") cfg.workers = static_cast<int>(parse_long(value, key, line));
    else if (key == "horizon") cfg.horizon = static_cast<int>(parse_long(value, key, line));
    else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_long(value, key, line));
    else if (key == "eval_episodes") cfg.eval_episodes = static_cast<int>(parse_long(value, key, line));
    else if (key == "early_stop_return") cfg.early_stop_return = parse_double(value, key, line);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "eval_mode") cfg.eval_mode = value;
    else if (key == "finetune_mode") cfg.finetune_mode = value;
    else if (key == "init_checkpoint") cfg.init_checkpoint = value;
    else throw ConfigError(origin + ": unknown key '" + key + "' at line " + std::to_string(line));
  }
  if (!env_seen) throw ConfigError(origin + ": missing required key 'env'");

  if (const char* w = std::getenv("CMAT_WORKERS")) {
    cfg.workers = static_cast<int>(parse_long(w, "CMAT_WORKERS", 0));
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> kModels = {"cmat", "cmat-last-consensus", "mat-sequential",
                                                "simultaneous"};
  if (!kModels.count(model)) throw ConfigError("unknown model kind '" + model + "'");
  if (env != "matrix" && env != "spread") throw ConfigError("unknown env '" + env + "'");
  if (env == "matrix") {
    std::size_t k = 0;
    while (k * k < payoff.size()) ++k;
    if (k * k != payoff.size() || payoff.empty()) {
      throw ConfigError("payoff must be a square matrix given row-major");
    }
  }
  if (hidden_dim < 1 || heads < 1 || encoder_blocks < 1 || decoder_blocks < 0) {
    throw ConfigError("model sizes must be positive");
  }
  if (m < -1) throw ConfigError("m must be -1 (agent count) or a non-negative iteration count");
  if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
  if (seeds.empty()) throw ConfigError("need at least one seed");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (workers < 1 || horizon < 1) throw ConfigError("workers and horizon must be positive");
  if (eval_episodes < 0 || eval_every < 0) throw ConfigError("eval settings must be non-negative");
  if (eval_mode != "greedy" && eval_mode != "sample") throw ConfigError("eval_mode must be greedy or sample");
  ppo.validate();
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  auto fmt_i = [](const int& v) { return std::to_string(v); };
  os << "model = " << model << "\n";
  os << "env = " << env << "\n";
  os << "m = " << m << "\n";
  os << "hidden_dim = " << hidden_dim << "\n";
  os << "heads = " << heads << "\n";
  os << "encoder_blocks = " << encoder_blocks << "\n";
  os << "decoder_blocks = " << decoder_blocks << "\n";
  os << "compressor_heads = " << compressor_heads << "\n";
  if (!order.empty()) os << "order = " << join<int>(order, fmt_i) << "\n";
  os << "payoff = " << join<double>(payoff, [](const double& v) { return fmt_double(v); }) << "\n";
  os << "spread_agents = " << spread_agents << "\n";
  os << "spread_length = " << spread_length << "\n";
  os << "spread_horizon = " << spread_horizon << "\n";
  os << "spread_landmarks = " << join<int>(spread_landmarks, fmt_i) << "\n";
  if (!spread_starts.empty()) os << "spread_starts = " << join<int>(spread_starts, fmt_i) << "\n";
  os << "spread_penalty = " << fmt_double(spread_penalty) << "\n";
  os << "clip_eps = " << fmt_double(ppo.clip_eps) << "\n";
  os << "gamma = " << fmt_double(ppo.gamma) << "\n";
  os << "gae_lambda = " << fmt_double(ppo.gae_lambda) << "\n";
  os << "entropy_coef = " << fmt_double(ppo.entropy_coef) << "\n";
  os << "value_coef = " << fmt_double(ppo.value_coef) << "\n";
  os << "epochs = " << ppo.epochs << "\n";
  os << "minibatch_size = " << ppo.minibatch_size << "\n";
  os << "tau = " << fmt_double(ppo.tau) << "\n";
  os << "lr = " << fmt_double(ppo.lr) << "\n";
  os << "adv_norm = " << (ppo.adv_norm ? "true" : "false") << "\n";
  os << "seeds = "
     << join<std::uint64_t>(seeds, [](const std::uint64_t& v) { return std::to_string(v); }) << "\n";
  os << "total_steps = " << total_steps << "\n";
  os << "workers = " << workers << "\n";
  os << "horizon = " << horizon << "\n";
  os << "eval_every = " << eval_every << "\n";
  os << "eval_episodes = " << eval_episodes << "\n";
  if (!std::isnan(early_stop_return)) os << "early_stop_return = " << fmt_double(early_stop_return) << "\n";
  os << "out = " << out_dir << "\n";
  os << "eval_mode = " << eval_mode << "\n";
  if (!finetune_mode.empty()) os << "finetune_mode = " << finetune_mode << "\n";
  if (!init_checkpoint.empty()) os << "init_checkpoint = " << init_checkpoint << "\n";
  return os.str();
}

std::unique_ptr<Env> ExperimentConfig::make_env() const {
  if (env == "matrix") {
    std::size_t k = 0;
    while (k * k < payoff.size()) ++k;
    MatrixGameSpec spec;
    spec.payoff = RowMat(static_cast<int>(k), static_cast<int>(k));
    for (std::size_t i = 0; i < payoff.size(); ++i) {
      spec.payoff(static_cast<int>(i / k), static_cast<int>(i % k)) = payoff[i];
    }
    return matrix_env(spec);
  }
  SpreadGridSpec spec;
  spec.agents = spread_agents;
  spec.length = spread_length;
  spec.horizon = spread_horizon;
  spec.landmarks = spread_landmarks;
  spec.starts = spread_starts;
  spec.collision_penalty = spread_penalty;
  return spread_env(spec);
}

std::unique_ptr<JointPolicy> ExperimentConfig::make_policy(const Env& e, std::uint64_t seed) const {
  if (model == "cmat" || model == "cmat-last-consensus") {
    CmatConfig mc;
    mc.agents = e.num_agents();
    mc.obs_dim = e.obs_width();
    mc.num_actions = e.num_actions();
    mc.d = hidden_dim;
    mc.heads = heads;
    mc.encoder_blocks = encoder_blocks;
    mc.decoder_blocks = decoder_blocks;
    mc.compressor_heads = compressor_heads;
    mc.m = m;
    mc.last_consensus = model == "cmat-last-consensus";
    return std::make_unique<CmatPolicy>(mc, seed);
  }
  if (model == "mat-sequential") {
    SequentialConfig sc;
    sc.agents = e.num_agents();
    sc.obs_dim = e.obs_width();
    sc.num_actions = e.num_actions();
    sc.d = hidden_dim;
    sc.heads = heads;
    sc.encoder_blocks = encoder_blocks;
    sc.decoder_blocks = decoder_blocks;
    sc.order = order;
    return std::make_unique<SequentialPolicy>(sc, seed);
  }
  SimultaneousConfig pc;
  pc.agents = e.num_agents();
  pc.obs_dim = e.obs_width();
  pc.num_actions = e.num_actions();
  pc.d = hidden_dim;
  pc.heads = heads;
  pc.encoder_blocks = encoder_blocks;
  pc.compressor_heads = compressor_heads;
  return std::make_unique<SimultaneousPolicy>(pc, seed);
}

TrainerConfig ExperimentConfig::trainer_config(std::uint64_t seed) const {
  TrainerConfig tc;
  tc.ppo = ppo;
  tc.workers = workers;
  tc.horizon = horizon;
  tc.total_steps = total_steps;
  tc.eval_every = eval_every;
  tc.eval_episodes = eval_episodes;
  tc.early_stop_return = early_stop_return;
  tc.seed = seed;
  return tc;
}

}  // namespace cmat
