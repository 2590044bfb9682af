// Training harness: configuration, environment/ensemble factories, the
// outer training loop (rollout collection + policy update), deterministic
// evaluation, metrics CSV emission, and checkpoint-backed runs.
#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include "brpo/baselines.hpp"
#include "brpo/envs/cartpole.hpp"
#include "brpo/envs/doors.hpp"
#include "brpo/envs/maze.hpp"
#include "brpo/envs/tree.hpp"
#include "brpo/experts.hpp"
#include "brpo/policyopt.hpp"
#include "brpo/residual.hpp"

namespace brpo {

// ----- Configuration -----

struct TrainConfig {
  std::string env = "doors";
  std::string algo = "brpo";  // brpo | bpo | upmle | psrl
  // gaussian_combine | map_expert | random_sensing(p) | scheduled_sensing(t)
  std::string ensemble = "random_sensing(0.5)";
  int n_itr = 200;
  int n_sample = 50;
  int horizon = 0;  // 0: environment default
  uint64_t seed = 0;
  double bonus_epsilon = 0.0;
  std::string layout;     // doors only: builtin name or layout file
  int tree_depth = 2;     // tree only
  double noise_scale = 1.0;  // cartpole only

  // Policy input layout; -1 resolves to the algorithm's default.
  int include_belief = -1;
  int include_map_params = -1;
  int include_recommendation = -1;

  int hidden = 64;
  double log_std_init = -1.0;
  PpoConfig ppo;
  double gamma = 0.0;  // 0: environment default
  double lambda = 0.95;
  int eval_every = 10;
  int eval_episodes = 20;
  uint64_t eval_seed = 1234;
  int worker_count = 1;

  // Resolves -1 layout flags to the algorithm defaults.
  void finalize() {
    int b = 1, m = 0, r = 1;
    if (algo == "bpo") r = 0;
    if (algo == "upmle") {
      b = 0;
      m = 1;
      r = 0;
    }
    if (include_belief < 0) include_belief = b;
    if (include_map_params < 0) include_map_params = m;
    if (include_recommendation < 0) include_recommendation = r;
  }

  void validate() const {
    if (algo != "brpo" && algo != "bpo" && algo != "upmle" && algo != "psrl")
      throw Error("unknown algo: " + algo);
    if (n_itr < 0) throw Error("n_itr must be >= 0");
    if (n_sample < 1) throw Error("n_sample must be >= 1");
    if (horizon < 0) throw Error("horizon must be >= 0");
    if (hidden < 1) throw Error("hidden width must be >= 1");
    if (eval_every < 1) throw Error("eval_every must be >= 1");
    if (eval_episodes < 1) throw Error("eval_episodes must be >= 1");
    if (worker_count < 1) throw Error("worker_count must be >= 1");
    if (lambda < 0.0 || lambda > 1.0) throw Error("lambda must be in [0, 1]");
    if (gamma < 0.0 || gamma > 1.0) throw Error("gamma must be in [0, 1]");
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["env"] = env;
    m["algo"] = algo;
    m["ensemble"] = ensemble;
    m["n_itr"] = std::to_string(n_itr);
    m["n_sample"] = std::to_string(n_sample);
    m["horizon"] = std::to_string(horizon);
    m["seed"] = std::to_string(seed);
    m["bonus_epsilon"] = format_double(bonus_epsilon);
    m["layout"] = layout;
    m["tree_depth"] = std::to_string(tree_depth);
    m["noise_scale"] = format_double(noise_scale);
    m["include_belief"] = std::to_string(include_belief);
    m["include_map_params"] = std::to_string(include_map_params);
    m["include_recommendation"] = std::to_string(include_recommendation);
    m["hidden"] = std::to_string(hidden);
    m["log_std_init"] = format_double(log_std_init);
    m["clip_ratio"] = format_double(ppo.clip_ratio);
    m["epochs"] = std::to_string(ppo.epochs);
    m["minibatch"] = std::to_string(ppo.minibatch);
    m["learning_rate"] = format_double(ppo.learning_rate);
    m["kl_stop"] = format_double(ppo.kl_stop);
    m["entropy_coef"] = format_double(ppo.entropy_coef);
    m["value_coef"] = format_double(ppo.value_coef);
    m["kl_coef"] = format_double(ppo.kl_coef);
    m["gamma"] = format_double(gamma);
    m["lambda"] = format_double(lambda);
    m["eval_every"] = std::to_string(eval_every);
    m["eval_episodes"] = std::to_string(eval_episodes);
    m["eval_seed"] = std::to_string(eval_seed);
    m["worker_count"] = std::to_string(worker_count);
    return m;
  }

  static TrainConfig from_map(const std::map<std::string, std::string>& m) {
    TrainConfig c;
    auto to_int = [](const std::string& k, const std::string& v) {
      try {
        return std::stoi(v);
      } catch (const std::exception&) {
        throw Error("config key '" + k + "': bad integer '" + v + "'");
      }
    };
    auto to_u64 = [](const std::string& k, const std::string& v) {
      try {
        return static_cast<uint64_t>(std::stoull(v));
      } catch (const std::exception&) {
        throw Error("config key '" + k + "': bad integer '" + v + "'");
      }
    };
    auto to_dbl = [](const std::string& k, const std::string& v) {
      try {
        return parse_double(v);
      } catch (const std::exception&) {
        throw Error("config key '" + k + "': bad number '" + v + "'");
      }
    };
    for (const auto& [k, v] : m) {
      if (k == "env") c.env = v;
      else if (k == "algo") c.algo = v;
      else if (k == "ensemble") c.ensemble = v;
      else if (k == "n_itr") c.n_itr = to_int(k, v);
      else if (k == "n_sample") c.n_sample = to_int(k, v);
      else if (k == "horizon") c.horizon = to_int(k, v);
      else if (k == "seed") c.seed = to_u64(k, v);
      else if (k == "bonus_epsilon") c.bonus_epsilon = to_dbl(k, v);
      else if (k == "layout") c.layout = v;
      else if (k == "tree_depth") c.tree_depth = to_int(k, v);
      else if (k == "noise_scale") c.noise_scale = to_dbl(k, v);
      else if (k == "include_belief") c.include_belief = to_int(k, v);
      else if (k == "include_map_params") c.include_map_params = to_int(k, v);
      else if (k == "include_recommendation")
        c.include_recommendation = to_int(k, v);
      else if (k == "hidden") c.hidden = to_int(k, v);
      else if (k == "log_std_init") c.log_std_init = to_dbl(k, v);
      else if (k == "clip_ratio") c.ppo.clip_ratio = to_dbl(k, v);
      else if (k == "epochs") c.ppo.epochs = to_int(k, v);
      else if (k == "minibatch") c.ppo.minibatch = to_int(k, v);
      else if (k == "learning_rate") c.ppo.learning_rate = to_dbl(k, v);
      else if (k == "kl_stop") c.ppo.kl_stop = to_dbl(k, v);
      else if (k == "entropy_coef") c.ppo.entropy_coef = to_dbl(k, v);
      else if (k == "value_coef") c.ppo.value_coef = to_dbl(k, v);
      else if (k == "kl_coef") c.ppo.kl_coef = to_dbl(k, v);
      else if (k == "gamma") c.gamma = to_dbl(k, v);
      else if (k == "lambda") c.lambda = to_dbl(k, v);
      else if (k == "eval_every") c.eval_every = to_int(k, v);
      else if (k == "eval_episodes") c.eval_episodes = to_int(k, v);
      else if (k == "eval_seed") c.eval_seed = to_u64(k, v);
      else if (k == "worker_count") c.worker_count = to_int(k, v);
      else throw Error("unknown config key: " + k);
    }
    c.finalize();
    c.validate();
    return c;
  }

  // Canonical resolved text: sorted key=value lines.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
    return out;
  }

  uint64_t hash() const { return fnv1a64(resolved_text()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline void parse_config_into(const std::string& path,
                              std::map<std::string, std::string>& out,
                              int depth) {
  if (depth > 16) throw Error("config include depth exceeded at " + path);
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      std::filesystem::path inc = trim(line.substr(8));
      if (inc.is_relative())
        inc = std::filesystem::path(path).parent_path() / inc;
      parse_config_into(inc.string(), out, depth + 1);
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw Error(path + ":" + std::to_string(lineno) + ": empty key");
    out[key] = value;  // later assignments override earlier ones
  }
}

}  // namespace detail

// key=value lines, '#' comments, and `include <path>` (relative to the
// including file). Later keys override earlier ones.
inline TrainConfig load_config(const std::string& path) {
  std::map<std::string, std::string> kv;
  detail::parse_config_into(path, kv, 0);
  return TrainConfig::from_map(kv);
}

// ----- Environment / ensemble factories -----

inline std::shared_ptr<const Env> make_env(const TrainConfig& cfg) {
  if (!cfg.layout.empty() && cfg.env != "doors")
    throw Error("layout override is only supported for doors");
  if (cfg.env == "tree") return std::make_shared<TreeEnv>(cfg.tree_depth);
  if (cfg.env == "doors") {
    Layout lay = cfg.layout.empty() ? Layout::builtin("doors")
                                    : Layout::load(cfg.layout);
    return std::make_shared<DoorsEnv>(std::move(lay));
  }
  if (cfg.env == "maze4")
    return std::make_shared<MazeEnv>(MazeEnv::Variant::kTerminal4);
  if (cfg.env == "maze10")
    return std::make_shared<MazeEnv>(MazeEnv::Variant::kPersistent10);
  if (cfg.env == "cartpole")
    return std::make_shared<CartpoleEnv>(cfg.noise_scale);
  throw Error("unknown env: " + cfg.env);
}

// Builds the named ensemble over the environment's expert bank. The
// returned ensemble keeps a pointer into `env`; the caller owns both.
inline std::shared_ptr<const Ensemble> make_named_ensemble(
    const std::string& name, const Env& env) {
  auto bank = make_expert_bank(env);
  auto combine = std::make_shared<GaussianCombineEnsemble>(bank);
  if (name == "gaussian_combine") return combine;
  if (name == "map_expert") return std::make_shared<MapExpertEnsemble>(bank);
  auto arg_of = [&](const std::string& prefix) -> std::string {
    if (name.rfind(prefix + "(", 0) != 0 || name.back() != ')')
      return std::string();
    return name.substr(prefix.size() + 1,
                       name.size() - prefix.size() - 2);
  };
  if (std::string arg = arg_of("random_sensing"); !arg.empty()) {
    return std::make_shared<RandomSensingEnsemble>(
        combine, parse_double(arg), env.spec().sense_channel);
  }
  if (std::string arg = arg_of("scheduled_sensing"); !arg.empty()) {
    return std::make_shared<ScheduledSensingEnsemble>(
        combine, std::stoi(arg), env.spec().sense_channel);
  }
  throw Error("unknown ensemble: " + name);
}

// BPO and UP-MLE learn the full action: their "ensemble" recommends zero,
// so the residual path is reused unchanged.
inline std::shared_ptr<const Ensemble> make_ensemble(const TrainConfig& cfg,
                                                     const Env& env) {
  if (cfg.algo == "bpo" || cfg.algo == "upmle")
    return std::make_shared<ZeroEnsemble>(env.spec().action_dim);
  return make_named_ensemble(cfg.ensemble, env);
}

// Hypothesis descriptors (one row per latent), columns scaled to [-1, 1]
// for use as network inputs.
inline Mat descriptor_matrix(const Env& env) {
  const int k = env.spec().latent_k;
  Vec first = env.hypothesis_params(0);
  Mat d(k, first.size());
  d.row(0) = first.transpose();
  for (int i = 1; i < k; ++i) d.row(i) = env.hypothesis_params(i).transpose();
  for (int j = 0; j < d.cols(); ++j) {
    double m = d.col(j).cwiseAbs().maxCoeff();
    if (m > 1e-12) d.col(j) /= m;
  }
  return d;
}

// Network input: scaled state, then the optional belief vector, MAP
// hypothesis descriptor, and ensemble recommendation.
inline Vec policy_input(const PolicyParams& p, const Env& env, const Vec& state,
                        const CategoricalBelief& belief, const Mat& descriptors,
                        const Vec& recommendation) {
  Vec x(p.input_dim());
  int off = 0;
  x.segment(off, p.state_dim) = env.policy_state_scale().cwiseProduct(state);
  off += p.state_dim;
  if (p.include_belief) {
    x.segment(off, p.belief_dim) = belief.probs();
    off += p.belief_dim;
  }
  if (p.include_map_params) {
    x.segment(off, p.map_params_dim) =
        descriptors.row(map_index(belief)).transpose();
    off += p.map_params_dim;
  }
  if (p.include_recommendation) x.segment(off, p.action_dim) = recommendation;
  return x;
}

// ----- Evaluation -----

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double std_err = 0.0;
  double success_rate = 0.0;
  double sense_rate = 0.0;  // sensing events per episode
  double crash_rate = 0.0;  // crash events per episode
  double mean_final_entropy = 0.0;
  std::vector<Vec> sense_states;            // state at each sensing event
  std::vector<double> sense_wall_distances; // doors: distance to the wall band
  std::vector<int> sense_histogram;         // doors: unit-distance bins
};

namespace detail {

inline void check_layout(const PolicyParams& p, const Env& env,
                         const Mat& descriptors) {
  const EnvSpec& spec = env.spec();
  if (p.state_dim != spec.state_dim || p.action_dim != spec.action_dim ||
      (p.include_belief && p.belief_dim != spec.latent_k) ||
      (p.include_map_params && p.map_params_dim != descriptors.cols()) ||
      p.input_dim() != p.mean_net.input_dim() ||
      p.input_dim() != p.value_net.input_dim())
    throw LayoutMismatch("checkpoint layout does not match the environment");
}

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / xs.size();
}

inline double std_err_of(const std::vector<double>& xs) {
  const int n = static_cast<int>(xs.size());
  if (n < 2) return 0.0;
  double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
}

}  // namespace detail

// Deterministic evaluation: the residual acts through its mean (no
// exploration noise). `params` may be null to evaluate the bare ensemble.
// The environment stream is seeded per episode, so two evaluations with
// the same seed are paired.
inline EvalReport evaluate(const Env& env, const Ensemble& ensemble,
                           const PolicyParams* params, const Mat& descriptors,
                           int episodes, uint64_t seed, int horizon = 0) {
  if (episodes < 1) throw Error("evaluate needs at least one episode");
  if (params) detail::check_layout(*params, env, descriptors);
  const DoorsEnv* doors = dynamic_cast<const DoorsEnv*>(&env);

  ResidualPolicy policy = zero_residual;
  if (params) {
    policy = [params, &env, &descriptors](const Vec& state,
                                          const CategoricalBelief& belief,
                                          const Vec& a_e, Rng&) {
      return policy_mean(*params,
                         policy_input(*params, env, state, belief, descriptors, a_e));
    };
  }

  EvalReport rep;
  rep.episodes = episodes;
  std::vector<double> returns(episodes);
  int successes = 0, senses = 0, crashes = 0;
  double entropy_sum = 0.0;
  SimulateOptions opts;
  opts.horizon = horizon > 0 ? horizon : -1;  // 0 selects the env default
  for (int ep = 0; ep < episodes; ++ep) {
    Rng env_rng(derive_seed(seed, 0x5EED, ep, 0));
    Rng pol_rng(derive_seed(seed, 0x5EED, ep, 1));
    Trajectory tr = simulate(env, ensemble, policy, env_rng, pol_rng, opts);
    returns[ep] = tr.total_reward();
    entropy_sum += entropy(tr.states.back().belief);
    bool reached = false;
    for (int t = 0; t < tr.length(); ++t) {
      const auto& info = tr.infos[t];
      auto goal_it = info.find("reached_goal");
      if (goal_it != info.end() && goal_it->second > 0.5) reached = true;
      auto crash_it = info.find("crashed");
      if (crash_it != info.end() && crash_it->second >= 0.0) ++crashes;
      auto sense_it = info.find("sensed");
      if (sense_it != info.end() && sense_it->second > 0.5) {
        ++senses;
        const Vec& where = tr.states[t + 1].env_state;
        rep.sense_states.push_back(where);
        if (doors) rep.sense_wall_distances.push_back(doors->wall_distance(where));
      }
    }
    if (reached) ++successes;
  }
  rep.mean_return = detail::mean_of(returns);
  rep.std_err = detail::std_err_of(returns);
  rep.success_rate = static_cast<double>(successes) / episodes;
  rep.sense_rate = static_cast<double>(senses) / episodes;
  rep.crash_rate = static_cast<double>(crashes) / episodes;
  rep.mean_final_entropy = entropy_sum / episodes;
  if (doors) {
    rep.sense_histogram.assign(13, 0);
    for (double d : rep.sense_wall_distances) {
      int bin = std::min(12, static_cast<int>(std::floor(d)));
      ++rep.sense_histogram[bin];
    }
  }
  return rep;
}

// ----- Metrics -----

struct IterationMetrics {
  int iter = 0;
  int episodes = 0;  // cumulative environment episodes
  double mean_return = 0.0;
  double std_err = 0.0;
  double success_rate = 0.0;
  double mean_entropy_at_end = 0.0;
  double clip_fraction = 0.0;
  double kl = 0.0;
  uint64_t checkpoint_hash = 0;
};

inline constexpr const char* kMetricsVersion = "# brpo-metrics v1";
inline constexpr const char* kMetricsColumns =
    "iter,episodes,mean_return,std_err,success_rate,mean_entropy_at_end,"
    "clip_fraction,kl,checkpoint_hash";

inline std::string emit_metrics(const std::vector<IterationMetrics>& rows) {
  std::string out = std::string(kMetricsVersion) + "\n" + kMetricsColumns + "\n";
  for (const auto& m : rows) {
    out += std::to_string(m.iter) + ',' + std::to_string(m.episodes) + ',';
    out += format_double(m.mean_return) + ',' + format_double(m.std_err) + ',';
    out += format_double(m.success_rate) + ',';
    out += format_double(m.mean_entropy_at_end) + ',';
    out += format_double(m.clip_fraction) + ',' + format_double(m.kl) + ',';
    out += hex64(m.checkpoint_hash) + '\n';
  }
  return out;
}

inline std::vector<IterationMetrics> parse_metrics(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsVersion)
    throw Error("bad metrics version line");
  if (!std::getline(in, line) || line != kMetricsColumns)
    throw Error("bad metrics column line");
  std::vector<IterationMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    size_t start = 0;
    while (true) {
      size_t c = line.find(',', start);
      f.push_back(line.substr(start, c - start));
      if (c == std::string::npos) break;
      start = c + 1;
    }
    if (f.size() != 9) throw Error("bad metrics row: " + line);
    IterationMetrics m;
    m.iter = std::stoi(f[0]);
    m.episodes = std::stoi(f[1]);
    m.mean_return = parse_double(f[2]);
    m.std_err = parse_double(f[3]);
    m.success_rate = parse_double(f[4]);
    m.mean_entropy_at_end = parse_double(f[5]);
    m.clip_fraction = parse_double(f[6]);
    m.kl = parse_double(f[7]);
    m.checkpoint_hash = std::stoull(f[8], nullptr, 16);
    rows.push_back(m);
  }
  return rows;
}

// ----- Training -----

struct EpisodeRecord {
  int iter = 0;
  int episode = 0;
  int length = 0;
  double env_return = 0.0;
  double shaped_return = 0.0;
  int senses = 0;
  int crashes = 0;
  bool reached_goal = false;
};

struct TrainResult {
  PolicyParams initial, best, final_params;
  std::vector<IterationMetrics> metrics;
  std::vector<EpisodeRecord> episode_log;
  double initial_eval_return = 0.0;
  double best_eval_return = 0.0;
  double final_eval_return = 0.0;
  int best_iteration = -1;  // -1: the initial policy
};

inline uint64_t params_hash(const PolicyParams& p) {
  std::string s;
  auto add = [&s](double v) {
    s += detail::hexfloat(v);
    s += ',';
  };
  for (int i = 0; i < p.log_std.size(); ++i) add(p.log_std[i]);
  for (const Mlp* net : {&p.mean_net, &p.value_net}) {
    for (int l = 0; l < net->layers(); ++l) {
      for (int i = 0; i < net->W[l].rows(); ++i)
        for (int j = 0; j < net->W[l].cols(); ++j) add(net->W[l](i, j));
      for (int i = 0; i < net->b[l].size(); ++i) add(net->b[l][i]);
    }
  }
  return fnv1a64(s);
}

namespace detail {

struct EpisodeData {
  Trajectory traj;
  Mat inputs;   // length x input_dim
  Mat means;    // length x action_dim
  Vec values;   // length
  Vec log_probs;
  double bootstrap = 0.0;
};

inline EpisodeData collect_episode(const Env& env, const Ensemble& ensemble,
                                   const PolicyParams& p, const Mat& descriptors,
                                   const TrainConfig& cfg, int iter, int ep) {
  Rng env_rng(derive_seed(cfg.seed, iter + 1, ep, 0));
  Rng pol_rng(derive_seed(cfg.seed, iter + 1, ep, 1));
  Rng tail_rng(derive_seed(cfg.seed, iter + 1, ep, 2));

  std::vector<Vec> inputs, means;
  std::vector<double> values, lps;
  std::vector<Vec>* inputs_ptr = &inputs;  // the callback runs once per step
  ResidualPolicy policy = [&](const Vec& state, const CategoricalBelief& belief,
                              const Vec& a_e, Rng& rng) {
    Vec x = policy_input(p, env, state, belief, descriptors, a_e);
    Vec mu = policy_mean(p, x);
    Vec a = sample_gaussian(mu, p.log_std, rng);
    inputs_ptr->push_back(x);
    means.push_back(mu);
    values.push_back(value_forward(p, x));
    lps.push_back(gaussian_log_prob(mu, p.log_std, a));
    return a;
  };

  SimulateOptions opts;
  opts.horizon = cfg.horizon > 0 ? cfg.horizon : -1;  // 0 selects the env default
  opts.bonus_epsilon = cfg.bonus_epsilon;
  EpisodeData data;
  data.traj = simulate(env, ensemble, policy, env_rng, pol_rng, opts);

  const int n = data.traj.length();
  data.inputs.resize(n, p.input_dim());
  data.means.resize(n, p.action_dim);
  data.values.resize(n);
  data.log_probs.resize(n);
  for (int t = 0; t < n; ++t) {
    data.inputs.row(t) = inputs[t].transpose();
    data.means.row(t) = means[t].transpose();
    data.values[t] = values[t];
    data.log_probs[t] = lps[t];
  }
  if (!data.traj.done_step.has_value()) {
    const BeliefState& last = data.traj.states.back();
    ExpertRecommendation rec =
        ensemble.recommend(last.env_state, last.belief, n, tail_rng);
    data.bootstrap = value_forward(
        p, policy_input(p, env, last.env_state, last.belief, descriptors,
                        rec.combined_action));
  }
  return data;
}

// Shaping bonus contained in the recorded rewards, recomputed from the
// stored belief sequence so the environment-only return can be reported.
inline double bonus_part(const Trajectory& tr, double epsilon) {
  if (epsilon == 0.0) return 0.0;
  double s = 0.0;
  for (int t = 0; t < tr.length(); ++t)
    s += l1_distance(tr.states[t].belief, tr.states[t + 1].belief);
  return epsilon * s;
}

inline EpisodeRecord episode_record(const Trajectory& tr, double epsilon,
                                    int iter, int ep) {
  EpisodeRecord r;
  r.iter = iter;
  r.episode = ep;
  r.length = tr.length();
  r.shaped_return = tr.total_reward();
  r.env_return = r.shaped_return - bonus_part(tr, epsilon);
  for (int t = 0; t < tr.length(); ++t) {
    const auto& info = tr.infos[t];
    auto it = info.find("sensed");
    if (it != info.end() && it->second > 0.5) ++r.senses;
    it = info.find("crashed");
    if (it != info.end() && it->second >= 0.0) ++r.crashes;
    it = info.find("reached_goal");
    if (it != info.end() && it->second > 0.5) r.reached_goal = true;
  }
  return r;
}

inline TrainResult train_psrl(const TrainConfig& cfg, const Env& env_ref) {
  const auto* tree = dynamic_cast<const TreeEnv*>(&env_ref);
  if (!tree) throw Error("algo psrl supports only the tree environment");
  TrainResult res;
  Rng rng(derive_seed(cfg.seed, 0xBEEF, 0));
  auto [state, truth] = tree->reset(rng);
  (void)state;
  CategoricalBelief posterior = tree->initial_belief();
  int total_eps = 0;
  for (int itr = 0; itr < cfg.n_itr; ++itr) {
    std::vector<double> returns(cfg.n_sample);
    int successes = 0;
    for (int ep = 0; ep < cfg.n_sample; ++ep) {
      auto [ret, next] = psrl_episode(posterior, truth, *tree, rng);
      posterior = next;
      returns[ep] = ret;
      if (ret > 0.0) ++successes;
      EpisodeRecord rec;
      rec.iter = itr;
      rec.episode = ep;
      rec.length = tree->depth();
      rec.env_return = ret;
      rec.shaped_return = ret;
      rec.reached_goal = ret > 0.0;
      res.episode_log.push_back(rec);
      ++total_eps;
    }
    IterationMetrics m;
    m.iter = itr;
    m.episodes = total_eps;
    m.mean_return = mean_of(returns);
    m.std_err = std_err_of(returns);
    m.success_rate = static_cast<double>(successes) / cfg.n_sample;
    m.mean_entropy_at_end = entropy(posterior);
    res.metrics.push_back(m);
  }
  if (!res.metrics.empty()) {
    res.initial_eval_return = res.metrics.front().mean_return;
    res.best_eval_return = res.metrics.back().mean_return;
    res.final_eval_return = res.metrics.back().mean_return;
  }
  return res;
}

}  // namespace detail

// The outer loop: n_itr iterations of n_sample mixture-policy rollouts
// followed by a clipped-surrogate update; tracks the best policy by
// held-out evaluation return. Deterministic for a fixed seed (episode
// streams are derived from (seed, iteration, episode), so the result does
// not depend on worker scheduling).
inline TrainResult train(TrainConfig cfg) {
  cfg.finalize();
  cfg.validate();
  auto env = make_env(cfg);
  const EnvSpec& spec = env->spec();
  if (cfg.horizon > spec.horizon)
    throw Error("config horizon exceeds the environment horizon");
  if (cfg.algo == "psrl") return detail::train_psrl(cfg, *env);

  auto ensemble = make_ensemble(cfg, *env);
  Mat descriptors = descriptor_matrix(*env);

  Rng init_rng(derive_seed(cfg.seed, 0xC0FFEE, 0));
  PolicyParams p = make_policy(
      spec.state_dim, spec.latent_k, static_cast<int>(descriptors.cols()),
      spec.action_dim, cfg.include_belief > 0, cfg.include_map_params > 0,
      cfg.include_recommendation > 0, cfg.hidden, cfg.log_std_init, init_rng);
  p.config_hash = cfg.hash();

  TrainResult res;
  res.initial = p;
  EvalReport er = evaluate(*env, *ensemble, &p, descriptors, cfg.eval_episodes,
                           cfg.eval_seed, cfg.horizon);
  res.initial_eval_return = er.mean_return;
  res.best = p;
  res.best_eval_return = er.mean_return;
  res.final_eval_return = er.mean_return;
  res.best_iteration = -1;

  Adam opt(p);
  const double gae_gamma = cfg.gamma > 0.0 ? cfg.gamma : spec.discount;
  int total_eps = 0;

  for (int itr = 0; itr < cfg.n_itr; ++itr) {
    std::vector<detail::EpisodeData> eps(cfg.n_sample);
    auto run_slice = [&](int first, int stride) {
      for (int e = first; e < cfg.n_sample; e += stride)
        eps[e] = detail::collect_episode(*env, *ensemble, p, descriptors, cfg,
                                         itr, e);
    };
    if (cfg.worker_count <= 1) {
      run_slice(0, 1);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < cfg.worker_count; ++w)
        pool.emplace_back(run_slice, w, cfg.worker_count);
      for (auto& t : pool) t.join();
    }

    int rows = 0;
    for (const auto& e : eps) rows += e.traj.length();
    UpdateBatch batch;
    batch.inputs.resize(rows, p.input_dim());
    batch.actions.resize(rows, p.action_dim);
    batch.advantages.resize(rows);
    batch.returns.resize(rows);
    batch.old_log_prob.resize(rows);
    batch.old_means.resize(rows, p.action_dim);
    batch.old_log_std = p.log_std;

    std::vector<double> env_returns(cfg.n_sample);
    int successes = 0, clipped = 0;
    double entropy_sum = 0.0;
    int r = 0;
    for (int e = 0; e < cfg.n_sample; ++e) {
      const detail::EpisodeData& d = eps[e];
      const int n = d.traj.length();
      Vec adv = gae(d.traj.rewards, d.values, d.bootstrap, gae_gamma,
                    cfg.lambda);
      for (int t = 0; t < n; ++t) {
        batch.inputs.row(r) = d.inputs.row(t);
        batch.actions.row(r) = d.traj.residual_actions[t].transpose();
        batch.advantages[r] = adv[t];
        batch.returns[r] = adv[t] + d.values[t];
        batch.old_log_prob[r] = d.log_probs[t];
        batch.old_means.row(r) = d.means.row(t);
        ++r;
      }
      EpisodeRecord rec =
          detail::episode_record(d.traj, cfg.bonus_epsilon, itr, e);
      env_returns[e] = rec.env_return;
      if (rec.reached_goal) ++successes;
      clipped += d.traj.clipped_steps;
      entropy_sum += entropy(d.traj.states.back().belief);
      res.episode_log.push_back(rec);
    }
    normalize_advantages(batch.advantages);

    Rng upd_rng(derive_seed(cfg.seed, itr + 1, 1000003, 9));
    PpoStats stats = ppo_update(p, opt, batch, cfg.ppo, upd_rng);

    total_eps += cfg.n_sample;
    IterationMetrics m;
    m.iter = itr;
    m.episodes = total_eps;
    m.mean_return = detail::mean_of(env_returns);
    m.std_err = detail::std_err_of(env_returns);
    m.success_rate = static_cast<double>(successes) / cfg.n_sample;
    m.mean_entropy_at_end = entropy_sum / cfg.n_sample;
    m.clip_fraction = rows > 0 ? static_cast<double>(clipped) / rows : 0.0;
    m.kl = stats.mean_kl;
    m.checkpoint_hash = params_hash(p);
    res.metrics.push_back(m);

    if ((itr + 1) % cfg.eval_every == 0 || itr == cfg.n_itr - 1) {
      er = evaluate(*env, *ensemble, &p, descriptors, cfg.eval_episodes,
                    cfg.eval_seed, cfg.horizon);
      res.final_eval_return = er.mean_return;
      if (er.mean_return > res.best_eval_return) {
        res.best = p;
        res.best_eval_return = er.mean_return;
        res.best_iteration = itr;
      }
    }
  }
  res.final_params = p;
  if (cfg.n_itr == 0) res.final_params = res.initial;
  return res;
}

// ----- Run artifacts -----

inline constexpr const char* kEpisodesHeader =
    "# brpo-episodes v1\n"
    "iter,episode,length,env_return,shaped_return,senses,crashes,reached_goal\n";

inline std::string emit_episodes(const std::vector<EpisodeRecord>& rows) {
  std::string out = kEpisodesHeader;
  for (const auto& e : rows) {
    out += std::to_string(e.iter) + ',' + std::to_string(e.episode) + ',';
    out += std::to_string(e.length) + ',' + format_double(e.env_return) + ',';
    out += format_double(e.shaped_return) + ',' + std::to_string(e.senses) + ',';
    out += std::to_string(e.crashes) + ',' + (e.reached_goal ? "1" : "0") + '\n';
  }
  return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

}  // namespace detail

inline std::map<std::string, std::string> checkpoint_meta(
    const TrainConfig& cfg, const std::string& kind, int iteration) {
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : cfg.to_map()) meta["config." + k] = v;
  meta["kind"] = kind;
  meta["iteration"] = std::to_string(iteration);
  return meta;
}

inline TrainConfig config_from_meta(
    const std::map<std::string, std::string>& meta) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : meta) {
    if (k.rfind("config.", 0) == 0) kv[k.substr(7)] = v;
  }
  if (kv.empty()) throw Error("checkpoint carries no configuration");
  return TrainConfig::from_map(kv);
}

// Trains and writes every artifact of the run: resolved config, metrics
// CSV, per-episode log, and initial/best/final checkpoints.
inline TrainResult run_training(TrainConfig cfg, const std::string& out_dir) {
  cfg.finalize();
  cfg.validate();
  std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  TrainResult res = train(cfg);
  detail::write_text(out / "resolved.cfg", cfg.resolved_text());
  detail::write_text(out / "metrics.csv", emit_metrics(res.metrics));
  detail::write_text(out / "episodes.csv", emit_episodes(res.episode_log));
  if (cfg.algo != "psrl") {
    save_checkpoint((out / "initial.ckpt").string(), res.initial,
                    checkpoint_meta(cfg, "initial", -1));
    save_checkpoint((out / "best.ckpt").string(), res.best,
                    checkpoint_meta(cfg, "best", res.best_iteration));
    save_checkpoint((out / "final.ckpt").string(), res.final_params,
                    checkpoint_meta(cfg, "final", cfg.n_itr - 1));
  }
  return res;
}

// Rebuilds the environment and ensemble recorded in the checkpoint and
// evaluates deterministically.
inline EvalReport evaluate_checkpoint(const std::string& path, int episodes,
                                      uint64_t seed) {
  Checkpoint ck = load_checkpoint(path);
  TrainConfig cfg = config_from_meta(ck.meta);
  auto env = make_env(cfg);
  auto ensemble = make_ensemble(cfg, *env);
  Mat descriptors = descriptor_matrix(*env);
  return evaluate(*env, *ensemble, &ck.params, descriptors, episodes, seed,
                  cfg.horizon);
}

// ----- Gradient check -----

// Central-difference check of the surrogate-loss gradient on a small
// random policy and batch. Returns the worst relative error.
inline double gradient_check(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6AD, 0));
  PolicyParams p =
      make_policy(3, 4, 2, 2, true, true, true, 8, -0.7, rng);
  // Give the zero-initialized mean head nonzero weights so every parameter
  // participates.
  for (auto& w : p.mean_net.W) {
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) += 0.1 * rng.normal();
  }
  for (auto& b : p.mean_net.b) {
    for (int i = 0; i < b.size(); ++i) b[i] += 0.1 * rng.normal();
  }

  const int n = 16;
  UpdateBatch batch;
  batch.inputs.resize(n, p.input_dim());
  for (int i = 0; i < batch.inputs.rows(); ++i)
    for (int j = 0; j < batch.inputs.cols(); ++j)
      batch.inputs(i, j) = rng.normal();
  batch.actions.resize(n, p.action_dim);
  for (int i = 0; i < batch.actions.rows(); ++i)
    for (int j = 0; j < batch.actions.cols(); ++j)
      batch.actions(i, j) = 0.5 * rng.normal();
  batch.advantages.resize(n);
  batch.returns.resize(n);
  batch.old_log_prob.resize(n);
  batch.old_means.resize(n, p.action_dim);
  batch.old_log_std = (p.log_std.array() + 0.05).matrix();
  for (int i = 0; i < n; ++i) {
    batch.advantages[i] = rng.normal();
    batch.returns[i] = rng.normal();
    Vec mu = policy_mean(p, batch.inputs.row(i).transpose());
    batch.old_means.row(i) =
        (mu.array() + 0.1 * rng.normal()).matrix().transpose();
    batch.old_log_prob[i] =
        gaussian_log_prob(batch.old_means.row(i).transpose(),
                          batch.old_log_std, batch.actions.row(i).transpose());
  }
  normalize_advantages(batch.advantages);

  PpoConfig cfg;
  cfg.kl_coef = 0.1;  // exercise the penalty path as well
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;

  PolicyGrad grad;
  ppo_loss(p, batch, rows, cfg, &grad);

  std::vector<std::pair<double*, double>> params;  // (parameter, analytic)
  for (int l = 0; l < p.mean_net.layers(); ++l) {
    for (int i = 0; i < p.mean_net.W[l].rows(); ++i)
      for (int j = 0; j < p.mean_net.W[l].cols(); ++j)
        params.push_back({&p.mean_net.W[l](i, j), grad.mean.dW[l](i, j)});
    for (int i = 0; i < p.mean_net.b[l].size(); ++i)
      params.push_back({&p.mean_net.b[l][i], grad.mean.db[l][i]});
  }
  for (int l = 0; l < p.value_net.layers(); ++l) {
    for (int i = 0; i < p.value_net.W[l].rows(); ++i)
      for (int j = 0; j < p.value_net.W[l].cols(); ++j)
        params.push_back({&p.value_net.W[l](i, j), grad.value.dW[l](i, j)});
    for (int i = 0; i < p.value_net.b[l].size(); ++i)
      params.push_back({&p.value_net.b[l][i], grad.value.db[l][i]});
  }
  for (int i = 0; i < p.log_std.size(); ++i)
    params.push_back({&p.log_std[i], grad.dlog_std[i]});

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [ptr, analytic] : params) {
    double saved = *ptr;
    *ptr = saved + h;
    double up = ppo_loss(p, batch, rows, cfg, nullptr);
    *ptr = saved - h;
    double down = ppo_loss(p, batch, rows, cfg, nullptr);
    *ptr = saved;
    double fd = (up - down) / (2.0 * h);
    double rel = std::abs(fd - analytic) /
                 std::max({1e-6, std::abs(fd), std::abs(analytic)});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace brpo
