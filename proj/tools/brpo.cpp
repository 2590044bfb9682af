// Command-line front end: training runs, checkpoint evaluation, exact tree
// oracles, PSRL Monte Carlo, and the gradient self-check.
#include <iostream>

#include "CLI11.hpp"
#include "brpo/harness.hpp"
#include "brpo/oracle.hpp"

namespace {

// Decimal rendering that keeps a fractional part (e.g. 615 -> "615.0") so
// reward values always read as reals.
std::string decimal(double v) {
  std::string s = brpo::format_double(v);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
    s += ".0";
  return s;
}

int tree_depth_for(int leaves) {
  if (leaves < 2 || (leaves & (leaves - 1)) != 0)
    throw brpo::Error("leaf count must be a power of two >= 2");
  int d = 0;
  while ((1 << d) < leaves) ++d;
  return d;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  brpo::TrainConfig cfg = brpo::load_config(config_path);
  brpo::TrainResult res = brpo::run_training(cfg, out_dir);
  std::cout << "algo " << cfg.algo << " env " << cfg.env << " iterations "
            << res.metrics.size() << '\n';
  std::cout << "initial_eval " << decimal(res.initial_eval_return) << '\n';
  std::cout << "best_eval " << decimal(res.best_eval_return) << " iteration "
            << res.best_iteration << '\n';
  std::cout << "final_eval " << decimal(res.final_eval_return) << '\n';
  std::cout << "out " << out_dir << '\n';
  return 0;
}

int run_eval(const std::string& checkpoint, int episodes, uint64_t seed) {
  brpo::EvalReport rep = brpo::evaluate_checkpoint(checkpoint, episodes, seed);
  std::cout << "episodes " << rep.episodes << '\n';
  std::cout << "mean_return " << decimal(rep.mean_return) << '\n';
  std::cout << "std_err " << decimal(rep.std_err) << '\n';
  std::cout << "success_rate " << decimal(rep.success_rate) << '\n';
  std::cout << "sense_rate " << decimal(rep.sense_rate) << '\n';
  std::cout << "crash_rate " << decimal(rep.crash_rate) << '\n';
  std::cout << "mean_final_entropy " << decimal(rep.mean_final_entropy) << '\n';
  if (!rep.sense_histogram.empty()) {
    std::cout << "sense_wall_distance_hist";
    for (size_t b = 0; b < rep.sense_histogram.size(); ++b)
      std::cout << ' ' << b << ':' << rep.sense_histogram[b];
    std::cout << '\n';
  }
  return 0;
}

int run_oracle_tree(int leaves, int episodes) {
  auto [first, cumulative] = brpo::tree_bayes_optimal(leaves, episodes);
  std::cout << "bayes_optimal_first " << decimal(first) << '\n';
  std::cout << "bayes_optimal_cumulative " << decimal(cumulative) << '\n';
  std::cout << "psrl_expected "
            << decimal(brpo::tree_psrl_expected(leaves, episodes)) << '\n';
  return 0;
}

int run_psrl_tree(int leaves, int episodes, int trials, uint64_t seed) {
  brpo::TreeEnv env(tree_depth_for(leaves));
  double total = 0.0;
  for (int k = 0; k < trials; ++k) {
    brpo::Rng rng(brpo::derive_seed(seed, k, 0));
    total += brpo::psrl_run(env, episodes, rng);
  }
  double mean = total / trials;
  double expected = brpo::tree_psrl_expected(leaves, episodes);
  std::cout << "trials " << trials << '\n';
  std::cout << "mc_mean " << decimal(mean) << '\n';
  std::cout << "expected " << decimal(expected) << '\n';
  std::cout << "abs_diff " << decimal(std::abs(mean - expected)) << '\n';
  return 0;
}

int run_gradcheck(uint64_t seed) {
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    double err = brpo::gradient_check(seed + k);
    std::cout << "seed " << (seed + k) << " max_rel_err " << decimal(err)
              << '\n';
    worst = std::max(worst, err);
  }
  std::cout << "worst " << decimal(worst) << '\n';
  if (worst >= 1e-4) {
    std::cerr << "gradient check failed: worst relative error "
              << decimal(worst) << " >= 1e-4\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian residual policy optimization toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  int episodes = 100, leaves = 8, oracle_episodes = 10, trials = 1000;
  uint64_t seed = 0, psrl_seed = 7, grad_seed = 0;

  CLI::App* train = app.add_subcommand("train", "Run a training configuration");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes");
  eval->add_option("--seed", seed, "Evaluation seed");

  CLI::App* oracle = app.add_subcommand("oracle", "Exact oracle values");
  oracle->require_subcommand(1);
  CLI::App* oracle_tree = oracle->add_subcommand("tree", "Tree instance");
  oracle_tree->add_option("--leaves", leaves, "Number of leaves");
  oracle_tree->add_option("--episodes", oracle_episodes, "Episodes");

  CLI::App* psrl = app.add_subcommand("psrl", "PSRL Monte Carlo");
  psrl->require_subcommand(1);
  CLI::App* psrl_tree = psrl->add_subcommand("tree", "Tree instance");
  psrl_tree->add_option("--leaves", leaves, "Number of leaves");
  psrl_tree->add_option("--episodes", oracle_episodes, "Episodes per trial");
  psrl_tree->add_option("--trials", trials, "Monte Carlo trials");
  psrl_tree->add_option("--seed", psrl_seed, "Base seed");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--seed", grad_seed, "First of 10 seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(config_path, out_dir);
    if (eval->parsed()) return run_eval(checkpoint, episodes, seed);
    if (oracle->parsed()) return run_oracle_tree(leaves, oracle_episodes);
    if (psrl->parsed())
      return run_psrl_tree(leaves, oracle_episodes, trials, psrl_seed);
    if (gradcheck->parsed()) return run_gradcheck(grad_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
