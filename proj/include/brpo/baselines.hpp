// Comparison agents and reward ablations: belief-input and MAP-input
// policies that act directly (no ensemble), the information-gathering
// reward bonus, and posterior-sampling RL on the tree.
#pragma once

#include "brpo/belief.hpp"
#include "brpo/envs/tree.hpp"

namespace brpo {

// Policy input for an agent that sees the raw belief.
inline Vec bpo_input(const Vec& state, const CategoricalBelief& belief) {
  Vec x(state.size() + belief.size());
  x << state, belief.probs();
  return x;
}

// Policy input for an agent that sees only the MAP hypothesis parameters.
// Rows of latent_descriptors are the per-hypothesis parameter vectors.
inline Vec upmle_input(const Vec& state, const CategoricalBelief& belief,
                       const Mat& latent_descriptors) {
  if (latent_descriptors.rows() != belief.size())
    throw SupportMismatch("descriptor count != belief size");
  Vec x(state.size() + latent_descriptors.cols());
  x << state, latent_descriptors.row(map_index(belief)).transpose();
  return x;
}

// Information-gathering shaping: reward the realized change in belief.
inline double info_bonus(double reward, const CategoricalBelief& b,
                         const CategoricalBelief& b_next, double epsilon) {
  return reward + epsilon * l1_distance(b, b_next);
}

// One PSRL episode on the tree: sample a hypothesis from the posterior,
// run that hypothesis's optimal policy (march straight to its leaf; such
// policies never sense), and fold the leaf outcome back into the
// posterior. Returns the episode return and the updated posterior.
inline std::pair<double, CategoricalBelief> psrl_episode(
    const CategoricalBelief& posterior, const LatentSample& truth,
    const TreeEnv& env, Rng& rng) {
  int sampled = rng.categorical(posterior.probs());
  Vec state = Vec::Zero(1);
  double ep_return = 0.0;
  Vec last_obs;
  for (int d = 0; d < env.depth(); ++d) {
    auto a = env.direction_to(TreeEnv::node_of(state), sampled);
    StepResult r = env.tree_step(state, truth, a);
    ep_return += r.reward;
    state = r.next_state;
    last_obs = r.observation;
  }
  Vec lik(posterior.size());
  for (int i = 0; i < posterior.size(); ++i)
    lik[i] = env.observation_likelihood(state, Vec(), state, last_obs, i);
  return {ep_return, categorical_update(posterior, lik)};
}

// T episodes of PSRL against one fixed latent draw (the regret setting of
// the analysis): the posterior carries over between episodes.
inline double psrl_run(const TreeEnv& env, int episodes, Rng& rng) {
  auto [state, truth] = env.reset(rng);
  CategoricalBelief posterior = env.initial_belief();
  double total = 0.0;
  for (int t = 0; t < episodes; ++t) {
    auto [ret, post] = psrl_episode(posterior, truth, env, rng);
    total += ret;
    posterior = post;
  }
  return total;
}

}  // namespace brpo
