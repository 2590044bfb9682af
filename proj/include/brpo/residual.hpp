// The residual view of a latent MDP under a fixed ensemble: rollouts where
// the executed action is ensemble + residual, trajectories that store the
// residual actions (that is what the learner optimizes), and the enumerable
// residual transition kernel used to check the equivalence guarantees on
// small discrete instances.
#pragma once

#include <functional>
#include <optional>

#include "brpo/env.hpp"
#include "brpo/experts.hpp"

namespace brpo {

struct Trajectory {
  std::vector<BeliefState> states;        // H+1 entries (fewer on early done)
  std::vector<Vec> residual_actions;      // a_r, what the learner stores
  std::vector<Vec> executed_actions;      // clip(a_e + a_r), diagnostics
  std::vector<Vec> ensemble_means;        // a_e
  std::vector<double> rewards;
  std::vector<std::map<std::string, double>> infos;
  int clipped_steps = 0;
  std::optional<int> done_step;

  int length() const { return static_cast<int>(rewards.size()); }

  double total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
  }
};

// Sum of ensemble and residual samples, clipped to the environment bounds.
inline Vec mixture_action(const Vec& ensemble_sample, const Vec& residual_sample,
                          const EnvSpec& spec, bool* clipped = nullptr) {
  if (ensemble_sample.size() != residual_sample.size())
    throw DimensionMismatch("mixture_action operand sizes differ");
  return clip_action(spec, ensemble_sample + residual_sample, clipped);
}

// Residual policy: draws a_r given (state, belief, expert action).
using ResidualPolicy =
    std::function<Vec(const Vec& state, const CategoricalBelief& belief,
                      const Vec& expert_action, Rng& rng)>;

inline Vec zero_residual(const Vec&, const CategoricalBelief&,
                         const Vec& expert_action, Rng&) {
  return Vec::Zero(expert_action.size());
}

struct SimulateOptions {
  int horizon = -1;             // negative means the environment's horizon
  double bonus_epsilon = 0.0;   // info-gathering shaping on recorded rewards
};

// One episode under the mixture policy: per step the
// ensemble recommends a_e, the residual policy draws a_r, the environment
// executes clip(a_e + a_r), and the Bayes filter folds the observation into
// the belief. env_rng drives the environment (reset, transition noise,
// sensors); policy_rng drives the ensemble and residual draws, so paired
// comparisons can share the environment stream.
inline Trajectory simulate(const Env& env, const Ensemble& ensemble,
                           const ResidualPolicy& policy, Rng& env_rng,
                           Rng& policy_rng, const SimulateOptions& opts = {}) {
  const EnvSpec& spec = env.spec();
  int horizon = opts.horizon >= 0 ? opts.horizon : spec.horizon;
  if (horizon > spec.horizon)
    throw Error("requested horizon exceeds the environment's");

  Trajectory traj;
  auto [state, latent] = env.reset(env_rng);
  CategoricalBelief belief = env.initial_belief();
  traj.states.push_back({state, belief});

  for (int t = 0; t < horizon; ++t) {
    ExpertRecommendation rec =
        ensemble.recommend(state, belief, t, policy_rng);
    Vec a_r = policy(state, belief, rec.combined_action, policy_rng);
    bool clipped = false;
    Vec a = mixture_action(rec.combined_action, a_r, spec, &clipped);
    if (clipped) ++traj.clipped_steps;

    StepResult res = env.step(state, latent, a, env_rng);
    CategoricalBelief next_belief = belief_step(
        env, belief, state, a, res.next_state, res.observation);

    double reward = res.reward;
    if (opts.bonus_epsilon != 0.0)
      reward += opts.bonus_epsilon * l1_distance(belief, next_belief);

    traj.residual_actions.push_back(std::move(a_r));
    traj.executed_actions.push_back(std::move(a));
    traj.ensemble_means.push_back(std::move(rec.combined_action));
    traj.rewards.push_back(reward);
    traj.infos.push_back(std::move(res.info));

    state = res.next_state;
    belief = next_belief;
    traj.states.push_back({state, belief});
    if (res.done) {
      traj.done_step = t;
      break;
    }
  }
  return traj;
}

// ----- Enumerable discrete instances (test support) -----

// Finite MDP whose action set is the cyclic group Z_A, so ensemble and
// residual actions add modulo A and the induced residual transition
// kernel is computable by enumeration.
struct DiscreteMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<Mat> T;  // T[a](s, s')
  Vec p0;              // initial state distribution

  void validate() const {
    if (static_cast<int>(T.size()) != num_actions)
      throw DimensionMismatch("transition list size != num_actions");
    for (const auto& m : T) {
      if (m.rows() != num_states || m.cols() != num_states)
        throw DimensionMismatch("transition matrix shape");
      for (int s = 0; s < num_states; ++s) {
        if (std::abs(m.row(s).sum() - 1.0) > 1e-12)
          throw Error("transition row does not sum to 1");
      }
    }
  }
};

// Stochastic discrete policies: rows are states, columns actions.
struct DiscretePolicy {
  Mat probs;  // (num_states x num_actions)
};

// T_r(s'|s, a_r) = sum_{a_e} T(s'|s, a_e + a_r) pi_e(a_e|s).
inline double residual_transition_probability(const DiscreteMdp& mdp,
                                              const DiscretePolicy& ensemble,
                                              int s, int a_r, int s_next) {
  double p = 0.0;
  for (int a_e = 0; a_e < mdp.num_actions; ++a_e) {
    int a = (a_e + a_r) % mdp.num_actions;
    p += ensemble.probs(s, a_e) * mdp.T[a](s, s_next);
  }
  return p;
}

// Continuous ensembles have no enumerable recommendation support.
inline double residual_transition_probability(const Env&, const Ensemble&,
                                              const Vec&, const Vec&,
                                              const Vec&) {
  throw NotEnumerable("residual kernel enumeration needs a discrete ensemble");
}

}  // namespace brpo
