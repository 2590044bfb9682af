// Environment interface for latent MDPs. Each environment is a family of
// MDPs indexed by a discrete latent hypothesis; an episode samples one
// hypothesis from the prior and keeps it fixed. Stepping is purely
// functional: the caller owns the state, the latent draw, and the RNG, so
// rollouts can be replayed or parallelised deterministically.
#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>

#include "brpo/belief.hpp"
#include "brpo/core.hpp"

namespace brpo {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  int obs_dim = 0;
  int latent_k = 0;      // number of latent hypotheses
  int horizon = 0;
  double discount = 1.0;
  Vec action_low;        // per-dimension clip bounds for executed actions
  Vec action_high;
  int sense_channel = -1;  // action index of the sensing channel, -1 if none
};

struct LatentSample {
  int index = 0;  // hypothesis index in [0, latent_k)
  Vec params;     // hypothesis parameters (environment-specific encoding)
};

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool done = false;
  Vec observation;  // evidence consumed by the Bayes filter
  std::map<std::string, double> info;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;

  // Draws the initial state and the episode's latent hypothesis.
  virtual std::pair<Vec, LatentSample> reset(Rng& rng) const = 0;

  virtual StepResult step(const Vec& state, const LatentSample& latent,
                          const Vec& action, Rng& rng) const = 0;

  // p(observation | prev_state, action, next_state, hypothesis). The
  // observation layout is environment-specific but is exactly what step()
  // emitted, so filter and simulator never re-derive geometry.
  virtual double observation_likelihood(const Vec& prev_state,
                                        const Vec& action,
                                        const Vec& next_state, const Vec& obs,
                                        int hypothesis) const = 0;

  // Log of observation_likelihood, overridable where densities underflow
  // (filtering shifts log-likelihoods before exponentiating, so only
  // relative magnitudes matter).
  virtual double observation_log_likelihood(const Vec& prev_state,
                                            const Vec& action,
                                            const Vec& next_state,
                                            const Vec& obs,
                                            int hypothesis) const {
    return std::log(
        observation_likelihood(prev_state, action, next_state, obs, hypothesis));
  }

  // Parameter vector for hypothesis i (same encoding as LatentSample::params).
  virtual Vec hypothesis_params(int i) const = 0;

  virtual CategoricalBelief initial_belief() const {
    return CategoricalBelief::uniform(spec().latent_k);
  }

  // Elementwise scale applied to the state before it is fed to a network,
  // so that inputs stay O(1) across environments.
  virtual Vec policy_state_scale() const {
    return Vec::Ones(spec().state_dim);
  }
};

// Clips an executed action to the environment's declared bounds and reports
// whether any coordinate actually moved.
inline Vec clip_action(const EnvSpec& spec, const Vec& a, bool* clipped = nullptr) {
  if (a.size() != spec.action_dim)
    throw DimensionMismatch("action has size " + std::to_string(a.size()) +
                            ", expected " + std::to_string(spec.action_dim));
  Vec out(a.size());
  bool any = false;
  for (int i = 0; i < a.size(); ++i) {
    double v = std::clamp(a[i], spec.action_low[i], spec.action_high[i]);
    any = any || (v != a[i]);
    out[i] = v;
  }
  if (clipped) *clipped = any;
  return out;
}

// Deterministic reset from an integer seed (fresh generator, keyed stream).
inline std::pair<Vec, LatentSample> reset_with_seed(const Env& env,
                                                    uint64_t seed) {
  Rng rng(derive_seed(seed, 0xE5E7));
  return env.reset(rng);
}

// One Bayes-filter step: multiplies the belief by the observation
// likelihood of each hypothesis and renormalises. Works with shifted
// log-likelihoods so continuous densities cannot underflow the whole
// posterior at once.
inline CategoricalBelief belief_step(const Env& env,
                                     const CategoricalBelief& belief,
                                     const Vec& prev_state, const Vec& action,
                                     const Vec& next_state, const Vec& obs) {
  const int k = env.spec().latent_k;
  if (belief.size() != k)
    throw SupportMismatch("belief size " + std::to_string(belief.size()) +
                          " != latent_k " + std::to_string(k));
  Vec log_lik(k);
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    log_lik[i] =
        env.observation_log_likelihood(prev_state, action, next_state, obs, i);
    if (belief[i] > 0.0) shift = std::max(shift, log_lik[i]);
  }
  if (!std::isfinite(shift))
    throw AllZeroPosterior("no hypothesis in the belief support explains the observation");
  Vec lik(k);
  for (int i = 0; i < k; ++i) lik[i] = std::exp(log_lik[i] - shift);
  return categorical_update(belief, lik);
}

}  // namespace brpo
