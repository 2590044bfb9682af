// Mixture actions, episode simulation under ensemble + residual, and the
// enumerable residual transition kernel.
#include <doctest.h>

#include <cmath>
#include <memory>

#include "brpo/residual.hpp"

using namespace brpo;

namespace {
Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
}  // namespace

TEST_CASE("mixture_action: sum, clipping and the clip flag") {
  EnvSpec spec;
  spec.action_dim = 2;
  spec.action_low = Vec::Constant(2, -1.2);
  spec.action_high = Vec::Constant(2, 1.2);

  bool clipped = true;
  Vec a = mixture_action(vec2(0.5, -0.3), vec2(0.2, 0.1), spec, &clipped);
  CHECK(a == vec2(0.5 + 0.2, -0.3 + 0.1));  // exact float sums
  CHECK_FALSE(clipped);

  a = mixture_action(vec2(1.0, 0.0), vec2(0.5, 0.0), spec, &clipped);
  CHECK(a[0] == 1.2);
  CHECK(clipped);

  a = mixture_action(vec2(-1.0, 0.0), vec2(-0.5, -2.0), spec, &clipped);
  CHECK(a == vec2(-1.2, -1.2));
  CHECK(clipped);

  // Zero residual leaves an in-bounds recommendation unchanged.
  Vec rec = vec2(0.4, -1.0);
  CHECK(mixture_action(rec, Vec::Zero(2), spec) == rec);

  CHECK_THROWS_AS(mixture_action(rec, Vec::Zero(3), spec), DimensionMismatch);
  CHECK_THROWS_AS(mixture_action(Vec::Zero(3), Vec::Zero(3), spec),
                  DimensionMismatch);
}

TEST_CASE("simulate: horizon 0 yields only the initial belief state") {
  TreeEnv env(2);
  GaussianCombineEnsemble ens(make_expert_bank(env));
  Rng env_rng(1), pol_rng(2);
  SimulateOptions opts;
  opts.horizon = 0;
  Trajectory traj = simulate(env, ens, zero_residual, env_rng, pol_rng, opts);
  CHECK(traj.states.size() == 1);
  CHECK(traj.length() == 0);
  CHECK(traj.rewards.empty());
  CHECK_FALSE(traj.done_step.has_value());
  CHECK(traj.states[0].belief.size() == 4);
  CHECK(entropy(traj.states[0].belief) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("simulate: horizon above the environment's is rejected") {
  TreeEnv env(2);
  GaussianCombineEnsemble ens(make_expert_bank(env));
  Rng env_rng(1), pol_rng(2);
  SimulateOptions opts;
  opts.horizon = env.spec().horizon + 1;
  CHECK_THROWS_AS(simulate(env, ens, zero_residual, env_rng, pol_rng, opts),
                  Error);
}

TEST_CASE("simulate: identical seeds reproduce the trajectory bit-exactly") {
  DoorsEnv env;
  auto bank = make_expert_bank(env);
  RandomSensingEnsemble ens(std::make_shared<GaussianCombineEnsemble>(bank),
                            0.5, env.spec().sense_channel);
  auto noisy_residual = [](const Vec&, const CategoricalBelief&,
                           const Vec& a_e, Rng& rng) {
    Vec r(a_e.size());
    for (int d = 0; d < r.size(); ++d) r[d] = 0.3 * rng.normal();
    return r;
  };
  auto run = [&]() {
    Rng env_rng(101), pol_rng(202);
    return simulate(env, ens, noisy_residual, env_rng, pol_rng);
  };
  Trajectory t1 = run(), t2 = run();
  REQUIRE(t1.length() == t2.length());
  for (int t = 0; t < t1.length(); ++t) {
    CHECK(t1.states[t].env_state == t2.states[t].env_state);
    CHECK(t1.residual_actions[t] == t2.residual_actions[t]);
    CHECK(t1.executed_actions[t] == t2.executed_actions[t]);
    CHECK(t1.rewards[t] == t2.rewards[t]);
  }
  CHECK(t1.clipped_steps == t2.clipped_steps);
}

TEST_CASE("simulate: env and policy streams are independent") {
  DoorsEnv env;
  GaussianCombineEnsemble ens(make_expert_bank(env));
  // Same env seed, different policy seeds: the episode draw (start state
  // and latent-dependent first observation) is unchanged.
  Rng env_a(7), pol_a(1);
  Rng env_b(7), pol_b(999);
  Trajectory ta = simulate(env, ens, zero_residual, env_a, pol_a);
  Trajectory tb = simulate(env, ens, zero_residual, env_b, pol_b);
  CHECK(ta.states[0].env_state == tb.states[0].env_state);
}

TEST_CASE("simulate: scripted sense-then-descend earns 99.9 on the tree") {
  TreeEnv env(2);
  GaussianCombineEnsemble ens(make_expert_bank(env));
  // Residual forces a sense while uncertain, then lets the experts drive.
  ResidualPolicy scripted = [](const Vec&, const CategoricalBelief& belief,
                               const Vec& a_e, Rng&) {
    Vec r = Vec::Zero(a_e.size());
    r[1] = entropy(belief) > 1e-9 ? 3.0 : -3.0;
    return r;
  };
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng env_rng(derive_seed(seed, 1)), pol_rng(derive_seed(seed, 2));
    Trajectory traj = simulate(env, ens, scripted, env_rng, pol_rng);
    CHECK(traj.total_reward() == doctest::Approx(99.9).epsilon(1e-12));
    CHECK(traj.rewards[0] == -0.1);
    CHECK(entropy(traj.states[1].belief) == 0.0);
    REQUIRE(traj.done_step.has_value());
    CHECK(*traj.done_step == 2);
    CHECK(traj.infos.back().at("reached_goal") == 1.0);
  }
}

TEST_CASE("simulate: belief shaping adds epsilon times the realized L1 change") {
  DoorsEnv env;
  auto bank = make_expert_bank(env);
  RandomSensingEnsemble ens(std::make_shared<GaussianCombineEnsemble>(bank),
                            1.0, env.spec().sense_channel);
  SimulateOptions plain, shaped;
  shaped.bonus_epsilon = 2.5;
  Rng e1(11), p1(12), e2(11), p2(12);
  Trajectory t_plain = simulate(env, ens, zero_residual, e1, p1, plain);
  Trajectory t_shaped = simulate(env, ens, zero_residual, e2, p2, shaped);
  REQUIRE(t_plain.length() == t_shaped.length());
  for (int t = 0; t < t_plain.length(); ++t) {
    CHECK(t_plain.states[t].env_state == t_shaped.states[t].env_state);
    double l1 = l1_distance(t_plain.states[t].belief,
                            t_plain.states[t + 1].belief);
    CHECK(t_shaped.rewards[t] ==
          doctest::Approx(t_plain.rewards[t] + 2.5 * l1).epsilon(1e-12));
  }
}

TEST_CASE("simulate: clipped steps are counted") {
  DoorsEnv env;
  GaussianCombineEnsemble ens(make_expert_bank(env));
  ResidualPolicy huge = [](const Vec&, const CategoricalBelief&,
                           const Vec& a_e, Rng&) {
    return Vec::Constant(a_e.size(), 50.0);
  };
  Rng env_rng(13), pol_rng(14);
  SimulateOptions opts;
  opts.horizon = 5;
  Trajectory traj = simulate(env, ens, huge, env_rng, pol_rng, opts);
  CHECK(traj.clipped_steps == traj.length());
  for (const Vec& a : traj.executed_actions) {
    CHECK(a[0] == env.spec().action_high[0]);
  }
}

// ----- Enumerable residual kernel -----

namespace {
DiscreteMdp flip_chain() {
  DiscreteMdp mdp;
  mdp.num_states = 2;
  mdp.num_actions = 2;
  Mat stay(2, 2), flip(2, 2);
  stay << 1, 0, 0, 1;
  flip << 0, 1, 1, 0;
  mdp.T = {stay, flip};
  mdp.p0 = Vec::Constant(2, 0.5);
  mdp.validate();
  return mdp;
}
}  // namespace

TEST_CASE("residual kernel: hand-computed two-state chain") {
  DiscreteMdp mdp = flip_chain();
  DiscretePolicy ensemble;
  ensemble.probs = Mat(2, 2);
  ensemble.probs << 0.3, 0.7, 0.3, 0.7;
  // a_r = 0 keeps the ensemble mixture: stay w.p. 0.3.
  CHECK(residual_transition_probability(mdp, ensemble, 0, 0, 0) ==
        doctest::Approx(0.3).epsilon(1e-15));
  CHECK(residual_transition_probability(mdp, ensemble, 0, 0, 1) ==
        doctest::Approx(0.7).epsilon(1e-15));
  // a_r = 1 rotates the ensemble action: stay w.p. 0.7.
  CHECK(residual_transition_probability(mdp, ensemble, 0, 1, 0) ==
        doctest::Approx(0.7).epsilon(1e-15));
  CHECK(residual_transition_probability(mdp, ensemble, 0, 1, 1) ==
        doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("residual kernel: deterministic ensemble shifts the action index") {
  Rng rng(70);
  for (int trial = 0; trial < 10; ++trial) {
    int S = 2 + rng.uniform_int(3), A = 2 + rng.uniform_int(3);
    DiscreteMdp mdp;
    mdp.num_states = S;
    mdp.num_actions = A;
    for (int a = 0; a < A; ++a) {
      Mat m(S, S);
      for (int s = 0; s < S; ++s) {
        Vec row(S);
        for (int s2 = 0; s2 < S; ++s2) row[s2] = rng.uniform(0.01, 1.0);
        m.row(s) = row.transpose() / row.sum();
      }
      mdp.T.push_back(m);
    }
    mdp.p0 = Vec::Constant(S, 1.0 / S);
    int fixed = rng.uniform_int(A);
    DiscretePolicy det;
    det.probs = Mat::Zero(S, A);
    det.probs.col(fixed).setOnes();
    for (int s = 0; s < S; ++s) {
      for (int a_r = 0; a_r < A; ++a_r) {
        for (int s2 = 0; s2 < S; ++s2) {
          CHECK(residual_transition_probability(mdp, det, s, a_r, s2) ==
                doctest::Approx(mdp.T[(fixed + a_r) % A](s, s2)).epsilon(1e-15));
        }
      }
    }
  }
}

TEST_CASE("residual kernel: rows are distributions for random instances") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    int S = 2 + rng.uniform_int(4), A = 2 + rng.uniform_int(4);
    DiscreteMdp mdp;
    mdp.num_states = S;
    mdp.num_actions = A;
    for (int a = 0; a < A; ++a) {
      Mat m(S, S);
      for (int s = 0; s < S; ++s) {
        Vec row(S);
        for (int s2 = 0; s2 < S; ++s2) row[s2] = rng.uniform(0.0, 1.0) + 1e-3;
        m.row(s) = row.transpose() / row.sum();
      }
      mdp.T.push_back(m);
    }
    mdp.p0 = Vec::Constant(S, 1.0 / S);
    DiscretePolicy ens;
    ens.probs = Mat(S, A);
    for (int s = 0; s < S; ++s) {
      Vec row(A);
      for (int a = 0; a < A; ++a) row[a] = rng.uniform(0.01, 1.0);
      ens.probs.row(s) = row.transpose() / row.sum();
    }
    for (int s = 0; s < S; ++s) {
      for (int a_r = 0; a_r < A; ++a_r) {
        double total = 0.0;
        for (int s2 = 0; s2 < S; ++s2) {
          double p = residual_transition_probability(mdp, ens, s, a_r, s2);
          CHECK(p >= 0.0);
          total += p;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("residual kernel: continuous ensembles are not enumerable") {
  TreeEnv env(2);
  GaussianCombineEnsemble ens(make_expert_bank(env));
  CHECK_THROWS_AS(
      residual_transition_probability(env, ens, Vec::Zero(1), Vec::Zero(2),
                                      Vec::Zero(1)),
      NotEnumerable);
}

TEST_CASE("discrete mdp validation rejects bad rows") {
  DiscreteMdp mdp = flip_chain();
  mdp.T[0](0, 0) = 0.5;  // row now sums to 0.5
  CHECK_THROWS_AS(mdp.validate(), Error);
  DiscreteMdp wrong = flip_chain();
  wrong.T.pop_back();
  CHECK_THROWS_AS(wrong.validate(), DimensionMismatch);
}
