// Exact ground truth for small instances: closed-form tree values, exact
// belief-space value iteration on the tree (beliefs there are always
// uniform over a subset of leaves), an approximate generic belief-MDP
// solver on a simplex grid, and exact sequence-probability enumeration for
// the residual-equivalence guarantee.
#pragma once

#include <functional>

#include "brpo/envs/tree.hpp"
#include "brpo/residual.hpp"

namespace brpo {

// Requires N = 2^d. Bayes-optimal play senses once at the root of the
// first episode and navigates straight to the gold afterwards.
inline std::pair<double, double> tree_bayes_optimal(int leaves, int episodes) {
  if (leaves < 2 || (leaves & (leaves - 1)) != 0)
    throw Error("leaf count must be a power of two >= 2");
  if (episodes < 0) throw Error("episode count must be >= 0");
  // Work in tenths so the printed values are exact.
  double first = 999.0 / 10.0;
  double cumulative =
      episodes == 0 ? 0.0 : (1000.0 * episodes - 1.0) / 10.0;
  return {first, cumulative};
}

// Expected cumulative PSRL return over `episodes` episodes: an average of
// (N-1)/2 failed leaves at -10 each before the gold is found, every other
// episode worth +100. Exact in doubles: 100 T - 55 (N-1).
inline double tree_psrl_expected(int leaves, int episodes) {
  if (leaves < 2 || (leaves & (leaves - 1)) != 0)
    throw Error("leaf count must be a power of two >= 2");
  if (2 * episodes < leaves - 1)
    throw RegimeViolation("too few episodes for the expected-mistakes formula");
  return 100.0 * episodes - 55.0 * (leaves - 1);
}

// ----- Exact tree belief-space value iteration -----
//
// Under the tree's observation channels every reachable belief is uniform
// over a subset of leaves, so the belief space is the finite set of
// nonempty masks and no discretization is needed.
class TreeValueIteration {
 public:
  enum Action { kLeft = 0, kRight = 1, kSense = 2 };

  explicit TreeValueIteration(int depth, double tol = 1e-10,
                              int max_sweeps = 10000)
      : env_(depth) {
    const int nodes = (1 << (depth + 1)) - 1;
    const int masks = 1 << env_.leaves();
    value_.assign(nodes * masks, 0.0);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      double change = 0.0;
      for (int v = nodes - 1; v >= 0; --v) {
        if (env_.is_leaf(v)) continue;
        for (int mask = 1; mask < masks; ++mask) {
          double best = q_value(v, mask, kLeft);
          best = std::max(best, q_value(v, mask, kRight));
          if (v == 0) best = std::max(best, q_value(v, mask, kSense));
          double& slot = value_[v * masks + mask];
          change = std::max(change, std::abs(best - slot));
          slot = best;
        }
      }
      history_.push_back(root_value());
      if (change < tol) return;
    }
    throw NonConvergence("tree value iteration did not converge");
  }

  // Q(node, uniform-over-mask belief, action).
  double q_value(int v, int mask, Action a) const {
    const int n = popcount(mask);
    if (a == kSense) {
      if (v != 0) throw IllegalAction("sense is legal only at the root");
      double total = 0.0;
      for (int g = 0; g < env_.leaves(); ++g) {
        if (mask & (1 << g)) total += value_at(0, 1 << g);
      }
      return -0.1 + total / n;
    }
    int child = 2 * v + (a == kRight ? 2 : 1);
    if (env_.is_leaf(child)) {
      int leaf = env_.leaf_of(child);
      if (mask & (1 << leaf)) {
        return (100.0 + (n - 1) * -10.0) / n;
      }
      return -10.0;
    }
    return value_at(child, mask);
  }

  double value_at(int v, int mask) const {
    return value_[v * (1 << env_.leaves()) + mask];
  }

  double root_value() const { return value_at(0, (1 << env_.leaves()) - 1); }

  Action greedy(int v, int mask) const {
    Action best = kLeft;
    double bq = q_value(v, mask, kLeft);
    double qr = q_value(v, mask, kRight);
    if (qr > bq) {
      bq = qr;
      best = kRight;
    }
    if (v == 0) {
      double qs = q_value(v, mask, kSense);
      if (qs > bq) best = kSense;
    }
    return best;
  }

  // Root value after each sweep, starting from the zero initialization
  // (monotone non-decreasing for this terminal-reward structure).
  const std::vector<double>& sweep_history() const { return history_; }

  const TreeEnv& env() const { return env_; }

 private:
  static int popcount(int mask) {
    int n = 0;
    while (mask) {
      n += mask & 1;
      mask >>= 1;
    }
    return n;
  }

  TreeEnv env_;
  std::vector<double> value_;
  std::vector<double> history_;
};

// ----- Generic belief-space value iteration (simplex grid, approximate) -----

// Latent MDP with an observable discrete state: per latent phi and action
// a, a state transition kernel, an observation kernel at the next state,
// and a reward. Used only for small oracle computations.
struct DiscreteLatentMdp {
  int num_states = 0, num_actions = 0, num_latents = 0, num_obs = 0;
  std::vector<std::vector<Mat>> T;  // T[phi][a](s, s')
  std::vector<std::vector<Mat>> O;  // O[phi][a](s', o)
  std::vector<std::vector<Vec>> R;  // R[phi][a][s]
  std::vector<bool> terminal;       // absorbing states contribute no value
  double gamma = 1.0;
};

// All belief vectors with entries i/resolution summing to 1.
inline std::vector<Vec> simplex_grid(int k, int resolution) {
  std::vector<Vec> points;
  Vec current = Vec::Zero(k);
  std::function<void(int, int)> rec = [&](int idx, int remaining) {
    if (idx == k - 1) {
      current[idx] = static_cast<double>(remaining) / resolution;
      points.push_back(current);
      return;
    }
    for (int take = 0; take <= remaining; ++take) {
      current[idx] = static_cast<double>(take) / resolution;
      rec(idx + 1, remaining - take);
    }
  };
  rec(0, resolution);
  return points;
}

class BeliefValueIteration {
 public:
  BeliefValueIteration(const DiscreteLatentMdp& mdp, int resolution = 20,
                       double tol = 1e-10, int max_sweeps = 100000)
      : mdp_(mdp), grid_(simplex_grid(mdp.num_latents, resolution)) {
    const int nb = static_cast<int>(grid_.size());
    value_.assign(mdp.num_states * nb, 0.0);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      double change = 0.0;
      for (int s = 0; s < mdp_.num_states; ++s) {
        if (mdp_.terminal[s]) continue;
        for (int bi = 0; bi < nb; ++bi) {
          double best = -std::numeric_limits<double>::infinity();
          for (int a = 0; a < mdp_.num_actions; ++a)
            best = std::max(best, q_value(s, grid_[bi], a));
          double& slot = value_[s * nb + bi];
          change = std::max(change, std::abs(best - slot));
          slot = best;
        }
      }
      if (change < tol) return;
    }
    throw NonConvergence("belief value iteration did not converge");
  }

  int snap(const Vec& belief) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < grid_.size(); ++i) {
      double d = (grid_[i] - belief).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

  // One-step lookahead with the exact belief update, values read from the
  // nearest grid belief.
  double q_value(int s, const Vec& belief, int a) const {
    double q = 0.0;
    for (int phi = 0; phi < mdp_.num_latents; ++phi)
      q += belief[phi] * mdp_.R[phi][a][s];
    for (int sn = 0; sn < mdp_.num_states; ++sn) {
      for (int o = 0; o < mdp_.num_obs; ++o) {
        Vec post(mdp_.num_latents);
        double p = 0.0;
        for (int phi = 0; phi < mdp_.num_latents; ++phi) {
          double w = belief[phi] * mdp_.T[phi][a](s, sn) * mdp_.O[phi][a](sn, o);
          post[phi] = w;
          p += w;
        }
        if (p <= 0.0) continue;
        if (!mdp_.terminal[sn]) {
          q += mdp_.gamma * p *
               value_[sn * static_cast<int>(grid_.size()) + snap(post / p)];
        }
      }
    }
    return q;
  }

  double value(int s, const Vec& belief) const {
    return value_[s * static_cast<int>(grid_.size()) + snap(belief)];
  }

 private:
  const DiscreteLatentMdp& mdp_;
  std::vector<Vec> grid_;
  std::vector<double> value_;
};

// ----- Sequence-probability enumeration (residual equivalence) -----

// Probability of the state sequence xi under the mixture policy executed
// on the original MDP, and under the residual policy executed on the
// residual MDP induced by the ensemble. The guarantee is that these agree
// for every sequence.
inline std::pair<double, double> enumerate_sequence_probability(
    const DiscreteMdp& mdp, const DiscretePolicy& ensemble,
    const DiscretePolicy& residual, const std::vector<int>& xi) {
  if (xi.empty()) throw Error("empty state sequence");
  const int A = mdp.num_actions;

  double p_original = mdp.p0[xi[0]];
  for (size_t t = 0; t + 1 < xi.size(); ++t) {
    int s = xi[t], sn = xi[t + 1];
    double step = 0.0;
    for (int a = 0; a < A; ++a) {
      // Mixture probability of executing a: sum over decompositions
      // a = a_e + a_r in the cyclic action group.
      double pi_a = 0.0;
      for (int a_e = 0; a_e < A; ++a_e) {
        int a_r = (a - a_e + A) % A;
        pi_a += ensemble.probs(s, a_e) * residual.probs(s, a_r);
      }
      step += pi_a * mdp.T[a](s, sn);
    }
    p_original *= step;
  }

  double p_residual = mdp.p0[xi[0]];
  for (size_t t = 0; t + 1 < xi.size(); ++t) {
    int s = xi[t], sn = xi[t + 1];
    double step = 0.0;
    for (int a_r = 0; a_r < A; ++a_r) {
      step += residual.probs(s, a_r) *
              residual_transition_probability(mdp, ensemble, s, a_r, sn);
    }
    p_residual *= step;
  }

  return {p_original, p_residual};
}

}  // namespace brpo
