// Binary-tree latent MDP. One leaf hides gold (+100), every other leaf a
// tiger (-10). The agent starts at the root and descends one edge per step;
// a sensing action, legal only at the root, costs -0.1 and reveals the gold
// leaf exactly. The latent hypothesis is the gold-leaf index.
#pragma once

#include "brpo/env.hpp"

namespace brpo {

class TreeEnv : public Env {
 public:
  enum Action { kLeft = 0, kRight = 1, kSense = 2 };

  // Observation layout:
  //   [0] sensed flag, [1] sensed gold-leaf index,
  //   [2] leaf-reached flag, [3] leaf index, [4] gold flag
  static constexpr int kObsDim = 5;

  explicit TreeEnv(int depth = 2, double discount = 1.0) : depth_(depth) {
    if (depth < 1) throw Error("tree depth must be >= 1");
    spec_.name = "tree" + std::to_string(leaves());
    spec_.state_dim = 1;
    spec_.action_dim = 2;  // [move, sense]
    spec_.obs_dim = kObsDim;
    spec_.latent_k = leaves();
    spec_.horizon = depth + 1;  // one sense plus a full descent
    spec_.discount = discount;
    spec_.action_low = Vec::Constant(2, -3.0);
    spec_.action_high = Vec::Constant(2, 3.0);
    spec_.sense_channel = 1;
  }

  int depth() const { return depth_; }
  int leaves() const { return 1 << depth_; }
  // Nodes in level order: root 0, children of v are 2v+1 / 2v+2.
  int first_leaf() const { return (1 << depth_) - 1; }
  bool is_leaf(int node) const { return node >= first_leaf(); }
  int leaf_of(int node) const { return node - first_leaf(); }

  // Direction from node v toward leaf index `leaf` when v is an ancestor;
  // kLeft otherwise (under that hypothesis every reachable leaf is equally
  // bad, so the expert's choice is arbitrary but fixed).
  Action direction_to(int node, int leaf) const {
    int target = first_leaf() + leaf;
    // Walk up from the target until just below `node`.
    int child = target;
    while (child > 0) {
      int parent = (child - 1) / 2;
      if (parent == node) return (child == 2 * node + 1) ? kLeft : kRight;
      child = parent;
    }
    return kLeft;
  }

  // Discrete-action step. Sensing off the root is an error by definition of
  // the task; the continuous wrapper below never produces it.
  StepResult tree_step(const Vec& state, const LatentSample& latent,
                       Action a) const {
    int node = node_of(state);
    if (is_leaf(node)) throw IllegalAction("tree: step from a terminal leaf");
    StepResult r;
    r.observation = Vec::Zero(kObsDim);
    if (a == kSense) {
      if (node != 0) throw IllegalAction("tree: sense is legal only at the root");
      r.next_state = state;
      r.reward = -0.1;
      r.observation[0] = 1.0;
      r.observation[1] = static_cast<double>(latent.index);
      r.info["sensed"] = 1.0;
      return r;
    }
    int next = 2 * node + (a == kRight ? 2 : 1);
    r.next_state = Vec::Constant(1, static_cast<double>(next));
    if (is_leaf(next)) {
      bool gold = leaf_of(next) == latent.index;
      r.reward = gold ? 100.0 : -10.0;
      r.done = true;
      r.observation[2] = 1.0;
      r.observation[3] = static_cast<double>(leaf_of(next));
      r.observation[4] = gold ? 1.0 : 0.0;
      r.info["reached_goal"] = gold ? 1.0 : 0.0;
    }
    return r;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::pair<Vec, LatentSample> reset(Rng& rng) const override {
    LatentSample latent;
    latent.index = rng.uniform_int(leaves());
    latent.params = Vec::Constant(1, static_cast<double>(latent.index));
    return {Vec::Zero(1), latent};
  }

  // Continuous embedding: action = [move, sense]. The sense channel fires
  // when its value exceeds 0 and the agent is at the root (it is inert
  // elsewhere, where sensing is undefined); otherwise move right iff the
  // move channel exceeds 0.
  StepResult step(const Vec& state, const LatentSample& latent,
                  const Vec& action, Rng&) const override {
    if (action.size() != 2)
      throw DimensionMismatch("tree action must have 2 entries");
    Action a;
    if (node_of(state) == 0 && action[1] > 0.0) {
      a = kSense;
    } else {
      a = action[0] > 0.0 ? kRight : kLeft;
    }
    return tree_step(state, latent, a);
  }

  double observation_likelihood(const Vec&, const Vec&, const Vec&,
                                const Vec& obs, int hypothesis) const override {
    if (obs[0] > 0.5) {
      return hypothesis == static_cast<int>(obs[1]) ? 1.0 : 0.0;
    }
    if (obs[2] > 0.5) {
      bool matches = hypothesis == static_cast<int>(obs[3]);
      bool gold = obs[4] > 0.5;
      return matches == gold ? 1.0 : 0.0;
    }
    return 1.0;
  }

  Vec hypothesis_params(int i) const override {
    return Vec::Constant(1, static_cast<double>(i));
  }

  Vec policy_state_scale() const override {
    // Largest node index is 2^(d+1) - 2.
    return Vec::Constant(1, 1.0 / static_cast<double>((1 << (depth_ + 1)) - 2));
  }

  static int node_of(const Vec& state) {
    return static_cast<int>(std::lround(state[0]));
  }

 private:
  int depth_;
  EnvSpec spec_;
};

}  // namespace brpo
