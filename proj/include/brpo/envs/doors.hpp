// Doors environment: a 2-D point agent must cross a wall pierced by four
// doors, each independently open with probability 0.5, to reach a goal
// region behind it. The agent can pay -1 to read a noisy per-door
// open/closed sensor whose accuracy decays exponentially with distance;
// crashing into a closed door costs -10 and identifies that door exactly.
#pragma once

#include "brpo/env.hpp"
#include "brpo/layout.hpp"

namespace brpo {

class DoorsEnv : public Env {
 public:
  // Observation layout:
  //   [0] sensed flag, [1..4] noisy per-door open bits,
  //   [5] crashed door index (-1 none), [6] passed door index (-1 none)
  static constexpr int kObsDim = 7;

  explicit DoorsEnv(Layout layout = Layout::builtin("doors"),
                    double noise_lambda = 0.5, double discount = 0.99)
      : layout_(std::move(layout)), lambda_(noise_lambda) {
    if (layout_.doors.size() != 4)
      throw Error("doors layout must declare exactly 4 doors");
    if (layout_.goals.size() != 1)
      throw Error("doors layout must declare exactly 1 goal");
    spec_.name = "doors";
    spec_.state_dim = 2;
    spec_.action_dim = 3;  // [dx, dy, sense]
    spec_.obs_dim = kObsDim;
    spec_.latent_k = 16;
    spec_.horizon = 300;
    spec_.discount = discount;
    spec_.action_low = Vec(3);
    spec_.action_low << -2.0, -2.0, -5.0;
    spec_.action_high = Vec(3);
    spec_.action_high << 2.0, 2.0, 5.0;
    spec_.sense_channel = 2;
  }

  const Layout& layout() const { return layout_; }
  double noise_lambda() const { return lambda_; }

  static bool door_open(int config, int door) { return (config >> door) & 1; }

  // Sensor accuracy for a single door read at distance d.
  double sense_accuracy(double d) const {
    return 0.5 + 0.5 * std::exp(-lambda_ * d);
  }

  // Distance from the agent to the wall band containing the doors (the
  // sensing-locality diagnostics bin sensing events by this).
  double wall_distance(const Vec& state) const {
    double y0 = layout_.doors[0].y0, y1 = layout_.doors[0].y1;
    return std::max({y0 - state[1], state[1] - y1, 0.0});
  }

  const EnvSpec& spec() const override { return spec_; }

  std::pair<Vec, LatentSample> reset(Rng& rng) const override {
    LatentSample latent;
    latent.params = Vec(4);
    latent.index = 0;
    for (int j = 0; j < 4; ++j) {
      int bit = rng.bernoulli(0.5) ? 1 : 0;
      latent.params[j] = bit;
      latent.index |= bit << j;
    }
    return {sample_start(layout_, rng), latent};
  }

  StepResult step(const Vec& state, const LatentSample& latent,
                  const Vec& action, Rng& rng) const override {
    if (action.size() != 3)
      throw DimensionMismatch("doors action must have 3 entries");
    StepResult r;
    r.observation = Vec::Zero(kObsDim);
    r.observation[5] = -1.0;
    r.observation[6] = -1.0;

    Vec2 pos(state[0], state[1]);
    Vec2 delta(action[0], action[1]);
    std::vector<Rect> closed;
    std::vector<int> closed_ids;
    for (int j = 0; j < 4; ++j) {
      if (!door_open(latent.index, j)) {
        closed.push_back(layout_.doors[j].rect());
        closed_ids.push_back(j);
      }
    }
    MoveOutcome mv = move_agent(layout_, pos, delta, closed);
    if (mv.extra_hit >= 0) {
      int door = closed_ids[mv.extra_hit];
      r.reward -= 10.0;
      r.observation[5] = static_cast<double>(door);
      r.info["crashed"] = static_cast<double>(door);
    } else {
      r.info["crashed"] = -1.0;
      // Touching a door's gap without a crash proves that door is open.
      Vec2 moved = mv.pos - pos;
      for (int j = 0; j < 4; ++j) {
        Rect gap = layout_.doors[j].rect();
        if (gap.contains(mv.pos) || sweep_hit(pos, moved, gap) <= 1.0) {
          r.observation[6] = static_cast<double>(j);
          break;
        }
      }
    }
    r.next_state = Vec(2);
    r.next_state << mv.pos.x(), mv.pos.y();

    if (action[2] > 0.0) {
      r.reward -= 1.0;
      r.observation[0] = 1.0;
      for (int j = 0; j < 4; ++j) {
        double d = (mv.pos - layout_.doors[j].center()).norm();
        bool truth = door_open(latent.index, j);
        bool read = rng.uniform01() < sense_accuracy(d) ? truth : !truth;
        r.observation[1 + j] = read ? 1.0 : 0.0;
      }
      r.info["sensed"] = 1.0;
    } else {
      r.info["sensed"] = 0.0;
    }

    if (layout_.goals[0].contains(mv.pos)) {
      r.reward += 100.0;
      r.done = true;
      r.info["reached_goal"] = 1.0;
    } else {
      r.info["reached_goal"] = 0.0;
    }
    return r;
  }

  double observation_likelihood(const Vec&, const Vec&, const Vec& next_state,
                                const Vec& obs, int hypothesis) const override {
    double lik = 1.0;
    int crash = static_cast<int>(obs[5]);
    if (crash >= 0 && door_open(hypothesis, crash)) return 0.0;
    int passed = static_cast<int>(obs[6]);
    if (passed >= 0 && !door_open(hypothesis, passed)) return 0.0;
    if (obs[0] > 0.5) {
      Vec2 pos(next_state[0], next_state[1]);
      for (int j = 0; j < 4; ++j) {
        double p = sense_accuracy((pos - layout_.doors[j].center()).norm());
        bool read = obs[1 + j] > 0.5;
        lik *= (read == door_open(hypothesis, j)) ? p : 1.0 - p;
      }
    }
    return lik;
  }

  Vec hypothesis_params(int i) const override {
    Vec p(4);
    for (int j = 0; j < 4; ++j) p[j] = door_open(i, j) ? 1.0 : 0.0;
    return p;
  }

  Vec policy_state_scale() const override {
    Vec s(2);
    s << 1.0 / layout_.bounds.x1, 1.0 / layout_.bounds.y1;
    return s;
  }

  // Marginal open probability per door under a 16-way belief. The belief
  // stays an exact product of these marginals because every evidence
  // channel factorizes over doors.
  static Vec door_marginals(const CategoricalBelief& b) {
    if (b.size() != 16) throw SupportMismatch("doors belief must have 16 entries");
    Vec m = Vec::Zero(4);
    for (int c = 0; c < 16; ++c) {
      for (int j = 0; j < 4; ++j) {
        if (door_open(c, j)) m[j] += b[c];
      }
    }
    return m;
  }

  static Vec2 sample_start(const Layout& lay, Rng& rng) {
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    double rad = lay.start_radius * std::sqrt(rng.uniform01());
    return lay.start + rad * Vec2(std::cos(ang), std::sin(ang));
  }

 private:
  Layout layout_;
  double lambda_;
  EnvSpec spec_;
};

}  // namespace brpo
