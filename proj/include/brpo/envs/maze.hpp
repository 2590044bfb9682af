// Latent-goal mazes: a 2-D point agent among k candidate goals, exactly one
// of which is active. Sensing is free and returns the distance to the
// active goal corrupted by noise proportional to that distance, so the
// measurement sharpens as the agent closes in. The 4-goal variant ends on
// any goal (+500 active / -500 inactive); the 10-goal variant penalizes an
// inactive goal by -50 once and continues.
#pragma once

#include "brpo/env.hpp"
#include "brpo/envs/doors.hpp"  // sample_start
#include "brpo/layout.hpp"

namespace brpo {

class MazeEnv : public Env {
 public:
  // Observation layout:
  //   [0] sensed flag, [1] distance measurement,
  //   [2] goal-event flag, [3] goal index, [4] goal-active flag
  static constexpr int kObsDim = 5;

  enum class Variant { kTerminal4, kPersistent10 };

  explicit MazeEnv(Variant variant = Variant::kTerminal4,
                   double noise_alpha = 0.1)
      : variant_(variant), alpha_(noise_alpha) {
    bool ten = variant == Variant::kPersistent10;
    layout_ = Layout::builtin(ten ? "maze10" : "maze4");
    const int k = static_cast<int>(layout_.goals.size());
    spec_.name = ten ? "maze10" : "maze4";
    // State carries per-goal visited flags in the persistent variant so the
    // once-per-goal penalty stays a pure function of (state, action).
    spec_.state_dim = ten ? 2 + k : 2;
    spec_.action_dim = 3;  // [dx, dy, sense]
    spec_.obs_dim = kObsDim;
    spec_.latent_k = k;
    spec_.horizon = ten ? 750 : 500;
    spec_.discount = ten ? 0.995 : 0.99;
    spec_.action_low = Vec(3);
    spec_.action_low << -2.0, -2.0, -5.0;
    spec_.action_high = Vec(3);
    spec_.action_high << 2.0, 2.0, 5.0;
    spec_.sense_channel = 2;
  }

  const Layout& layout() const { return layout_; }
  Variant variant() const { return variant_; }

  const EnvSpec& spec() const override { return spec_; }

  std::pair<Vec, LatentSample> reset(Rng& rng) const override {
    LatentSample latent;
    latent.index = rng.uniform_int(spec_.latent_k);
    latent.params = Vec(2);
    latent.params << layout_.goals[latent.index].center.x(),
        layout_.goals[latent.index].center.y();
    Vec state = Vec::Zero(spec_.state_dim);
    Vec2 start = DoorsEnv::sample_start(layout_, rng);
    state[0] = start.x();
    state[1] = start.y();
    return {state, latent};
  }

  StepResult step(const Vec& state, const LatentSample& latent,
                  const Vec& action, Rng& rng) const override {
    if (action.size() != 3)
      throw DimensionMismatch("maze action must have 3 entries");
    StepResult r;
    r.observation = Vec::Zero(kObsDim);
    r.observation[3] = -1.0;

    Vec2 pos(state[0], state[1]);
    MoveOutcome mv = move_agent(layout_, pos, Vec2(action[0], action[1]));
    r.next_state = state;
    r.next_state[0] = mv.pos.x();
    r.next_state[1] = mv.pos.y();

    // Goal entry events. Discs are disjoint, so at most one can fire.
    r.info["reached_goal"] = 0.0;
    for (int g = 0; g < spec_.latent_k; ++g) {
      if (!layout_.goals[g].contains(mv.pos)) continue;
      bool active = g == latent.index;
      bool entered = !layout_.goals[g].contains(pos);
      if (variant_ == Variant::kTerminal4) {
        r.reward += active ? 500.0 : -500.0;
        r.done = true;
        record_event(r, g, active);
        r.info["reached_goal"] = active ? 1.0 : 0.0;
      } else if (active) {
        r.reward += 500.0;
        r.done = true;
        record_event(r, g, true);
        r.info["reached_goal"] = 1.0;
      } else if (entered && state[2 + g] < 0.5) {
        r.reward -= 50.0;
        r.next_state[2 + g] = 1.0;
        record_event(r, g, false);
      }
      break;
    }

    if (action[2] > 0.0) {
      double d = (mv.pos - layout_.goals[latent.index].center).norm();
      r.observation[0] = 1.0;
      r.observation[1] = d + alpha_ * d * rng.normal();
      r.info["sensed"] = 1.0;
    } else {
      r.info["sensed"] = 0.0;
    }
    return r;
  }

  double observation_likelihood(const Vec&, const Vec&, const Vec& next_state,
                                const Vec& obs, int hypothesis) const override {
    double lik = 1.0;
    int event_goal = static_cast<int>(obs[3]);
    if (obs[2] > 0.5 && event_goal >= 0) {
      bool active = obs[4] > 0.5;
      if ((hypothesis == event_goal) != active) return 0.0;
    }
    if (obs[0] > 0.5) {
      Vec2 pos(next_state[0], next_state[1]);
      double d = (pos - layout_.goals[hypothesis].center).norm();
      double sigma = alpha_ * d;
      double meas = obs[1];
      if (sigma <= 0.0) {
        // Exactly at the hypothesized goal the sensor is noiseless.
        return std::abs(meas - d) < 1e-12 ? 1e12 : 0.0;
      }
      double z = (meas - d) / sigma;
      lik *= std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
    }
    return lik;
  }

  Vec hypothesis_params(int i) const override {
    Vec p(2);
    p << layout_.goals[i].center.x(), layout_.goals[i].center.y();
    return p;
  }

  Vec policy_state_scale() const override {
    Vec s = Vec::Ones(spec_.state_dim);
    s[0] = 1.0 / layout_.bounds.x1;
    s[1] = 1.0 / layout_.bounds.y1;
    return s;
  }

 private:
  static void record_event(StepResult& r, int goal, bool active) {
    r.observation[2] = 1.0;
    r.observation[3] = static_cast<double>(goal);
    r.observation[4] = active ? 1.0 : 0.0;
  }

  Variant variant_;
  double alpha_;
  Layout layout_;
  EnvSpec spec_;
};

}  // namespace brpo
