// Cart-pole with latent physical parameters. The cart mass and pole length
// are drawn uniformly from [0.5, 2.0] kg x [0.5, 2.0] m each episode; the
// belief lives on the 3x3 grid of cell centers. Dynamics are the standard
// nonlinear cart-pole equations integrated with fixed-step RK4; the applied
// force carries zero-mean Gaussian actuator noise, which is what makes the
// observed next state informative about the latent parameters.
#pragma once

#include <Eigen/Cholesky>

#include "brpo/env.hpp"

namespace brpo {

class CartpoleEnv : public Env {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kPoleMass = 0.1;  // kg, fixed across hypotheses
  static constexpr double kForceBound = 10.0;
  static constexpr double kDt = 0.02;
  static constexpr double kThetaLimit = 1.2;  // rad from upright
  static constexpr double kTrackLimit = 4.0;  // m from center

  // noise_scale 1 gives the declared actuator noise (0.1 * force bound);
  // 0 makes the dynamics fully deterministic for control sanity checks.
  explicit CartpoleEnv(double noise_scale = 1.0, double discount = 0.99)
      : force_sigma_(noise_scale * 0.1 * kForceBound),
        state_sigma_(noise_scale * 1e-3) {
    spec_.name = "cartpole";
    spec_.state_dim = 4;  // [x, xdot, theta, thetadot]
    spec_.action_dim = 1;
    spec_.obs_dim = 4;  // the next state itself
    spec_.latent_k = 9;
    spec_.horizon = 500;
    spec_.discount = discount;
    spec_.action_low = Vec::Constant(1, -20.0);
    spec_.action_high = Vec::Constant(1, 20.0);
    spec_.sense_channel = -1;
  }

  double force_sigma() const { return force_sigma_; }

  // One RK4 step of the nonlinear dynamics under the given parameters; the
  // force is held constant across the step. Pure, so experts can linearize
  // through it by finite differences.
  static Vec integrate(const Vec& s, double force, double cart_mass,
                       double pole_length) {
    auto deriv = [&](const Vec& q) {
      double theta = q[2], thetadot = q[3];
      double sin_t = std::sin(theta), cos_t = std::cos(theta);
      double half = 0.5 * pole_length;
      double total = cart_mass + kPoleMass;
      double tmp = (force + kPoleMass * half * thetadot * thetadot * sin_t) / total;
      double thetaacc = (kGravity * sin_t - cos_t * tmp) /
                        (half * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total));
      double xacc = tmp - kPoleMass * half * thetaacc * cos_t / total;
      Vec dq(4);
      dq << q[1], xacc, q[3], thetaacc;
      return dq;
    };
    Vec k1 = deriv(s);
    Vec k2 = deriv(s + 0.5 * kDt * k1);
    Vec k3 = deriv(s + 0.5 * kDt * k2);
    Vec k4 = deriv(s + kDt * k3);
    return s + (kDt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  static constexpr double kCellCenters[3] = {0.75, 1.25, 1.75};

  static int cell_of(double v) {
    if (v < 1.0) return 0;
    return v < 1.5 ? 1 : 2;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::pair<Vec, LatentSample> reset(Rng& rng) const override {
    LatentSample latent;
    double mass = rng.uniform(0.5, 2.0);
    double length = rng.uniform(0.5, 2.0);
    latent.index = 3 * cell_of(mass) + cell_of(length);
    latent.params = Vec(2);
    latent.params << mass, length;
    Vec s(4);
    for (int i = 0; i < 4; ++i) s[i] = rng.uniform(-0.05, 0.05);
    return {s, latent};
  }

  StepResult step(const Vec& state, const LatentSample& latent,
                  const Vec& action, Rng& rng) const override {
    if (action.size() != 1)
      throw DimensionMismatch("cartpole action must have 1 entry");
    double force = std::clamp(action[0], -kForceBound, kForceBound);
    if (force_sigma_ > 0.0) force += force_sigma_ * rng.normal();
    StepResult r;
    r.next_state = integrate(state, force, latent.params[0], latent.params[1]);
    if (state_sigma_ > 0.0) r.next_state += state_sigma_ * rng.normal_vec(4);
    r.observation = r.next_state;
    r.reward = 1.0;
    r.done = std::abs(r.next_state[2]) > kThetaLimit ||
             std::abs(r.next_state[0]) > kTrackLimit;
    r.info["reached_goal"] = r.done ? 0.0 : 1.0;
    return r;
  }

  double observation_likelihood(const Vec& prev_state, const Vec& action,
                                const Vec& next_state, const Vec&,
                                int hypothesis) const override {
    Vec params = hypothesis_params(hypothesis);
    double force = std::clamp(action[0], -kForceBound, kForceBound);
    Vec mean = integrate(prev_state, force, params[0], params[1]);
    if (force_sigma_ <= 0.0) {
      return (next_state - mean).lpNorm<Eigen::Infinity>() < 1e-9 ? 1e12 : 0.0;
    }
    // Next-state covariance: actuator noise pushed through the step
    // (rank one) plus the small isotropic integration jitter.
    const double h = 1e-4;
    Vec jf = (integrate(prev_state, force + h, params[0], params[1]) -
              integrate(prev_state, force - h, params[0], params[1])) /
             (2.0 * h);
    Mat cov = force_sigma_ * force_sigma_ * jf * jf.transpose();
    cov.diagonal().array() += state_sigma_ * state_sigma_;
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
      throw Error("cartpole likelihood covariance not positive definite");
    Vec diff = next_state - mean;
    Vec w = llt.matrixL().solve(diff);
    double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    double log_p = -0.5 * (w.squaredNorm() + log_det + 4.0 * std::log(2.0 * M_PI));
    // The hypothesis grid only approximates the continuous parameter space,
    // so a few strongly surprising steps are expected; without a floor they
    // would underflow every hypothesis to exactly zero and void the filter.
    // The floor preserves ratios between plausible hypotheses and flattens
    // only hopeless ones.
    return std::exp(std::max(log_p, -300.0));
  }

  Vec hypothesis_params(int i) const override {
    Vec p(2);
    p << kCellCenters[i / 3], kCellCenters[i % 3];
    return p;
  }

  Vec policy_state_scale() const override {
    Vec s(4);
    s << 1.0 / kTrackLimit, 0.5, 1.0 / kThetaLimit, 0.5;
    return s;
  }

 private:
  double force_sigma_;
  double state_sigma_;
  EnvSpec spec_;
};

}  // namespace brpo
