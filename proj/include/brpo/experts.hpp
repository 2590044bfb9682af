// Clairvoyant per-latent experts and the fixed combiners that turn a bank
// of expert recommendations plus a belief into one executed action. Experts
// come from optimal control (LQR for cartpole, shortest-path planning for
// the 2-D arenas, exact navigation for the tree), never from learning, so
// they are deterministic and independently testable.
#pragma once

#include <memory>

#include "brpo/belief.hpp"
#include "brpo/env.hpp"
#include "brpo/envs/cartpole.hpp"
#include "brpo/envs/doors.hpp"
#include "brpo/envs/maze.hpp"
#include "brpo/envs/tree.hpp"
#include "brpo/planner.hpp"

namespace brpo {

// ----- LQR -----

struct LqrGain {
  Mat K;  // action_dim x state_dim feedback gain (u = -K s)
  Mat P;  // cost-to-go matrix
};

// Discrete-time algebraic Riccati equation by fixed-point iteration.
inline LqrGain lqr_solve(const Mat& A, const Mat& B, const Mat& Q,
                         const Mat& R) {
  Mat P = Q;
  for (int it = 0; it < 100000; ++it) {
    Mat BtPB = R + B.transpose() * P * B;
    Mat K = BtPB.ldlt().solve(B.transpose() * P * A);
    Mat Pn = Q + A.transpose() * P * (A - B * K);
    Pn = 0.5 * (Pn + Pn.transpose());
    if (!Pn.allFinite()) throw RiccatiDiverged();
    double delta = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (delta < 1e-9) {
      LqrGain g;
      g.P = P;
      g.K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
      return g;
    }
  }
  throw RiccatiDiverged("no convergence within iteration cap");
}

// ----- Recommendations and combiners -----

struct ExpertRecommendation {
  Mat means;            // k x action_dim
  Mat covariances;      // k x action_dim, diagonal entries (strictly positive)
  CategoricalBelief weights;
  Vec combined_action;  // a_e
};

// Argmax of the belief-weighted sum of expert log-densities (the Jensen
// lower bound): a* = [sum_i b_i S_i^-1]^-1 sum_i b_i S_i^-1 mu_i. With
// diagonal covariances this decouples per action dimension.
inline Vec combine_gaussian(const CategoricalBelief& belief, const Mat& means,
                            const Mat& covariances) {
  const int k = static_cast<int>(means.rows());
  const int dim = static_cast<int>(means.cols());
  if (belief.size() != k) throw SupportMismatch();
  // A point mass selects one expert; return its action exactly rather
  // than routing it through the weighted sum (which can lose an ulp).
  for (int i = 0; i < k; ++i)
    if (belief[i] == 1.0) return means.row(i).transpose();
  Vec num = Vec::Zero(dim), den = Vec::Zero(dim);
  for (int i = 0; i < k; ++i) {
    for (int d = 0; d < dim; ++d) {
      double prec = belief[i] / covariances(i, d);
      num[d] += prec * means(i, d);
      den[d] += prec;
    }
  }
  for (int d = 0; d < dim; ++d) {
    if (!(den[d] > 0.0)) throw SingularPrecision();
  }
  return num.cwiseQuotient(den);
}

// ----- Expert banks -----

// Immutable bank of per-hypothesis experts for one environment.
class ExpertBank {
 public:
  virtual ~ExpertBank() = default;
  virtual int num_experts() const = 0;
  virtual int action_dim() const = 0;
  // Fills one row of means/covariances per expert for the given state.
  virtual void recommend(const Vec& state, Mat& means, Mat& covs) const = 0;
};

class TreeExpertBank : public ExpertBank {
 public:
  explicit TreeExpertBank(const TreeEnv& env) : env_(&env) {}
  int num_experts() const override { return env_->leaves(); }
  int action_dim() const override { return 2; }

  void recommend(const Vec& state, Mat& means, Mat& covs) const override {
    int node = TreeEnv::node_of(state);
    means.setZero(num_experts(), 2);
    covs.setConstant(num_experts(), 2, 0.05 * 0.05);
    if (env_->is_leaf(node)) return;
    for (int i = 0; i < num_experts(); ++i) {
      means(i, 0) = env_->direction_to(node, i) == TreeEnv::kRight ? 1.0 : -1.0;
      // Sense mean 0: the combined channel never exceeds 0 on its own.
    }
  }

 private:
  const TreeEnv* env_;
};

// Goal-seeking experts over a layout; one precomputed distance field per
// hypothesis. Used for both mazes (per-goal fields) and doors (per-config
// fields with that config's closed doors as obstacles).
class PlannerExpertBank : public ExpertBank {
 public:
  static constexpr double kMoveVar = 0.05 * 0.05;

  explicit PlannerExpertBank(const MazeEnv& env) {
    const Layout& lay = env.layout();
    for (const auto& g : lay.goals) {
      fields_.push_back(std::make_unique<DistanceField>(lay, g.center));
    }
  }

  explicit PlannerExpertBank(const DoorsEnv& env) {
    const Layout& lay = env.layout();
    Vec2 goal = lay.goals[0].center;
    // A config with every door closed has no path to the goal; that
    // expert heads to a staging point just below the wall instead.
    Vec2 staging(0.5 * (lay.bounds.x0 + lay.bounds.x1), lay.doors[0].y0 - 1.0);
    for (int c = 0; c < 16; ++c) {
      std::vector<Rect> closed;
      for (int j = 0; j < 4; ++j) {
        if (!DoorsEnv::door_open(c, j)) closed.push_back(lay.doors[j].rect());
      }
      auto field = std::make_unique<DistanceField>(lay, goal, closed);
      if (!field->reachable(lay.start)) {
        field = std::make_unique<DistanceField>(lay, staging, std::move(closed));
      }
      fields_.push_back(std::move(field));
    }
  }

  int num_experts() const override { return static_cast<int>(fields_.size()); }
  int action_dim() const override { return 3; }

  void recommend(const Vec& state, Mat& means, Mat& covs) const override {
    const int k = num_experts();
    means.setZero(k, 3);
    covs.setConstant(k, 3, kMoveVar);
    Vec2 pos(state[0], state[1]);
    for (int i = 0; i < k; ++i) {
      // A position the hypothesis deems unreachable (e.g. past a door that
      // would have been closed) always carries zero belief, so a zero
      // command is both safe and weightless in the combination.
      if (!fields_[i]->reachable(pos)) continue;
      Vec2 cmd = fields_[i]->move_command(pos);
      means(i, 0) = cmd.x();
      means(i, 1) = cmd.y();
      // Sense channel mean 0: raw experts never sense.
    }
  }

  const DistanceField& field(int i) const { return *fields_[i]; }

 private:
  std::vector<std::unique_ptr<DistanceField>> fields_;
};

class LqrExpertBank : public ExpertBank {
 public:
  static constexpr double kActionVar = 0.5 * 0.5;

  explicit LqrExpertBank(const CartpoleEnv& env) {
    // Linearize the RK4 step map at the upright equilibrium for each grid
    // center and solve the resulting discrete Riccati equation.
    Mat Q = Vec4(1.0, 1.0, 10.0, 1.0).asDiagonal();
    Mat R = Mat::Constant(1, 1, 0.1);
    for (int i = 0; i < env.spec().latent_k; ++i) {
      Vec params = env.hypothesis_params(i);
      auto [A, B] = linearize(params[0], params[1]);
      gains_.push_back(lqr_solve(A, B, Q, R));
      dynamics_.push_back({A, B});
    }
  }

  static std::pair<Mat, Mat> linearize(double mass, double length) {
    const double h = 1e-5;
    Mat A(4, 4);
    for (int j = 0; j < 4; ++j) {
      Vec e = Vec::Zero(4);
      e[j] = h;
      A.col(j) = (CartpoleEnv::integrate(e, 0.0, mass, length) -
                  CartpoleEnv::integrate(-e, 0.0, mass, length)) /
                 (2.0 * h);
    }
    Mat B(4, 1);
    B.col(0) = (CartpoleEnv::integrate(Vec::Zero(4), h, mass, length) -
                CartpoleEnv::integrate(Vec::Zero(4), -h, mass, length)) /
               (2.0 * h);
    return {A, B};
  }

  int num_experts() const override { return static_cast<int>(gains_.size()); }
  int action_dim() const override { return 1; }

  void recommend(const Vec& state, Mat& means, Mat& covs) const override {
    const int k = num_experts();
    means.resize(k, 1);
    covs.setConstant(k, 1, kActionVar);
    for (int i = 0; i < k; ++i) {
      means(i, 0) = -(gains_[i].K * state)(0, 0);
    }
  }

  const LqrGain& gain(int i) const { return gains_[i]; }
  const std::pair<Mat, Mat>& linearization(int i) const { return dynamics_[i]; }

 private:
  using Vec4 = Eigen::Vector4d;
  std::vector<LqrGain> gains_;
  std::vector<std::pair<Mat, Mat>> dynamics_;
};

// Spec-level expert queries.

// Velocity recommendation of the goal_index-th planner expert; the
// covariance is the bank's fixed small diagonal.
inline std::pair<Vec, Vec> goal_expert_action(const PlannerExpertBank& bank,
                                              int goal_index,
                                              const Vec& state) {
  if (goal_index >= bank.num_experts()) throw Error("goal index out of range");
  Mat means, covs;
  bank.recommend(state, means, covs);
  return {means.row(goal_index).transpose(), covs.row(goal_index).transpose()};
}

inline std::pair<Vec, Vec> map_expert(const CategoricalBelief& belief,
                                      const ExpertBank& bank,
                                      const Vec& state) {
  Mat means, covs;
  bank.recommend(state, means, covs);
  int i = map_index(belief);
  return {means.row(i).transpose(), covs.row(i).transpose()};
}

// ----- Ensembles (pi_e) -----

class Ensemble {
 public:
  virtual ~Ensemble() = default;
  virtual int action_dim() const = 0;
  // Expert recommendation at (state, belief); `t` feeds schedules and `rng`
  // feeds stochastic augmentations. The combined_action is what Simulate
  // executes as a_e.
  virtual ExpertRecommendation recommend(const Vec& state,
                                         const CategoricalBelief& belief,
                                         int t, Rng& rng) const = 0;
};

class GaussianCombineEnsemble : public Ensemble {
 public:
  explicit GaussianCombineEnsemble(std::shared_ptr<const ExpertBank> bank)
      : bank_(std::move(bank)) {}
  int action_dim() const override { return bank_->action_dim(); }

  ExpertRecommendation recommend(const Vec& state,
                                 const CategoricalBelief& belief, int,
                                 Rng&) const override {
    Mat means, covs;
    bank_->recommend(state, means, covs);
    Vec combined = combine_gaussian(belief, means, covs);
    return {std::move(means), std::move(covs), belief, std::move(combined)};
  }

 private:
  std::shared_ptr<const ExpertBank> bank_;
};

class MapExpertEnsemble : public Ensemble {
 public:
  explicit MapExpertEnsemble(std::shared_ptr<const ExpertBank> bank)
      : bank_(std::move(bank)) {}
  int action_dim() const override { return bank_->action_dim(); }

  ExpertRecommendation recommend(const Vec& state,
                                 const CategoricalBelief& belief, int,
                                 Rng&) const override {
    Mat means, covs;
    bank_->recommend(state, means, covs);
    Vec combined = means.row(map_index(belief)).transpose();
    return {std::move(means), std::move(covs), belief, std::move(combined)};
  }

 private:
  std::shared_ptr<const ExpertBank> bank_;
};

// A zero-mean "ensemble" for agents that act directly (BPO / UP-MLE run
// through the same rollout path with a null expert action).
class ZeroEnsemble : public Ensemble {
 public:
  explicit ZeroEnsemble(int action_dim) : dim_(action_dim) {}
  int action_dim() const override { return dim_; }

  ExpertRecommendation recommend(const Vec&, const CategoricalBelief& belief,
                                 int, Rng&) const override {
    return {Mat::Zero(belief.size(), dim_), Mat::Ones(belief.size(), dim_),
            belief, Vec::Zero(dim_)};
  }

 private:
  int dim_;
};

// Forces the sense channel of a recommendation to +1 with probability p
// (else -1), leaving movement channels untouched.
inline ExpertRecommendation random_sensing_augment(ExpertRecommendation rec,
                                                   double p, int sense_channel,
                                                   Rng& rng) {
  if (sense_channel < 0) throw SenseChannelAbsent();
  double v = rng.bernoulli(p) ? 1.0 : -1.0;
  rec.means.col(sense_channel).setConstant(v);
  rec.combined_action[sense_channel] = v;
  return rec;
}

// Sense for the first t_cut steps of the episode, then never again.
inline ExpertRecommendation scheduled_sensing_augment(ExpertRecommendation rec,
                                                      int t, int t_cut,
                                                      int sense_channel) {
  if (sense_channel < 0) throw SenseChannelAbsent();
  double v = t < t_cut ? 1.0 : -1.0;
  rec.means.col(sense_channel).setConstant(v);
  rec.combined_action[sense_channel] = v;
  return rec;
}

class RandomSensingEnsemble : public Ensemble {
 public:
  RandomSensingEnsemble(std::shared_ptr<const Ensemble> base, double p,
                        int sense_channel)
      : base_(std::move(base)), p_(p), sense_channel_(sense_channel) {
    if (sense_channel_ < 0) throw SenseChannelAbsent();
  }
  int action_dim() const override { return base_->action_dim(); }

  ExpertRecommendation recommend(const Vec& state,
                                 const CategoricalBelief& belief, int t,
                                 Rng& rng) const override {
    return random_sensing_augment(base_->recommend(state, belief, t, rng), p_,
                                  sense_channel_, rng);
  }

 private:
  std::shared_ptr<const Ensemble> base_;
  double p_;
  int sense_channel_;
};

class ScheduledSensingEnsemble : public Ensemble {
 public:
  ScheduledSensingEnsemble(std::shared_ptr<const Ensemble> base, int t_cut,
                           int sense_channel)
      : base_(std::move(base)), t_cut_(t_cut), sense_channel_(sense_channel) {
    if (sense_channel_ < 0) throw SenseChannelAbsent();
  }
  int action_dim() const override { return base_->action_dim(); }

  ExpertRecommendation recommend(const Vec& state,
                                 const CategoricalBelief& belief, int t,
                                 Rng& rng) const override {
    return scheduled_sensing_augment(base_->recommend(state, belief, t, rng),
                                     t, t_cut_, sense_channel_);
  }

 private:
  std::shared_ptr<const Ensemble> base_;
  int t_cut_;
  int sense_channel_;
};

// Default expert bank for an environment.
inline std::shared_ptr<const ExpertBank> make_expert_bank(const Env& env) {
  if (auto* t = dynamic_cast<const TreeEnv*>(&env))
    return std::make_shared<TreeExpertBank>(*t);
  if (auto* d = dynamic_cast<const DoorsEnv*>(&env))
    return std::make_shared<PlannerExpertBank>(*d);
  if (auto* m = dynamic_cast<const MazeEnv*>(&env))
    return std::make_shared<PlannerExpertBank>(*m);
  if (auto* c = dynamic_cast<const CartpoleEnv*>(&env))
    return std::make_shared<LqrExpertBank>(*c);
  throw Error("no expert bank for environment " + env.spec().name);
}

}  // namespace brpo
