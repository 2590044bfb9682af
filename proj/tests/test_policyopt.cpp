// Networks, exact gradients, GAE, PPO surrogate mechanics and checkpoints.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <vector>

#include "brpo/harness.hpp"
#include "brpo/policyopt.hpp"

using namespace brpo;

namespace {

// Independent scalar-loop forward pass used to cross-check mlp_forward.
Vec loop_forward(const Mlp& net, const Vec& x) {
  Vec h = x;
  for (int l = 0; l < net.layers(); ++l) {
    Vec z = net.W[l] * h + net.b[l];
    if (l + 1 < net.layers()) {
      for (int i = 0; i < z.size(); ++i) z[i] = std::tanh(z[i]);
    }
    h = z;
  }
  return h;
}

}  // namespace

TEST_CASE("mlp: create shapes, Glorot bounds, zero output head") {
  Rng rng(80);
  Mlp net = Mlp::create({5, 7, 7, 3}, rng, true);
  CHECK(net.layers() == 3);
  CHECK(net.input_dim() == 5);
  CHECK(net.output_dim() == 3);
  CHECK(net.W[0].rows() == 7);
  CHECK(net.W[0].cols() == 5);
  CHECK(net.W[2].cwiseAbs().maxCoeff() == 0.0);  // zero-initialized head
  double bound0 = std::sqrt(6.0 / (5 + 7));
  CHECK(net.W[0].cwiseAbs().maxCoeff() <= bound0);
  CHECK(net.W[0].cwiseAbs().maxCoeff() > 0.0);
  for (const Vec& b : net.b) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp: matrix forward matches an independent scalar loop") {
  Rng rng(81);
  Mlp net = Mlp::create({4, 8, 8, 2}, rng, false);
  Mat X(6, 4);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) X(i, j) = rng.uniform(-2.0, 2.0);
  Mat Y = mlp_forward(net, X);
  for (int i = 0; i < 6; ++i) {
    Vec yi = loop_forward(net, X.row(i).transpose());
    CHECK((Y.row(i).transpose() - yi).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Row permutation equivariance (up to GEMM accumulation order).
  Mat Xp(6, 4);
  std::vector<int> perm{3, 1, 5, 0, 2, 4};
  for (int i = 0; i < 6; ++i) Xp.row(i) = X.row(perm[i]);
  Mat Yp = mlp_forward(net, Xp);
  for (int i = 0; i < 6; ++i)
    CHECK((Yp.row(i) - Y.row(perm[i])).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(mlp_forward(net, Mat::Zero(2, 5)), DimensionMismatch);
}

TEST_CASE("mlp_backward: linear layer recovers the closed-form gradient") {
  Rng rng(82);
  Mlp net = Mlp::create({3, 2}, rng, false);  // single linear layer
  Mat X(4, 3), Y(4, 2);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < 2; ++j) Y(i, j) = rng.uniform(-1.0, 1.0);
  }
  MlpCache cache;
  Mat out = mlp_forward(net, X, &cache);
  Mat err = out - Y;  // loss = sum of squared errors
  MlpGrad grad = MlpGrad::zeros_like(net);
  mlp_backward(net, cache, Mat(2.0 * err), grad);
  Mat expected_dW = 2.0 * err.transpose() * X;
  CHECK((grad.dW[0] - expected_dW).cwiseAbs().maxCoeff() < 1e-12);
  Vec expected_db = 2.0 * err.colwise().sum().transpose();
  CHECK((grad.db[0] - expected_db).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("policy: zero-initialized mean head is silent everywhere") {
  Rng rng(83);
  PolicyParams p = make_policy(3, 4, 2, 2, true, true, true, 16, -1.0, rng);
  CHECK(p.input_dim() == 3 + 4 + 2 + 2);
  for (int i = 0; i < 50; ++i) {
    Vec x = rng.normal_vec(p.input_dim());
    CHECK(policy_mean(p, x).cwiseAbs().maxCoeff() == 0.0);
  }
  // The value net is not silent.
  bool nonzero = false;
  for (int i = 0; i < 10; ++i) {
    if (std::abs(value_forward(p, rng.normal_vec(p.input_dim()))) > 1e-12)
      nonzero = true;
  }
  CHECK(nonzero);
  // Input layout flags change the expected width.
  PolicyParams q = make_policy(3, 4, 2, 2, false, true, false, 16, -1.0, rng);
  CHECK(q.input_dim() == 3 + 2);
}

TEST_CASE("gaussian_log_prob: closed-form values and invariances") {
  Vec zero1 = Vec::Zero(1);
  CHECK(gaussian_log_prob(zero1, zero1, zero1) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi))
            .epsilon(1e-15));
  // Independent dense evaluation.
  Rng rng(84);
  for (int trial = 0; trial < 30; ++trial) {
    int dim = 1 + rng.uniform_int(4);
    Vec mean = rng.normal_vec(dim);
    Vec log_std = 0.5 * rng.normal_vec(dim);
    Vec action = rng.normal_vec(dim);
    double expect = 0.0;
    for (int d = 0; d < dim; ++d) {
      double sd = std::exp(log_std[d]);
      double z = (action[d] - mean[d]) / sd;
      expect += -0.5 * z * z - std::log(sd) -
                0.5 * std::log(2.0 * std::numbers::pi);
    }
    CHECK(gaussian_log_prob(mean, log_std, action) ==
          doctest::Approx(expect).epsilon(1e-12));
    // Translation invariance.
    Vec shift = rng.normal_vec(dim);
    CHECK(gaussian_log_prob(Vec(mean + shift), log_std, Vec(action + shift)) ==
          doctest::Approx(gaussian_log_prob(mean, log_std, action))
              .epsilon(1e-12));
  }
  CHECK_THROWS_AS(gaussian_log_prob(Vec::Zero(2), Vec::Zero(1), Vec::Zero(2)),
                  DimensionMismatch);
}

TEST_CASE("gaussian entropy and sampling statistics") {
  CHECK(gaussian_entropy(Vec::Zero(1)) ==
        doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi *
                                       std::numbers::e)));
  Rng rng(85);
  Vec mean(2), log_std(2);
  mean << 1.0, -2.0;
  log_std << 0.0, std::log(0.5);
  Vec s1 = Vec::Zero(2), s2 = Vec::Zero(2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Vec a = sample_gaussian(mean, log_std, rng);
    s1 += a;
    s2 += (a - mean).cwiseAbs2();
  }
  CHECK(std::abs(s1[0] / n - 1.0) < 0.02);
  CHECK(std::abs(s1[1] / n + 2.0) < 0.02);
  CHECK(std::abs(s2[0] / n - 1.0) < 0.02);
  CHECK(std::abs(s2[1] / n - 0.25) < 0.01);
}

TEST_CASE("gae: lambda 0 gives one-step TD residuals") {
  std::vector<double> rewards{1.0, 2.0, 3.0};
  Vec values(3);
  values << 0.5, 1.5, 2.5;
  Vec adv = gae(rewards, values, 4.0, 0.9, 0.0);
  CHECK(adv[0] == doctest::Approx(1.0 + 0.9 * 1.5 - 0.5).epsilon(1e-15));
  CHECK(adv[1] == doctest::Approx(2.0 + 0.9 * 2.5 - 1.5).epsilon(1e-15));
  CHECK(adv[2] == doctest::Approx(3.0 + 0.9 * 4.0 - 2.5).epsilon(1e-15));
}

TEST_CASE("gae: gamma = lambda = 1 with zero values is reward-to-go") {
  std::vector<double> rewards{1.0, -2.0, 3.0, 0.5};
  Vec values = Vec::Zero(4);
  Vec adv = gae(rewards, values, 0.0, 1.0, 1.0);
  CHECK(adv[3] == doctest::Approx(0.5));
  CHECK(adv[2] == doctest::Approx(3.5));
  CHECK(adv[1] == doctest::Approx(1.5));
  CHECK(adv[0] == doctest::Approx(2.5));
}

TEST_CASE("gae: matches the brute-force double sum") {
  Rng rng(86);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 1 + rng.uniform_int(12);
    std::vector<double> rewards(n);
    Vec values(n);
    for (int t = 0; t < n; ++t) {
      rewards[t] = rng.uniform(-2.0, 2.0);
      values[t] = rng.uniform(-2.0, 2.0);
    }
    double bootstrap = rng.uniform(-2.0, 2.0);
    double gamma = rng.uniform(0.8, 1.0), lambda = rng.uniform(0.0, 1.0);
    Vec adv = gae(rewards, values, bootstrap, gamma, lambda);
    for (int t = 0; t < n; ++t) {
      double expect = 0.0, w = 1.0;
      for (int l = t; l < n; ++l) {
        double next_v = (l + 1 < n) ? values[l + 1] : bootstrap;
        expect += w * (rewards[l] + gamma * next_v - values[l]);
        w *= gamma * lambda;
      }
      CHECK(adv[t] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(gae({1.0, 1.0}, Vec::Zero(3), 0.0, 1.0, 1.0),
                  DimensionMismatch);
}

TEST_CASE("normalize_advantages: zero mean, unit sd, safe on constants") {
  Vec adv(4);
  adv << 1.0, 2.0, 3.0, 6.0;
  normalize_advantages(adv);
  CHECK(adv.mean() == doctest::Approx(0.0).epsilon(1e-12));
  double sd = std::sqrt(adv.array().square().sum() / adv.size());
  CHECK(sd == doctest::Approx(1.0).epsilon(1e-12));
  Vec flat = Vec::Constant(5, 3.0);
  normalize_advantages(flat);
  CHECK(flat.cwiseAbs().maxCoeff() == 0.0);
  Vec empty(0);
  normalize_advantages(empty);  // must not crash
}

namespace {

// A tiny batch around a freshly made policy; old stats are taken from the
// policy itself so the ratio starts at exactly 1.
UpdateBatch batch_at_current(const PolicyParams& p, int n, Rng& rng,
                             double advantage_scale = 1.0) {
  UpdateBatch b;
  b.inputs = Mat(n, p.input_dim());
  b.actions = Mat(n, p.action_dim);
  b.advantages = Vec(n);
  b.returns = Vec(n);
  b.old_log_prob = Vec(n);
  b.old_means = Mat(n, p.action_dim);
  b.old_log_std = p.log_std;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p.input_dim(); ++j) b.inputs(i, j) = rng.normal();
    Vec mean = policy_mean(p, b.inputs.row(i).transpose());
    Vec a = sample_gaussian(mean, p.log_std, rng);
    b.actions.row(i) = a.transpose();
    b.old_means.row(i) = mean.transpose();
    b.old_log_prob[i] = gaussian_log_prob(mean, p.log_std, a);
    b.advantages[i] = advantage_scale * rng.normal();
    b.returns[i] = rng.normal();
  }
  return b;
}

}  // namespace

TEST_CASE("ppo_loss: at ratio 1 the clip is inactive and the gradient matches") {
  Rng rng(87);
  PolicyParams p = make_policy(3, 0, 0, 2, false, false, false, 8, -0.3, rng);
  // Give the mean net nonzero output so gradients flow everywhere.
  for (auto& w : p.mean_net.W)
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) += 0.05 * rng.normal();
  UpdateBatch batch = batch_at_current(p, 24, rng);
  std::vector<int> rows(24);
  for (int i = 0; i < 24; ++i) rows[i] = i;

  PpoConfig tight;  // clip 0.2
  PpoConfig loose = tight;
  loose.clip_ratio = 1e9;  // clip can never bind
  PolicyGrad g_tight, g_loose;
  double l_tight = ppo_loss(p, batch, rows, tight, &g_tight);
  double l_loose = ppo_loss(p, batch, rows, loose, &g_loose);
  CHECK(l_tight == doctest::Approx(l_loose).epsilon(1e-12));
  for (int l = 0; l < p.mean_net.layers(); ++l) {
    CHECK((g_tight.mean.dW[l] - g_loose.mean.dW[l]).cwiseAbs().maxCoeff() <
          1e-12);
  }
  CHECK((g_tight.dlog_std - g_loose.dlog_std).cwiseAbs().maxCoeff() < 1e-12);
  // The surrogate part of the loss is exactly -mean(advantage) at ratio 1.
  PpoConfig bare = tight;
  bare.value_coef = 0.0;
  bare.entropy_coef = 0.0;
  double l_bare = ppo_loss(p, batch, rows, bare, nullptr);
  CHECK(l_bare == doctest::Approx(-batch.advantages.mean()).epsilon(1e-12));
}

TEST_CASE("ppo_loss: clipped rows contribute no policy gradient") {
  Rng rng(88);
  PolicyParams p = make_policy(2, 0, 0, 1, false, false, false, 8, 0.0, rng);
  UpdateBatch b;
  b.inputs = Mat::Zero(1, 2);
  b.actions = Mat::Zero(1, 1);
  b.advantages = Vec::Constant(1, 1.0);
  b.returns = Vec::Zero(1);
  b.old_means = Mat::Zero(1, 1);
  b.old_log_std = p.log_std;
  Vec mean = policy_mean(p, Vec::Zero(2));
  double lp = gaussian_log_prob(mean, p.log_std, Vec::Zero(1));
  PpoConfig cfg;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;

  SUBCASE("positive advantage, ratio 1.5") {
    b.old_log_prob = Vec::Constant(1, lp - std::log(1.5));
    PolicyGrad g;
    double loss = ppo_loss(p, b, {0}, cfg, &g);
    CHECK(loss == doctest::Approx(-1.2).epsilon(1e-12));
    for (const auto& m : g.mean.dW) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.dlog_std.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("negative advantage, ratio 0.5") {
    b.advantages = Vec::Constant(1, -1.0);
    b.old_log_prob = Vec::Constant(1, lp - std::log(0.5));
    PolicyGrad g;
    double loss = ppo_loss(p, b, {0}, cfg, &g);
    CHECK(loss == doctest::Approx(0.8).epsilon(1e-12));
    for (const auto& m : g.mean.dW) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("non-finite advantage raises") {
    b.old_log_prob = Vec::Constant(1, lp);
    b.advantages = Vec::Constant(1, std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(ppo_loss(p, b, {0}, cfg, nullptr), NonFiniteLoss);
  }
}

TEST_CASE("mean_kl: zero at the sampler, quadratic in mean shifts") {
  Rng rng(89);
  PolicyParams p = make_policy(2, 0, 0, 2, false, false, false, 8, -0.5, rng);
  UpdateBatch b = batch_at_current(p, 16, rng);
  CHECK(mean_kl(p, b) == doctest::Approx(0.0).epsilon(1e-12));
  // Shift old means by delta: KL = sum_d delta^2 / (2 sigma^2).
  double delta = 0.3;
  b.old_means.array() += delta;
  double sigma2 = std::exp(2.0 * p.log_std[0]);
  CHECK(mean_kl(p, b) ==
        doctest::Approx(2.0 * delta * delta / (2.0 * sigma2)).epsilon(1e-12));
}

TEST_CASE("ppo_update: zero learning rate leaves parameters bit-identical") {
  Rng rng(90);
  PolicyParams p = make_policy(3, 2, 0, 2, true, false, false, 8, -0.4, rng);
  UpdateBatch b = batch_at_current(p, 32, rng);
  PpoConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  PolicyParams before = p;
  Adam opt(p);
  Rng urng(91);
  ppo_update(p, opt, b, cfg, urng);
  for (int l = 0; l < p.mean_net.layers(); ++l) {
    CHECK(p.mean_net.W[l] == before.mean_net.W[l]);
    CHECK(p.value_net.W[l] == before.value_net.W[l]);
  }
  CHECK(p.log_std == before.log_std);
  CHECK_THROWS_AS(ppo_update(p, opt, UpdateBatch{}, cfg, urng), Error);
}

TEST_CASE("ppo_update: log_std stays inside its clamp") {
  Rng rng(92);
  PolicyParams p = make_policy(2, 0, 0, 1, false, false, false, 8, 1.9, rng);
  UpdateBatch b = batch_at_current(p, 64, rng, 5.0);
  PpoConfig cfg;
  cfg.learning_rate = 0.5;  // aggressive on purpose
  cfg.epochs = 8;
  Adam opt(p);
  Rng urng(93);
  ppo_update(p, opt, b, cfg, urng);
  CHECK(p.log_std.maxCoeff() <= 2.0);
  CHECK(p.log_std.minCoeff() >= -5.0);
}

TEST_CASE("analytic gradients agree with finite differences") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    double worst = gradient_check(seed);
    CAPTURE(seed);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("ppo: one update improves a two-armed Gaussian bandit") {
  // Maximize r(a) = -(a - 0.7)^2 from a zero-initialized policy.
  auto eval_policy = [](const PolicyParams& p) {
    double a = policy_mean(p, Vec::Zero(1))[0];
    return -(a - 0.7) * (a - 0.7);
  };
  auto run_iteration = [](PolicyParams& p, Adam& opt, Rng& rng) {
    const int n = 256;
    UpdateBatch b;
    b.inputs = Mat::Zero(n, 1);
    b.actions = Mat(n, 1);
    b.advantages = Vec(n);
    b.returns = Vec(n);
    b.old_log_prob = Vec(n);
    b.old_means = Mat(n, 1);
    b.old_log_std = p.log_std;
    Vec mean = policy_mean(p, Vec::Zero(1));
    for (int i = 0; i < n; ++i) {
      Vec a = sample_gaussian(mean, p.log_std, rng);
      double r = -(a[0] - 0.7) * (a[0] - 0.7);
      b.actions(i, 0) = a[0];
      b.old_means(i, 0) = mean[0];
      b.old_log_prob[i] = gaussian_log_prob(mean, p.log_std, a);
      b.advantages[i] = r;
      b.returns[i] = r;
    }
    normalize_advantages(b.advantages);
    PpoConfig cfg;
    cfg.learning_rate = 1e-3;
    ppo_update(p, opt, b, cfg, rng);
  };

  int improved_after_one = 0;
  int monotone_pairs = 0, total_pairs = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, 0xBA2D17));
    PolicyParams p = make_policy(1, 0, 0, 1, false, false, false, 16, -0.5, rng);
    Adam opt(p);
    std::vector<double> evals{eval_policy(p)};
    for (int it = 0; it < 12; ++it) {
      run_iteration(p, opt, rng);
      evals.push_back(eval_policy(p));
    }
    if (evals[1] > evals[0]) ++improved_after_one;
    for (size_t i = 1; i + 1 < evals.size(); ++i) {
      ++total_pairs;
      if (evals[i + 1] >= evals[i] - 1e-9) ++monotone_pairs;
    }
  }
  // Sign test: 15/20 one-update improvements gives p < 0.05.
  CHECK(improved_after_one >= 15);
  CHECK(monotone_pairs >= static_cast<int>(0.9 * total_pairs));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(94);
  PolicyParams p = make_policy(3, 4, 2, 2, true, false, true, 8, -0.7, rng);
  for (auto& w : p.mean_net.W)
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) += rng.normal();
  for (auto& b : p.mean_net.b)
    for (int i = 0; i < b.size(); ++i) b[i] = rng.normal() * 1e-7;
  p.log_std[0] = -0.123456789123456789;
  p.config_hash = 0xabcdef0123456789ull;
  std::map<std::string, std::string> meta{{"kind", "final"},
                                          {"note", "two words"}};
  std::string path =
      (std::filesystem::temp_directory_path() / "ckpt_roundtrip.txt").string();
  save_checkpoint(path, p, meta);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.meta == meta);
  CHECK(ck.params.config_hash == p.config_hash);
  CHECK(ck.params.include_belief == p.include_belief);
  CHECK(ck.params.include_map_params == p.include_map_params);
  CHECK(ck.params.include_recommendation == p.include_recommendation);
  CHECK(ck.params.log_std == p.log_std);
  for (int l = 0; l < p.mean_net.layers(); ++l) {
    CHECK(ck.params.mean_net.W[l] == p.mean_net.W[l]);
    CHECK(ck.params.mean_net.b[l] == p.mean_net.b[l]);
    CHECK(ck.params.value_net.W[l] == p.value_net.W[l]);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.txt"), Error);
}
