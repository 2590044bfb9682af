// Gaussian policy and value networks with hand-rolled reverse-mode
// gradients, generalized advantage estimation, Adam, and the PPO
// clipped-surrogate update. Everything is double precision and
// deterministic given the seed; gradients are exact (finite-difference
// checked), not approximated.
#pragma once

#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "brpo/core.hpp"

namespace brpo {

// ----- Multilayer perceptron (tanh hidden layers, linear output) -----

struct Mlp {
  std::vector<Mat> W;  // W[l] is (out x in)
  std::vector<Vec> b;

  // sizes = {input, hidden..., output}. Hidden layers get Glorot-uniform
  // weights; `zero_last` zeroes the output layer (the policy-mean head is
  // born silent so the initial mixture matches the ensemble).
  static Mlp create(const std::vector<int>& sizes, Rng& rng, bool zero_last) {
    Mlp net;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      int in = sizes[l], out = sizes[l + 1];
      Mat w(out, in);
      if (zero_last && l + 2 == sizes.size()) {
        w.setZero();
      } else {
        double a = std::sqrt(6.0 / (in + out));
        for (int i = 0; i < out; ++i)
          for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-a, a);
      }
      net.W.push_back(std::move(w));
      net.b.push_back(Vec::Zero(out));
    }
    return net;
  }

  int input_dim() const { return static_cast<int>(W.front().cols()); }
  int output_dim() const { return static_cast<int>(W.back().rows()); }
  int layers() const { return static_cast<int>(W.size()); }
};

// Activations kept for the backward pass; H[0] is the input batch and
// H[l] the output of layer l (post-tanh for hidden, linear for the last).
struct MlpCache {
  std::vector<Mat> H;
};

// Rows of X are samples.
inline Mat mlp_forward(const Mlp& net, const Mat& X, MlpCache* cache = nullptr) {
  if (X.cols() != net.input_dim())
    throw DimensionMismatch("network input has width " + std::to_string(X.cols()) +
                            ", expected " + std::to_string(net.input_dim()));
  if (cache) cache->H.assign(1, X);
  Mat h = X;
  for (int l = 0; l < net.layers(); ++l) {
    h = (h * net.W[l].transpose()).rowwise() + net.b[l].transpose();
    if (l + 1 < net.layers()) h = h.array().tanh().matrix();
    if (cache) cache->H.push_back(h);
  }
  return h;
}

struct MlpGrad {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  static MlpGrad zeros_like(const Mlp& net) {
    MlpGrad g;
    for (int l = 0; l < net.layers(); ++l) {
      g.dW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
      g.db.push_back(Vec::Zero(net.b[l].size()));
    }
    return g;
  }
};

// Reverse-mode accumulation: given dL/d(output batch), adds this batch's
// parameter gradients into `grad`.
inline void mlp_backward(const Mlp& net, const MlpCache& cache, Mat delta,
                         MlpGrad& grad) {
  for (int l = net.layers() - 1; l >= 0; --l) {
    grad.dW[l] += delta.transpose() * cache.H[l];
    grad.db[l] += delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * net.W[l]).array() *
              (1.0 - cache.H[l].array().square());
    }
  }
}

// ----- Policy parameters -----

struct PolicyParams {
  Mlp mean_net;
  Vec log_std;  // state-independent, clamped to [-5, 2] by updates
  Mlp value_net;

  // Input layout: scaled state, then optionally the belief vector, the
  // MAP-hypothesis parameters, and the ensemble recommendation.
  bool include_belief = true;
  bool include_map_params = false;
  bool include_recommendation = true;
  int state_dim = 0, belief_dim = 0, map_params_dim = 0, action_dim = 0;
  uint64_t config_hash = 0;

  int input_dim() const {
    return state_dim + (include_belief ? belief_dim : 0) +
           (include_map_params ? map_params_dim : 0) +
           (include_recommendation ? action_dim : 0);
  }
};

inline PolicyParams make_policy(int state_dim, int belief_dim,
                                int map_params_dim, int action_dim,
                                bool include_belief, bool include_map_params,
                                bool include_recommendation, int hidden,
                                double log_std_init, Rng& rng) {
  PolicyParams p;
  p.include_belief = include_belief;
  p.include_map_params = include_map_params;
  p.include_recommendation = include_recommendation;
  p.state_dim = state_dim;
  p.belief_dim = belief_dim;
  p.map_params_dim = map_params_dim;
  p.action_dim = action_dim;
  int in = p.input_dim();
  p.mean_net = Mlp::create({in, hidden, hidden, action_dim}, rng, true);
  p.value_net = Mlp::create({in, hidden, hidden, 1}, rng, false);
  p.log_std = Vec::Constant(action_dim, log_std_init);
  return p;
}

inline Vec policy_mean(const PolicyParams& p, const Vec& input) {
  return mlp_forward(p.mean_net, input.transpose()).row(0).transpose();
}

inline double value_forward(const PolicyParams& p, const Vec& input) {
  return mlp_forward(p.value_net, input.transpose())(0, 0);
}

// Diagonal Gaussian log density.
inline double gaussian_log_prob(const Vec& mean, const Vec& log_std,
                                const Vec& action) {
  if (mean.size() != action.size() || mean.size() != log_std.size())
    throw DimensionMismatch("gaussian_log_prob operand sizes differ");
  double lp = -0.5 * mean.size() * std::log(2.0 * std::numbers::pi);
  for (int d = 0; d < mean.size(); ++d) {
    double z = (action[d] - mean[d]) / std::exp(log_std[d]);
    lp -= 0.5 * z * z + log_std[d];
  }
  return lp;
}

inline Vec sample_gaussian(const Vec& mean, const Vec& log_std, Rng& rng) {
  Vec a(mean.size());
  for (int d = 0; d < mean.size(); ++d)
    a[d] = mean[d] + std::exp(log_std[d]) * rng.normal();
  return a;
}

// Entropy of the diagonal Gaussian (state-independent here).
inline double gaussian_entropy(const Vec& log_std) {
  return log_std.sum() +
         0.5 * log_std.size() * std::log(2.0 * std::numbers::pi * std::numbers::e);
}

// ----- Generalized advantage estimation -----

// values has one entry per reward; bootstrap_value is V(s_H) for truncated
// episodes and must be 0 when the episode actually terminated.
inline Vec gae(const std::vector<double>& rewards, const Vec& values,
               double bootstrap_value, double gamma, double lambda) {
  const int n = static_cast<int>(rewards.size());
  if (values.size() != n) throw DimensionMismatch("gae values/rewards lengths");
  Vec adv(n);
  double acc = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    double next_v = (t + 1 < n) ? values[t + 1] : bootstrap_value;
    double delta = rewards[t] + gamma * next_v - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

// ----- PPO update -----

struct UpdateBatch {
  Mat inputs;        // n x input_dim
  Mat actions;       // n x action_dim (residual actions)
  Vec advantages;    // normalized per batch
  Vec returns;       // value-regression targets
  Vec old_log_prob;  // log pi_old(a | x)
  Mat old_means;     // for exact KL(old || new)
  Vec old_log_std;

  int size() const { return static_cast<int>(inputs.rows()); }
};

inline void normalize_advantages(Vec& adv) {
  if (adv.size() == 0) return;
  double mean = adv.mean();
  double var = (adv.array() - mean).square().sum() / adv.size();
  double sd = std::sqrt(var);
  adv = (adv.array() - mean) / std::max(sd, 1e-8);
}

struct PpoConfig {
  double clip_ratio = 0.2;
  int epochs = 10;
  int minibatch = 64;
  double learning_rate = 3e-4;
  double kl_stop = 0.03;
  double entropy_coef = 1e-3;
  double value_coef = 0.5;
  double kl_coef = 0.0;  // optional KL penalty beta; 0 = pure clipping
  double log_std_min = -5.0, log_std_max = 2.0;
};

struct PolicyGrad {
  MlpGrad mean;
  MlpGrad value;
  Vec dlog_std;
};

// PPO loss on a (mini)batch: minus the clipped surrogate, plus value
// regression, minus the entropy bonus, plus the optional KL penalty.
// Returns the scalar loss; fills `grad` when non-null.
inline double ppo_loss(const PolicyParams& p, const UpdateBatch& batch,
                       const std::vector<int>& rows, const PpoConfig& cfg,
                       PolicyGrad* grad) {
  const int n = static_cast<int>(rows.size());
  const int dim = p.action_dim;
  Mat X(n, batch.inputs.cols()), A(n, dim), OldM(n, dim);
  Vec adv(n), ret(n), old_lp(n);
  for (int i = 0; i < n; ++i) {
    X.row(i) = batch.inputs.row(rows[i]);
    A.row(i) = batch.actions.row(rows[i]);
    OldM.row(i) = batch.old_means.row(rows[i]);
    adv[i] = batch.advantages[rows[i]];
    ret[i] = batch.returns[rows[i]];
    old_lp[i] = batch.old_log_prob[rows[i]];
  }

  MlpCache mean_cache, value_cache;
  Mat M = mlp_forward(p.mean_net, X, grad ? &mean_cache : nullptr);
  Mat V = mlp_forward(p.value_net, X, grad ? &value_cache : nullptr);

  Vec sigma = p.log_std.array().exp();
  Vec inv_var = sigma.array().square().inverse();

  double loss = 0.0;
  Mat dM = Mat::Zero(n, dim);
  Mat dV = Mat::Zero(n, 1);
  Vec dls = Vec::Zero(dim);

  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    // New log density and ratio.
    double lp = -0.5 * dim * log2pi - p.log_std.sum();
    for (int d = 0; d < dim; ++d) {
      double z = (A(i, d) - M(i, d)) / sigma[d];
      lp -= 0.5 * z * z;
    }
    double ratio = std::exp(lp - old_lp[i]);
    double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    loss -= std::min(ratio * adv[i], clipped * adv[i]) / n;
    bool pass_through =
        !((adv[i] > 0.0 && ratio > 1.0 + cfg.clip_ratio) ||
          (adv[i] < 0.0 && ratio < 1.0 - cfg.clip_ratio));
    if (grad && pass_through) {
      double g = -adv[i] * ratio / n;  // dLoss/d lp
      for (int d = 0; d < dim; ++d) {
        double diff = A(i, d) - M(i, d);
        dM(i, d) += g * diff * inv_var[d];          // dlp/dmu
        dls[d] += g * (diff * diff * inv_var[d] - 1.0);  // dlp/dlog_std
      }
    }
    // Value regression.
    double verr = V(i, 0) - ret[i];
    loss += cfg.value_coef * verr * verr / n;
    if (grad) dV(i, 0) = 2.0 * cfg.value_coef * verr / n;
  }

  // Entropy bonus (state-independent for a diagonal Gaussian).
  loss -= cfg.entropy_coef * gaussian_entropy(p.log_std);
  if (grad) dls.array() -= cfg.entropy_coef;

  if (cfg.kl_coef != 0.0) {
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < dim; ++d) {
        double so2 = std::exp(2.0 * batch.old_log_std[d]);
        double diff = OldM(i, d) - M(i, d);
        loss += cfg.kl_coef *
                (p.log_std[d] - batch.old_log_std[d] +
                 0.5 * (so2 + diff * diff) * inv_var[d] - 0.5) /
                n;
        if (grad) {
          dM(i, d) += cfg.kl_coef * (M(i, d) - OldM(i, d)) * inv_var[d] / n;
          dls[d] += cfg.kl_coef * (1.0 - (so2 + diff * diff) * inv_var[d]) / n;
        }
      }
    }
  }

  if (!std::isfinite(loss)) throw NonFiniteLoss();
  if (grad) {
    grad->mean = MlpGrad::zeros_like(p.mean_net);
    grad->value = MlpGrad::zeros_like(p.value_net);
    mlp_backward(p.mean_net, mean_cache, dM, grad->mean);
    mlp_backward(p.value_net, value_cache, dV, grad->value);
    grad->dlog_std = dls;
    for (const auto& m : grad->mean.dW)
      if (!m.allFinite()) throw NonFiniteGradient();
    for (const auto& m : grad->value.dW)
      if (!m.allFinite()) throw NonFiniteGradient();
    if (!grad->dlog_std.allFinite()) throw NonFiniteGradient();
  }
  return loss;
}

// Mean KL(old || new) over the whole batch (exact for diagonal Gaussians).
inline double mean_kl(const PolicyParams& p, const UpdateBatch& batch) {
  Mat M = mlp_forward(p.mean_net, batch.inputs);
  double kl = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    for (int d = 0; d < p.action_dim; ++d) {
      double so2 = std::exp(2.0 * batch.old_log_std[d]);
      double sn2 = std::exp(2.0 * p.log_std[d]);
      double diff = batch.old_means(i, d) - M(i, d);
      kl += p.log_std[d] - batch.old_log_std[d] +
            0.5 * (so2 + diff * diff) / sn2 - 0.5;
    }
  }
  return kl / batch.size();
}

// ----- Adam -----

class Adam {
 public:
  explicit Adam(const PolicyParams& p) {
    m_mean_ = MlpGrad::zeros_like(p.mean_net);
    v_mean_ = MlpGrad::zeros_like(p.mean_net);
    m_value_ = MlpGrad::zeros_like(p.value_net);
    v_value_ = MlpGrad::zeros_like(p.value_net);
    m_ls_ = Vec::Zero(p.log_std.size());
    v_ls_ = Vec::Zero(p.log_std.size());
  }

  void step(PolicyParams& p, const PolicyGrad& g, double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(kBeta1, t_);
    double c2 = 1.0 - std::pow(kBeta2, t_);
    double alpha = lr * std::sqrt(c2) / c1;
    for (int l = 0; l < p.mean_net.layers(); ++l) {
      apply(p.mean_net.W[l], g.mean.dW[l], m_mean_.dW[l], v_mean_.dW[l], alpha);
      apply(p.mean_net.b[l], g.mean.db[l], m_mean_.db[l], v_mean_.db[l], alpha);
    }
    for (int l = 0; l < p.value_net.layers(); ++l) {
      apply(p.value_net.W[l], g.value.dW[l], m_value_.dW[l], v_value_.dW[l], alpha);
      apply(p.value_net.b[l], g.value.db[l], m_value_.db[l], v_value_.db[l], alpha);
    }
    apply(p.log_std, g.dlog_std, m_ls_, v_ls_, alpha);
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  template <typename T>
  void apply(T& param, const T& grad, T& m, T& v, double alpha) {
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = (kBeta2 * v.array() + (1.0 - kBeta2) * grad.array().square()).matrix();
    param.array() -= alpha * m.array() / (v.array().sqrt() + kEps);
  }

  MlpGrad m_mean_, v_mean_, m_value_, v_value_;
  Vec m_ls_, v_ls_;
  int64_t t_ = 0;
};

struct PpoStats {
  double mean_kl = 0.0;
  int epochs_run = 0;
  double loss = 0.0;
};

// Several epochs of minibatch Adam ascent on the clipped surrogate, with
// an early stop when the policy moves too far from the sampler.
inline PpoStats ppo_update(PolicyParams& p, Adam& opt, const UpdateBatch& batch,
                           const PpoConfig& cfg, Rng& rng) {
  if (batch.size() == 0) throw Error("ppo_update on an empty batch");
  PpoStats stats;
  std::vector<int> perm(batch.size());
  for (int i = 0; i < batch.size(); ++i) perm[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(perm.begin(), perm.end());
    for (int start = 0; start < batch.size(); start += cfg.minibatch) {
      int end = std::min<int>(start + cfg.minibatch, batch.size());
      std::vector<int> rows(perm.begin() + start, perm.begin() + end);
      PolicyGrad grad;
      stats.loss = ppo_loss(p, batch, rows, cfg, &grad);
      opt.step(p, grad, cfg.learning_rate);
      for (int d = 0; d < p.log_std.size(); ++d)
        p.log_std[d] = std::clamp(p.log_std[d], cfg.log_std_min, cfg.log_std_max);
    }
    stats.epochs_run = epoch + 1;
    stats.mean_kl = mean_kl(p, batch);
    if (stats.mean_kl > cfg.kl_stop) break;
  }
  return stats;
}

// ----- Checkpoint IO (bit-exact text format) -----

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hexfloat(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v,
                             std::chars_format::hex);
  if (res.ec != std::errc()) throw Error("bad hexfloat: " + s);
  return v;
}

inline void write_mlp(std::ostream& os, const std::string& name,
                      const Mlp& net) {
  for (int l = 0; l < net.layers(); ++l) {
    os << "tensor " << name << ".W" << l << ' ' << net.W[l].rows() << ' '
       << net.W[l].cols() << '\n';
    for (int i = 0; i < net.W[l].rows(); ++i) {
      for (int j = 0; j < net.W[l].cols(); ++j)
        os << (j ? " " : "") << hexfloat(net.W[l](i, j));
      os << '\n';
    }
    os << "tensor " << name << ".b" << l << ' ' << net.b[l].size() << " 1\n";
    for (int i = 0; i < net.b[l].size(); ++i)
      os << (i ? " " : "") << hexfloat(net.b[l][i]);
    os << '\n';
  }
}

}  // namespace detail

// Versioned structured-text checkpoint: layout flags, metadata, then every
// tensor in hexfloat (round-trips bit-exactly).
inline void save_checkpoint(const std::string& path, const PolicyParams& p,
                            const std::map<std::string, std::string>& meta) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint: " + path);
  os << "brpo-checkpoint v1\n";
  for (const auto& [k, v] : meta) os << "meta " << k << ' ' << v << '\n';
  os << "layout " << p.state_dim << ' ' << p.belief_dim << ' '
     << p.map_params_dim << ' ' << p.action_dim << ' ' << p.include_belief
     << ' ' << p.include_map_params << ' ' << p.include_recommendation << '\n';
  os << "config_hash " << hex64(p.config_hash) << '\n';
  os << "tensor log_std " << p.log_std.size() << " 1\n";
  for (int i = 0; i < p.log_std.size(); ++i)
    os << (i ? " " : "") << detail::hexfloat(p.log_std[i]);
  os << '\n';
  detail::write_mlp(os, "mean_net", p.mean_net);
  detail::write_mlp(os, "value_net", p.value_net);
  if (!os) throw Error("checkpoint write failed: " + path);
}

struct Checkpoint {
  PolicyParams params;
  std::map<std::string, std::string> meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open checkpoint: " + path);
  std::string header;
  std::getline(is, header);
  if (header != "brpo-checkpoint v1")
    throw Error("unsupported checkpoint header: " + header);
  Checkpoint ck;
  PolicyParams& p = ck.params;
  std::string word;
  auto read_tensor = [&](int rows, int cols) {
    Mat m(rows, cols);
    std::string tok;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        is >> tok;
        m(i, j) = detail::parse_hexfloat(tok);
      }
    return m;
  };
  std::vector<std::pair<std::string, Mat>> tensors;
  while (is >> word) {
    if (word == "meta") {
      std::string k, v;
      is >> k;
      std::getline(is, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      ck.meta[k] = v;
    } else if (word == "layout") {
      is >> p.state_dim >> p.belief_dim >> p.map_params_dim >> p.action_dim >>
          p.include_belief >> p.include_map_params >> p.include_recommendation;
    } else if (word == "config_hash") {
      std::string h;
      is >> h;
      p.config_hash = std::stoull(h, nullptr, 16);
    } else if (word == "tensor") {
      std::string name;
      int rows, cols;
      is >> name >> rows >> cols;
      tensors.emplace_back(name, read_tensor(rows, cols));
    } else {
      throw Error("unknown checkpoint key: " + word);
    }
  }
  auto take = [&](const std::string& name) -> Mat {
    for (auto& [n, m] : tensors) {
      if (n == name) return m;
    }
    throw Error("checkpoint missing tensor " + name);
  };
  p.log_std = take("log_std").col(0);
  auto load_mlp = [&](const std::string& prefix) {
    Mlp net;
    for (int l = 0;; ++l) {
      std::string wname = prefix + ".W" + std::to_string(l);
      bool found = false;
      for (auto& [n, m] : tensors) {
        if (n == wname) {
          net.W.push_back(m);
          net.b.push_back(take(prefix + ".b" + std::to_string(l)).col(0));
          found = true;
          break;
        }
      }
      if (!found) break;
    }
    if (net.W.empty()) throw Error("checkpoint missing network " + prefix);
    return net;
  };
  p.mean_net = load_mlp("mean_net");
  p.value_net = load_mlp("value_net");
  return ck;
}

}  // namespace brpo
