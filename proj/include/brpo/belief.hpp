// Categorical beliefs over latent hypotheses and the exact posterior
// update used by the Bayes filter.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "brpo/core.hpp"

namespace brpo {

// Probability vector over k latent hypotheses. Entries stay in [0, 1] and
// sum to one within 1e-9; k is fixed for the belief's lifetime.
class CategoricalBelief {
 public:
  using Labels = std::shared_ptr<const std::vector<std::string>>;

  explicit CategoricalBelief(Vec probs, Labels labels = nullptr)
      : probs_(std::move(probs)), labels_(std::move(labels)) {
    check_valid();
  }

  static CategoricalBelief uniform(int k, Labels labels = nullptr) {
    return CategoricalBelief(Vec::Constant(k, 1.0 / k), std::move(labels));
  }

  static CategoricalBelief point_mass(int k, int index,
                                      Labels labels = nullptr) {
    Vec p = Vec::Zero(k);
    p[index] = 1.0;
    return CategoricalBelief(std::move(p), std::move(labels));
  }

  // Normalizes a nonnegative weight vector. Throws AllZeroPosterior when
  // the weights sum to zero.
  static CategoricalBelief from_unnormalized(Vec weights,
                                             Labels labels = nullptr) {
    // Flush denormal-range mass before normalizing.
    for (int i = 0; i < weights.size(); ++i) {
      if (weights[i] < 1e-300) weights[i] = 0.0;
    }
    double eta = weights.sum();
    if (eta <= 0.0) throw AllZeroPosterior();
    return CategoricalBelief(weights / eta, std::move(labels));
  }

  int size() const { return static_cast<int>(probs_.size()); }
  const Vec& probs() const { return probs_; }
  double operator[](int i) const { return probs_[i]; }
  const Labels& labels() const { return labels_; }

  std::string label(int i) const {
    if (labels_ && i < static_cast<int>(labels_->size())) return (*labels_)[i];
    return std::to_string(i);
  }

 private:
  void check_valid() const {
    if (probs_.size() < 1) throw Error("belief needs k >= 1");
    double sum = 0.0;
    for (int i = 0; i < probs_.size(); ++i) {
      double p = probs_[i];
      if (!(p >= 0.0 && p <= 1.0 + 1e-12)) throw Error("belief entry outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("belief does not sum to 1");
  }

  Vec probs_;
  Labels labels_;
};

// Observable environment state paired with the belief over hypotheses.
struct BeliefState {
  Vec env_state;
  CategoricalBelief belief;
};

// Exact Bayes posterior: posterior(i) = prior(i) * likelihood(i) / eta.
inline CategoricalBelief categorical_update(const CategoricalBelief& prior,
                                            const Vec& likelihoods) {
  if (likelihoods.size() != prior.size()) throw SupportMismatch();
  Vec w(prior.size());
  for (int i = 0; i < prior.size(); ++i) {
    if (likelihoods[i] < 0.0) throw Error("negative likelihood");
    w[i] = prior[i] * likelihoods[i];
  }
  return CategoricalBelief::from_unnormalized(std::move(w), prior.labels());
}

// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(const CategoricalBelief& b) {
  double h = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    double p = b[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h < 0.0 ? 0.0 : h;
}

inline double l1_distance(const CategoricalBelief& a,
                          const CategoricalBelief& b) {
  if (a.size() != b.size()) throw SupportMismatch();
  return (a.probs() - b.probs()).lpNorm<1>();
}

// Argmax hypothesis; ties break toward the lowest index.
inline int map_index(const CategoricalBelief& b) {
  int best = 0;
  for (int i = 1; i < b.size(); ++i) {
    if (b[i] > b[best]) best = i;
  }
  return best;
}

}  // namespace brpo
