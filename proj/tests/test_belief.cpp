// Categorical beliefs and the exact Bayes update.
#include <doctest.h>

#include <cmath>

#include "brpo/belief.hpp"

using namespace brpo;

namespace {
Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
}  // namespace

TEST_CASE("posterior: uniform prior times likelihood renormalizes") {
  CategoricalBelief prior = CategoricalBelief::uniform(2);
  CategoricalBelief post = categorical_update(prior, vec2(0.8, 0.2));
  CHECK(post[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(post[1] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("posterior: invariant to positive likelihood rescaling") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    int k = 2 + rng.uniform_int(6);
    Vec w(k), lik(k);
    for (int i = 0; i < k; ++i) {
      w[i] = rng.uniform(0.01, 1.0);
      lik[i] = rng.uniform(0.0, 1.0);
    }
    CategoricalBelief prior = CategoricalBelief::from_unnormalized(w);
    double c = rng.uniform(0.1, 100.0);
    CategoricalBelief a = categorical_update(prior, lik);
    CategoricalBelief b = categorical_update(prior, Vec(c * lik));
    for (int i = 0; i < k; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("posterior: sequential updates equal the product update") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    int k = 2 + rng.uniform_int(5);
    Vec l1(k), l2(k);
    for (int i = 0; i < k; ++i) {
      l1[i] = rng.uniform(0.05, 1.0);
      l2[i] = rng.uniform(0.05, 1.0);
    }
    CategoricalBelief prior = CategoricalBelief::uniform(k);
    CategoricalBelief seq = categorical_update(categorical_update(prior, l1), l2);
    CategoricalBelief joint = categorical_update(prior, Vec(l1.cwiseProduct(l2)));
    for (int i = 0; i < k; ++i)
      CHECK(seq[i] == doctest::Approx(joint[i]).epsilon(1e-12));
  }
}

TEST_CASE("posterior: zero-prior entries stay zero") {
  Vec p(3);
  p << 0.5, 0.5, 0.0;
  Vec lik(3);
  lik << 1.0, 1.0, 100.0;
  CategoricalBelief post = categorical_update(CategoricalBelief(p), lik);
  CHECK(post[2] == 0.0);
  CHECK(post[0] == doctest::Approx(0.5));
}

TEST_CASE("posterior error cases") {
  CategoricalBelief prior = CategoricalBelief::uniform(2);
  CHECK_THROWS_AS(categorical_update(prior, Vec(vec2(0.0, 0.0))),
                  AllZeroPosterior);
  Vec wrong(3);
  wrong << 1.0, 1.0, 1.0;
  CHECK_THROWS_AS(categorical_update(prior, wrong), SupportMismatch);
  CHECK_THROWS_AS(categorical_update(prior, Vec(vec2(-0.1, 1.0))), Error);
}

TEST_CASE("belief validation") {
  CHECK_THROWS_AS(CategoricalBelief(vec2(0.9, 0.3)), Error);   // sums to 1.2
  CHECK_THROWS_AS(CategoricalBelief(vec2(1.5, -0.5)), Error);  // outside [0,1]
  CHECK_THROWS_AS(CategoricalBelief(Vec(0)), Error);           // empty
  CHECK_THROWS_AS(CategoricalBelief::from_unnormalized(vec2(0.0, 0.0)),
                  AllZeroPosterior);
  // Denormal-range mass is flushed before normalizing.
  CategoricalBelief tiny = CategoricalBelief::from_unnormalized(vec2(1e-310, 3.0));
  CHECK(tiny[0] == 0.0);
  CHECK(tiny[1] == 1.0);
}

TEST_CASE("entropy examples") {
  CHECK(entropy(CategoricalBelief(vec2(0.8, 0.2))) ==
        doctest::Approx(0.5004024235381879).epsilon(1e-12));
  CHECK(entropy(CategoricalBelief::point_mass(5, 2)) == 0.0);
  for (int k : {2, 4, 16}) {
    CHECK(entropy(CategoricalBelief::uniform(k)) ==
          doctest::Approx(std::log(double(k))).epsilon(1e-12));
  }
  // Uniform maximizes entropy.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Vec w(4);
    for (int i = 0; i < 4; ++i) w[i] = rng.uniform(0.01, 1.0);
    CHECK(entropy(CategoricalBelief::from_unnormalized(w)) <=
          std::log(4.0) + 1e-12);
  }
}

TEST_CASE("l1 distance is a metric on the simplex") {
  CategoricalBelief a = CategoricalBelief::point_mass(2, 0);
  CategoricalBelief b = CategoricalBelief::point_mass(2, 1);
  CHECK(l1_distance(a, b) == 2.0);
  CHECK(l1_distance(a, a) == 0.0);
  Rng rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    Vec w1(5), w2(5), w3(5);
    for (int i = 0; i < 5; ++i) {
      w1[i] = rng.uniform(0.01, 1.0);
      w2[i] = rng.uniform(0.01, 1.0);
      w3[i] = rng.uniform(0.01, 1.0);
    }
    CategoricalBelief x = CategoricalBelief::from_unnormalized(w1);
    CategoricalBelief y = CategoricalBelief::from_unnormalized(w2);
    CategoricalBelief z = CategoricalBelief::from_unnormalized(w3);
    CHECK(l1_distance(x, y) == doctest::Approx(l1_distance(y, x)));
    CHECK(l1_distance(x, z) <= l1_distance(x, y) + l1_distance(y, z) + 1e-12);
    CHECK(l1_distance(x, y) <= 2.0 + 1e-12);
  }
  CHECK_THROWS_AS(l1_distance(a, CategoricalBelief::uniform(3)),
                  SupportMismatch);
}

TEST_CASE("map_index breaks ties toward the lowest index") {
  CHECK(map_index(CategoricalBelief(vec2(0.5, 0.5))) == 0);
  Vec p(4);
  p << 0.2, 0.3, 0.3, 0.2;
  CHECK(map_index(CategoricalBelief(p)) == 1);
  CHECK(map_index(CategoricalBelief::point_mass(4, 3)) == 3);
}

TEST_CASE("labels ride along through updates") {
  auto labels = std::make_shared<const std::vector<std::string>>(
      std::vector<std::string>{"left", "right"});
  CategoricalBelief b = CategoricalBelief::uniform(2, labels);
  CHECK(b.label(0) == "left");
  CategoricalBelief post = categorical_update(b, vec2(0.3, 0.7));
  CHECK(post.label(1) == "right");
  CHECK(CategoricalBelief::uniform(2).label(1) == "1");
}
