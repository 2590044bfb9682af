// Shared aliases, error types, hashing and the deterministic RNG used by
// every module. All sampling goes through Rng so that a (seed, stream)
// pair reproduces a run bit-exactly on any platform; the standard
// <random> distributions are implementation-defined and are avoided.
#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace brpo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define BRPO_DEFINE_ERROR(NAME)                    \
  struct NAME : Error {                            \
    using Error::Error;                            \
    NAME() : Error(#NAME) {}                       \
  }

BRPO_DEFINE_ERROR(AllZeroPosterior);
BRPO_DEFINE_ERROR(SupportMismatch);
BRPO_DEFINE_ERROR(DimensionMismatch);
BRPO_DEFINE_ERROR(IllegalAction);
BRPO_DEFINE_ERROR(RiccatiDiverged);
BRPO_DEFINE_ERROR(NoPath);
BRPO_DEFINE_ERROR(SingularPrecision);
BRPO_DEFINE_ERROR(SenseChannelAbsent);
BRPO_DEFINE_ERROR(NonFiniteGradient);
BRPO_DEFINE_ERROR(NonFiniteLoss);
BRPO_DEFINE_ERROR(LayoutMismatch);
BRPO_DEFINE_ERROR(NotEnumerable);
BRPO_DEFINE_ERROR(RegimeViolation);
BRPO_DEFINE_ERROR(NonConvergence);

#undef BRPO_DEFINE_ERROR

// 64-bit FNV-1a, used for layout and config fingerprints.
inline uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// SplitMix64 step; used to derive independent substreams from one seed.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t s = seed;
  uint64_t h = splitmix64(s);
  s ^= a * 0x9e3779b97f4a7c15ull;
  h ^= splitmix64(s);
  s ^= b + 0xd1b54a32d192ed03ull;
  h ^= splitmix64(s);
  s ^= c + 0x8cb92ba72f3d8dd7ull;
  h ^= splitmix64(s);
  return h;
}

// Deterministic sampler. mt19937_64 output is fixed by the standard; the
// transformations below (53-bit uniform, Box-Muller) are our own, so the
// same seed yields the same stream everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform on [0, 1).
  double uniform01() { return (engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  int uniform_int(int n) {  // uniform on {0, ..., n-1}
    return static_cast<int>(uniform01() * n) % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Index drawn from an unnormalized nonnegative weight vector.
  int categorical(const Vec& weights) {
    double total = weights.sum();
    double u = uniform01() * total;
    double acc = 0.0;
    for (int i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = static_cast<decltype(i)>(uniform01() * (i + 1));
      if (j > i) j = i;
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw Error("bad double: " + std::string(s));
  return v;
}

inline bool approx_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

}  // namespace brpo
