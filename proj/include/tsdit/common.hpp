#ifndef TSDIT_COMMON_HPP_
#define TSDIT_COMMON_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsdit {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything thrown by this library derives from Error so the
// CLI can map categories to exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the library flows through this class,
// with hand-rolled uniform/gaussian transforms so sequences are identical
// across platforms and standard-library versions.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a seed with a stream index; used to derive per-scene / per-sample
// seeds from one config seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x2545f4914f6cdd1dULL)) {}

  uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  int64_t next_below(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Integer in [lo, hi] inclusive.
  int64_t int_range(int64_t lo, int64_t hi) { return lo + next_below(hi - lo + 1); }

  // Standard normal via Box-Muller (single value; the pair's partner is kept).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Angles and small geometry helpers.
// ---------------------------------------------------------------------------

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double px, double py) : x(px), y(py) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double norm() const { return std::hypot(x, y); }
};

// Sums values in a canonical (sorted) order so the result is invariant to
// the caller's element order. Used wherever a reduction runs over a set with
// no intrinsic order (attention keys, scene agents), so permutation laws hold
// bitwise in 64-bit arithmetic.
inline double ordered_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace tsdit

#endif  // TSDIT_COMMON_HPP_
