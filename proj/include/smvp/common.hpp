#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smvp {

/// Shape mismatch or unsupported dimension combination.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf detected, or a numeric contract violated.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File or stream problem.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated on-disk data.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Bad run configuration or spec file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---------------------------------------------------------------------------
// Seeding. All randomness in the project derives from a root seed plus a
// chain of tags, so results never depend on evaluation order or thread count.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a) { return splitmix64(a); }

template <class... Rest>
uint64_t mix_seed(uint64_t a, uint64_t b, Rest... rest) {
  return mix_seed(splitmix64(a ^ splitmix64(b) ^ 0x517cc1b727220a95ull),
                  rest...);
}

inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Deterministic RNG with explicit normal sampling (Box-Muller), so streams
/// are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(eng_() %
                                     static_cast<uint64_t>(hi_inclusive - lo + 1));
  }

  /// Standard normal draw. Two uniforms per draw, no cached state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Thread budget shared by all parallel kernels.

void set_num_threads(int n);
int num_threads();

}  // namespace smvp
