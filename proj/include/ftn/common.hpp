#pragma once

// Shared basics: complex aliases, the error taxonomy used across the library,
// and counter-based random streams for reproducible Monte Carlo runs.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftn {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;
using rvec = std::vector<double>;

// Invalid arguments / violated preconditions. CLI maps this to exit code 2.
struct param_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown (failed factorization, non-finite loss). Exit code 3.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible on-disk data. Exit code 4.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Required file (model, code, config) not present. Exit code 4.
struct missing_artifact_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace rng {

// Fixed stream labels so independent consumers can never share a key by
// accident. Values are part of the reproducibility contract.
namespace purpose {
inline constexpr std::uint64_t data_bits = 1;
inline constexpr std::uint64_t payload_noise = 2;
inline constexpr std::uint64_t guard_noise = 3;
inline constexpr std::uint64_t interleaver = 4;
inline constexpr std::uint64_t weight_init = 5;
inline constexpr std::uint64_t train_data = 6;
inline constexpr std::uint64_t shuffle = 7;
inline constexpr std::uint64_t guard_bits = 8;
}  // namespace purpose

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL * (b + 0x165667b19e3779f9ULL)));
}

// A stateless stream of random values: every value is a pure function of
// (key, index). Parallel and serial consumers therefore see identical
// numbers, and distinct purposes/blocks get independent streams by key
// derivation alone.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  static Stream derive(std::uint64_t seed, std::uint64_t a = 0,
                       std::uint64_t b = 0, std::uint64_t c = 0) {
    return Stream(mix(mix(mix(seed, a), b), c));
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t bits(std::uint64_t index) const {
    return splitmix64(key_ + index * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on (0, 1); never returns 0 so log() is safe.
  double uniform(std::uint64_t index) const {
    return (static_cast<double>(bits(index) >> 11) + 0.5) * 0x1p-53;
  }

  int bit(std::uint64_t index) const {
    return static_cast<int>(bits(index) >> 63);
  }

  // Standard normal via Box-Muller; consumes uniforms (2i, 2i+1).
  double gauss(std::uint64_t index) const {
    const double u1 = uniform(2 * index);
    const double u2 = uniform(2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t key_;
};

// Stateful convenience wrapper over a Stream; used where draw order is the
// natural contract (weight init, shuffles, training data).
class Sequence {
 public:
  explicit Sequence(std::uint64_t key) : stream_(key) {}
  explicit Sequence(const Stream& s) : stream_(s) {}

  std::uint64_t next_bits() { return stream_.bits(counter_++); }
  double next_uniform() { return stream_.uniform(counter_++); }
  int next_bit() { return stream_.bit(counter_++); }

  // consumes two counters so mixed-type draws never reuse an index
  double next_gauss() {
    const double u1 = stream_.uniform(counter_++);
    const double u2 = stream_.uniform(counter_++);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, n); rejection-free modulo is fine for our n.
  std::uint64_t next_below(std::uint64_t n) { return next_bits() % n; }

 private:
  Stream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace rng
}  // namespace ftn
