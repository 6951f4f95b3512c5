#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedfair {

// ============================================================================
// Error types
// ============================================================================

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string &msg) : std::runtime_error(msg) {}
};

struct EmptyInputError : std::runtime_error {
  explicit EmptyInputError(const std::string &msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string &msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string &msg) : std::runtime_error(msg) {}
};

struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string &msg) : std::runtime_error(msg) {}
};

// ============================================================================
// Deterministic randomness
//
// std::mt19937_64 output is fully specified by the standard, but the standard
// distributions are not. Every draw below is built from raw engine output so
// two builds produce bit-identical streams.
// ============================================================================

inline std::uint64_t mix64(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Domain-separation tags for derived seeds.
enum class SeedTag : std::uint64_t {
  Stream = 0x01,
  Cell = 0x02,
  ModelInit = 0x03,
  LocalTrain = 0x04,
};

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, SeedTag tag,
                                 std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = mix64(master ^ mix64(static_cast<std::uint64_t>(tag)));
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; pairs are cached so draw count stays deterministic.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n). Modulo bias is negligible for our n.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(engine_() % n);
  }

  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace fedfair
