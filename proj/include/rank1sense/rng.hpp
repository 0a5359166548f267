#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rank1sense {

/// Deterministic splittable PRNG.
///
/// splitmix64 core with Box-Muller Gaussians on top. Streams are derived
/// from (seed, stream_id), so independent blocks can be generated in any
/// order or from any thread and still produce identical bits.
class Rng {
 public:
  explicit Rng(std::uint64_t state) : state_(state) {}

  /// Independent stream for (seed, stream_id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix64(mix64(seed + 0x9e3779b97f4a7c15ULL) + stream_id));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double in (0, 1].
  double uniform_positive() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal deviate (Box-Muller, second value cached).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_positive();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rank1sense
