#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ehfkt {

/// Deterministic xorshift-family generator: xoshiro256** seeded through
/// splitmix64. Pure integer state plus IEEE-754 arithmetic, so a given
/// seed yields the same stream on every platform. Doubles are built from
/// the top 53 bits; gaussians use Box-Muller with a cached spare.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal.
  double gauss();

  /// Uniform integer in [0, n); unbiased via rejection.
  std::uint64_t randint(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stable seed derivation for independent substreams (per stage, per
/// student, ...). Mixing is splitmix64 over the FNV-1a hash of the label
/// and the index, so (seed, label, index) fully determines the stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

/// FNV-1a 64-bit hash; also used for artifact manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t basis = 0xcbf29ce484222325ull);

}  // namespace ehfkt
