#pragma once

#include <cstdint>

namespace sbgru {

/// Counter-based random stream. Draw i is a pure function of (seed, i)
/// through the SplitMix64 finalizer, so a seed reproduces the same sequence on
/// any platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box–Muller; consumes two uniforms.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream. Children of the same parent with different
  /// tags never share draws; the parent's own position is not advanced.
  RngStream split(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace sbgru
