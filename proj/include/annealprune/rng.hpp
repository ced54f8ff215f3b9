#pragma once

#include <array>
#include <cstdint>

namespace annealprune {

// Deterministic xoshiro256++ generator. Identical seeds give identical
// streams on every platform, and the four-word state serializes into
// checkpoints directly. Substreams come from derive(), so one consumer
// drawing more or fewer values can never perturb another consumer.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Next raw 64-bit value.
  std::uint64_t next_u64();

  // Uniform double in [0, 1).
  double next_double();

  // Uniform double in [lo, hi); lo == hi returns lo. lo > hi throws.
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double next_gaussian();

  // Independent child stream. Children with distinct ids are decorrelated
  // from each other and from the parent; deriving does not consume parent
  // state.
  Rng derive(std::uint64_t child_id) const;

  std::uint64_t seed() const { return seed_; }

  // Raw state access for checkpointing.
  std::array<std::uint64_t, 4> state() const { return state_; }
  void restore(std::uint64_t seed, const std::array<std::uint64_t, 4>& state);

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

// SplitMix64 mixer; used for seeding and stream derivation.
std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace annealprune
