#pragma once

#include <cstdint>
#include <vector>

namespace trojanlab {

// Portable deterministic generator: xoshiro256++ seeded via splitmix64.
// The output sequence is bit-exact across platforms for a given seed;
// doubles are built from the top 53 bits, gaussians via Box-Muller.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal, mean 0 std 1.
  double gaussian();

  double gaussian(double mean, double stddev);

  // Fisher-Yates over indices [0, n).
  void shuffle(std::vector<std::size_t>& idx);

  // Derive an independent stream, e.g. one per sweep cell.
  Rng fork(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace trojanlab
