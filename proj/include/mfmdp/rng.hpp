#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mfmdp {

// Deterministic, platform-independent random stream. std::mt19937_64 is
// portable, but the <random> distributions are not, so the draw helpers
// below are implemented by hand. Streams are derived from a master seed
// plus a name so that components (pool, policy, masks, dynamics) consume
// independent substreams regardless of call interleaving.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {}

  static RngStream fork(std::uint64_t master_seed, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double next_double();

  // Uniform integer in [0, n).
  std::size_t next_below(std::size_t n);

  // Standard normal via Box-Muller (both values consumed for determinism).
  double next_normal();

  bool next_bernoulli(double p_true);

  // Index drawn from an unnormalized non-negative weight vector.
  std::size_t next_categorical(std::span<const double> weights);

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
};

// 64-bit FNV-1a, used for feature hashing and stream derivation.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace mfmdp
