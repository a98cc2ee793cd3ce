#include "mfmdp/features.hpp"

#include <sstream>

#include "mfmdp/rng.hpp"

namespace mfmdp {

void hash_text_into(std::span<double> block, const std::string& text, std::uint64_t seed) {
  for (double& v : block) v = 0.0;
  if (block.empty()) return;
  std::istringstream in(text);
  std::string tok;
  std::size_t count = 0;
  while (in >> tok) {
    std::uint64_t h = fnv1a64(tok, seed ^ 0xcbf29ce484222325ULL);
    std::size_t bucket = static_cast<std::size_t>(h % block.size());
    double sign = (h >> 63) ? -1.0 : 1.0;
    block[bucket] += sign;
    ++count;
  }
  if (count > 0) {
    for (double& v : block) v /= static_cast<double>(count);
  }
}

std::vector<double> hash_text(const std::string& text, std::size_t dims, std::uint64_t seed) {
  std::vector<double> block(dims, 0.0);
  hash_text_into(block, text, seed);
  return block;
}

std::size_t token_bucket(const std::string& token, std::size_t dims, std::uint64_t seed) {
  std::uint64_t h = fnv1a64(token, seed ^ 0xcbf29ce484222325ULL);
  return static_cast<std::size_t>(h % dims);
}

}  // namespace mfmdp
