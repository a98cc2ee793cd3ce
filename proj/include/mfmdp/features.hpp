#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mfmdp {

// Signed feature hashing of whitespace tokens into a fixed-width block.
// Deterministic given the seed; an empty text hashes to the zero vector.
// Entries are scaled by 1/token_count so blocks stay bounded.
void hash_text_into(std::span<double> block, const std::string& text, std::uint64_t seed);

std::vector<double> hash_text(const std::string& text, std::size_t dims, std::uint64_t seed);

// Hash bucket of a single token (exposed for collision diagnostics).
std::size_t token_bucket(const std::string& token, std::size_t dims, std::uint64_t seed);

}  // namespace mfmdp
