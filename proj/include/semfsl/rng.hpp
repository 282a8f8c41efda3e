#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace semfsl {

// Counter-based random stream. Draw i of a stream is a pure function of
// (key, i), and the key is a hash of (seed, label path), so two streams built
// from the same seed and labels replay the same sequence regardless of what
// other streams did in between.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label);

  // Independent child streams. Children of distinct labels or indices never
  // share a key with each other or with the parent.
  RngStream fork(std::string_view label) const;
  RngStream fork(std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // First `count` entries of a uniformly random permutation of 0..n-1
  // (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

}  // namespace semfsl
