#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semfsl/feature_bank.hpp"
#include "semfsl/rng.hpp"
#include "semfsl/tensor.hpp"

namespace semfsl {

struct EpisodeShape {
  int ways = 5;
  int shots = 1;
  int queries = 15;  // per class
};

struct NoiseConfig {
  bool enabled = false;
  int min_clean = 3;
  double noise_prob = 0.5;
};

// Location of a sample inside the bank.
struct SampleRef {
  std::size_t bank_class = 0;
  Index row = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

// One n-way k-shot task. Support and query rows are class-major: support
// row c*shots + j is slot j of episode class c, query row c*queries + i is
// query i of class c.
struct Episode {
  EpisodeShape shape;
  std::vector<std::string> class_names;
  std::vector<std::size_t> bank_classes;
  Matrix class_embeddings;  // ways x d_e (d_e may be 0)

  Matrix support;  // (ways*shots) x d_v
  std::vector<int> support_presented;
  std::vector<int> support_true;
  std::vector<SampleRef> support_refs;

  Matrix query;  // (ways*queries) x d_v
  std::vector<int> query_true;
  std::vector<SampleRef> query_refs;

  // Non-fatal conditions, e.g. a noisy slot left clean for lack of donors.
  std::vector<std::string> warnings;

  int ways() const { return shape.ways; }
  int shots() const { return shape.shots; }
  Index support_row(int cls, int slot) const { return Index{cls} * shape.shots + slot; }
  bool is_noisy(Index support_row) const {
    return support_true[support_row] != support_presented[support_row];
  }
  int noisy_count(int cls) const;
};

// Classes and their samples are drawn uniformly without replacement; the
// first `shots` draws of each class form the support, the rest the query.
// `class_semantics` holds one row per bank class (as align_embeddings
// produces) or has zero columns. Throws ConfigError when the view is too
// small for the requested shape.
Episode sample_episode(const BankView& view, const Matrix& class_semantics,
                       const EpisodeShape& shape, RngStream& rng);

// Label noise by cross-class substitution. For each class c the first
// min_clean support slots are untouched; every later slot independently,
// with probability noise_prob, has its feature replaced by an unused sample
// of another episode class d (uniform over d != c) and its true class set
// to d, while the presented class stays c. A donor without unused samples
// falls back to a uniform pick among the other classes that still have
// some; with none left the slot stays clean and a warning is recorded.
Episode inject_noise(Episode episode, const BankView& view, const NoiseConfig& cfg, RngStream& rng);

// Validates the NoiseConfig against the shots of an episode.
void validate_noise(const NoiseConfig& cfg, int shots);

// Sampler keyed by (seed, task index): task t always yields the same
// episode, independent of which other tasks were drawn before.
class EpisodeSource {
 public:
  EpisodeSource(const BankView& view, const Matrix& class_semantics, EpisodeShape shape,
                NoiseConfig noise, std::uint64_t seed, std::string_view label);

  Episode task(std::uint64_t index) const;
  const EpisodeShape& shape() const { return shape_; }

 private:
  BankView view_;
  Matrix semantics_;
  EpisodeShape shape_;
  NoiseConfig noise_;
  RngStream root_;
};

}  // namespace semfsl
