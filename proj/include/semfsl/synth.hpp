#pragma once

#include <cstdint>

#include "semfsl/embeddings.hpp"
#include "semfsl/feature_bank.hpp"

namespace semfsl {

// Recipe for a synthetic bank whose class semantics are a noisy linear
// image of the class means.
struct SynthSpec {
  int n_classes = 100;
  int samples_per_class = 600;
  int feature_dim = 640;
  int embedding_dim = 300;
  double class_mean_scale = 1.0;
  // 0: class means have independent coordinates. k > 0: means lie in a
  // random k-dimensional subspace, keeping the per-coordinate variance.
  int latent_dim = 0;
  double within_class_std = 1.0;
  double semantic_noise_std = 0.1;
  double outlier_fraction = 0.0;
  double outlier_std = 3.0;
  // Classes are partitioned in order: the first round(train_fraction * n)
  // are train, the next round(val_fraction * n) are val, the rest test.
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

struct SynthResult {
  FeatureBank bank;
  EmbeddingTable table;
  Matrix class_means;   // n_classes x feature_dim, before float rounding
  Matrix semantic_map;  // embedding_dim x feature_dim
  Matrix latent_basis;  // latent_dim x feature_dim; empty when latent_dim is 0
};

// Pure function of the spec. Class c is named "c%03d" (a single token, so
// the table round-trips through the word-vector format).
SynthResult synth_generate(const SynthSpec& spec);

std::string synth_class_name(int index);

}  // namespace semfsl
