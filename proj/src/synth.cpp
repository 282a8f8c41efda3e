#include "semfsl/synth.hpp"

#include <cmath>
#include <cstdio>

#include "semfsl/errors.hpp"
#include "semfsl/rng.hpp"

namespace semfsl {

void SynthSpec::validate() const {
  if (n_classes < 0 || samples_per_class < 0) throw ConfigError("synth counts must be >= 0");
  if (feature_dim < 1 || embedding_dim < 1) throw ConfigError("synth dimensions must be >= 1");
  if (latent_dim < 0) throw ConfigError("latent_dim must be >= 0");
  if (!(class_mean_scale >= 0 && within_class_std >= 0 && semantic_noise_std >= 0 &&
        outlier_std >= 0)) {
    throw ConfigError("synth standard deviations must be >= 0");
  }
  if (!(outlier_fraction >= 0 && outlier_fraction < 1)) {
    throw ConfigError("outlier_fraction must lie in [0, 1)");
  }
  if (!(train_fraction >= 0 && val_fraction >= 0 && train_fraction + val_fraction <= 1)) {
    throw ConfigError("split fractions must be >= 0 and sum to at most 1");
  }
}

std::string synth_class_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03d", index);
  return buf;
}

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  const RngStream root(spec.seed, "synth");
  const Index dv = spec.feature_dim;
  const Index de = spec.embedding_dim;

  SynthResult out;
  out.semantic_map.resize(de, dv);
  {
    RngStream rng = root.fork("semantic_map");
    const double sd = 1.0 / std::sqrt(static_cast<double>(dv));
    for (Index r = 0; r < de; ++r) {
      for (Index c = 0; c < dv; ++c) out.semantic_map(r, c) = sd * rng.normal();
    }
  }

  if (spec.latent_dim > 0) {
    RngStream rng = root.fork("latent_basis");
    const double sd = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    out.latent_basis.resize(spec.latent_dim, dv);
    for (Index r = 0; r < spec.latent_dim; ++r) {
      for (Index c = 0; c < dv; ++c) out.latent_basis(r, c) = sd * rng.normal();
    }
  }

  const int n = spec.n_classes;
  const int n_train = static_cast<int>(std::lround(spec.train_fraction * n));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(spec.val_fraction * n)));
  const int n_outliers =
      static_cast<int>(std::floor(spec.outlier_fraction * spec.samples_per_class));

  out.bank.feature_dim = static_cast<std::uint32_t>(dv);
  out.class_means.resize(n, dv);
  out.table.dim = de;
  for (int c = 0; c < n; ++c) {
    const RngStream cls = root.fork("class").fork(static_cast<std::uint64_t>(c));
    RngStream mean_rng = cls.fork("mean");
    RngStream sample_rng = cls.fork("samples");
    RngStream sem_rng = cls.fork("semantic_noise");

    Vector mean(dv);
    if (spec.latent_dim > 0) {
      Vector z(spec.latent_dim);
      for (Index k = 0; k < z.size(); ++k) z(k) = spec.class_mean_scale * mean_rng.normal();
      mean = out.latent_basis.transpose() * z;
    } else {
      for (Index k = 0; k < dv; ++k) mean(k) = spec.class_mean_scale * mean_rng.normal();
    }
    out.class_means.row(c) = mean.transpose();

    ClassFeatures cf;
    cf.name = synth_class_name(c);
    cf.split = c < n_train ? Split::train : (c < n_train + n_val ? Split::val : Split::test);
    cf.features.resize(spec.samples_per_class, dv);
    for (int i = 0; i < spec.samples_per_class; ++i) {
      // The last n_outliers rows of each class use the outlier spread.
      const double sd = i >= spec.samples_per_class - n_outliers ? spec.outlier_std
                                                                 : spec.within_class_std;
      for (Index k = 0; k < dv; ++k) {
        cf.features(i, k) = static_cast<float>(mean(k) + sd * sample_rng.normal());
      }
    }
    out.bank.classes.push_back(std::move(cf));

    Vector psi = out.semantic_map * mean;
    for (Index k = 0; k < de; ++k) psi(k) += spec.semantic_noise_std * sem_rng.normal();
    out.table.insert(synth_class_name(c), std::move(psi));
  }
  return out;
}

}  // namespace semfsl
