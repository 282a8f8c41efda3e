#include "semfsl/episode.hpp"

#include <algorithm>

#include "semfsl/errors.hpp"

namespace semfsl {

int Episode::noisy_count(int cls) const {
  int n = 0;
  for (int j = 0; j < shape.shots; ++j) n += is_noisy(support_row(cls, j)) ? 1 : 0;
  return n;
}

namespace {

void validate_shape(const EpisodeShape& s) {
  if (s.ways < 1 || s.shots < 1 || s.queries < 0) {
    throw ConfigError("episode shape needs ways >= 1, shots >= 1, queries >= 0 (got " +
                      std::to_string(s.ways) + "/" + std::to_string(s.shots) + "/" +
                      std::to_string(s.queries) + ")");
  }
}

RowVector feature_row(const BankView& view, const SampleRef& ref) {
  return view.bank().classes[ref.bank_class].features.row(ref.row).cast<double>();
}

}  // namespace

void validate_noise(const NoiseConfig& cfg, int shots) {
  if (!(cfg.noise_prob >= 0.0 && cfg.noise_prob <= 1.0)) {
    throw ConfigError("noise_prob must lie in [0, 1]");
  }
  if (cfg.min_clean < 0 || cfg.min_clean > shots) {
    throw ConfigError("min_clean must lie in [0, shots=" + std::to_string(shots) + "], got " +
                      std::to_string(cfg.min_clean));
  }
}

Episode sample_episode(const BankView& view, const Matrix& class_semantics,
                       const EpisodeShape& shape, RngStream& rng) {
  validate_shape(shape);
  const auto ways = static_cast<std::size_t>(shape.ways);
  if (view.size() < ways) {
    throw ConfigError("episode needs " + std::to_string(ways) + " classes, view has " +
                      std::to_string(view.size()));
  }
  const Index per_class = shape.shots + shape.queries;
  const bool has_semantics = class_semantics.cols() > 0;
  if (has_semantics && class_semantics.rows() != static_cast<Index>(view.bank().classes.size())) {
    throw DimensionError("class semantics have " + std::to_string(class_semantics.rows()) +
                         " rows for a bank of " + std::to_string(view.bank().classes.size()) +
                         " classes");
  }

  Episode ep;
  ep.shape = shape;
  const Index dv = view.bank().feature_dim;
  ep.class_embeddings.resize(shape.ways, class_semantics.cols());
  ep.support.resize(shape.ways * shape.shots, dv);
  ep.query.resize(shape.ways * shape.queries, dv);

  const auto picked = rng.sample_without_replacement(view.size(), ways);
  for (int c = 0; c < shape.ways; ++c) {
    const std::size_t bank_class = view.bank_index(picked[static_cast<std::size_t>(c)]);
    const ClassFeatures& cf = view.bank().classes[bank_class];
    if (cf.features.rows() < per_class) {
      throw ConfigError("class '" + cf.name + "' has " + std::to_string(cf.features.rows()) +
                        " samples, episode needs " + std::to_string(per_class));
    }
    ep.class_names.push_back(cf.name);
    ep.bank_classes.push_back(bank_class);
    if (has_semantics) ep.class_embeddings.row(c) = class_semantics.row(static_cast<Index>(bank_class));

    const auto rows = rng.sample_without_replacement(static_cast<std::size_t>(cf.features.rows()),
                                                     static_cast<std::size_t>(per_class));
    for (Index i = 0; i < per_class; ++i) {
      const SampleRef ref{bank_class, static_cast<Index>(rows[static_cast<std::size_t>(i)])};
      if (i < shape.shots) {
        ep.support.row(ep.support_row(c, static_cast<int>(i))) = feature_row(view, ref);
        ep.support_presented.push_back(c);
        ep.support_true.push_back(c);
        ep.support_refs.push_back(ref);
      } else {
        ep.query.row(Index{c} * shape.queries + (i - shape.shots)) = feature_row(view, ref);
        ep.query_true.push_back(c);
        ep.query_refs.push_back(ref);
      }
    }
  }
  return ep;
}

Episode inject_noise(Episode ep, const BankView& view, const NoiseConfig& cfg, RngStream& rng) {
  if (!cfg.enabled) return ep;
  validate_noise(cfg, ep.shots());
  const int ways = ep.ways();

  // Rows of each episode class already used by this episode.
  std::vector<std::vector<Index>> used(static_cast<std::size_t>(ways));
  for (const auto& refs : {std::cref(ep.support_refs), std::cref(ep.query_refs)}) {
    for (const SampleRef& r : refs.get()) {
      const auto c = static_cast<std::size_t>(
          std::find(ep.bank_classes.begin(), ep.bank_classes.end(), r.bank_class) -
          ep.bank_classes.begin());
      used[c].push_back(r.row);
    }
  }
  auto available = [&](int d) {
    const auto& cf = view.bank().classes[ep.bank_classes[static_cast<std::size_t>(d)]];
    return static_cast<std::size_t>(cf.features.rows()) - used[static_cast<std::size_t>(d)].size();
  };

  for (int c = 0; c < ways; ++c) {
    for (int j = cfg.min_clean; j < ep.shots(); ++j) {
      if (!(rng.uniform() < cfg.noise_prob)) continue;
      if (ways < 2) {
        ep.warnings.push_back("noise skipped: a 1-way episode has no donor class");
        continue;
      }
      // Uniform over d != c.
      int donor = static_cast<int>(rng.below(static_cast<std::uint64_t>(ways - 1)));
      if (donor >= c) ++donor;
      if (available(donor) == 0) {
        std::vector<int> fallback;
        for (int d = 0; d < ways; ++d) {
          if (d != c && available(d) > 0) fallback.push_back(d);
        }
        if (fallback.empty()) {
          ep.warnings.push_back("class " + std::to_string(c) + " slot " + std::to_string(j) +
                                " left clean: no donor samples available");
          continue;
        }
        donor = fallback[rng.below(fallback.size())];
      }

      auto& donor_used = used[static_cast<std::size_t>(donor)];
      const std::size_t bank_class = ep.bank_classes[static_cast<std::size_t>(donor)];
      const Index n_rows = view.bank().classes[bank_class].features.rows();
      // Pick uniformly among unused rows: the i-th unused row in index order.
      auto pick = static_cast<Index>(rng.below(available(donor)));
      std::sort(donor_used.begin(), donor_used.end());
      Index row = 0;
      for (; row < n_rows; ++row) {
        if (std::binary_search(donor_used.begin(), donor_used.end(), row)) continue;
        if (pick-- == 0) break;
      }
      donor_used.push_back(row);

      const Index slot = ep.support_row(c, j);
      const SampleRef ref{bank_class, row};
      ep.support.row(slot) = feature_row(view, ref);
      ep.support_refs[static_cast<std::size_t>(slot)] = ref;
      ep.support_true[static_cast<std::size_t>(slot)] = donor;
    }
  }
  return ep;
}

EpisodeSource::EpisodeSource(const BankView& view, const Matrix& class_semantics,
                             EpisodeShape shape, NoiseConfig noise, std::uint64_t seed,
                             std::string_view label)
    : view_(view),
      semantics_(class_semantics),
      shape_(shape),
      noise_(noise),
      root_(seed, label) {
  validate_shape(shape_);
  if (noise_.enabled) validate_noise(noise_, shape_.shots);
}

Episode EpisodeSource::task(std::uint64_t index) const {
  const RngStream task_rng = root_.fork(index);
  RngStream sample_rng = task_rng.fork("sample");
  Episode ep = sample_episode(view_, semantics_, shape_, sample_rng);
  if (noise_.enabled) {
    RngStream noise_rng = task_rng.fork("noise");
    ep = inject_noise(std::move(ep), view_, noise_, noise_rng);
  }
  return ep;
}

}  // namespace semfsl
