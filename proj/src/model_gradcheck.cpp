#include "semfsl/model_gradcheck.hpp"

#include <sstream>

#include "semfsl/ops.hpp"

namespace semfsl {

bool ModelGradCheckSummary::passed() const {
  for (const auto& [name, entry] : checks) {
    if (entry.failures > 0) return false;
  }
  return !checks.empty();
}

std::string ModelGradCheckSummary::to_text() const {
  std::ostringstream out;
  for (const auto& [name, entry] : checks) {
    out << name << ": " << entry.instances - entry.failures << "/" << entry.instances
        << " passed, " << entry.worst.diagnostic() << "\n";
  }
  return out.str();
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.embedding_dim = 6;
  cfg.prior_dropout = 0.0;
  cfg.visual_dropout = 0.0;
  cfg.semantic_dropout = 0.0;
  cfg.alpha = 0.5;
  cfg.dist_scale = 4.0;
  return cfg;
}

namespace {

Matrix normal_matrix(Index rows, Index cols, RngStream& rng, double scale) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

}  // namespace

Episode gradcheck_episode(std::uint64_t seed) {
  const ModelConfig cfg = gradcheck_model_config();
  RngStream rng(seed, "gradcheck.episode");
  Episode ep;
  ep.shape = EpisodeShape{3, 2, 2};
  ep.class_embeddings = normal_matrix(3, cfg.embedding_dim, rng, 1.0);
  ep.support = normal_matrix(6, cfg.feature_dim, rng, 1.0);
  ep.query = normal_matrix(6, cfg.feature_dim, rng, 1.0);
  for (int c = 0; c < 3; ++c) {
    ep.class_names.push_back("c" + std::to_string(c));
    ep.bank_classes.push_back(static_cast<std::size_t>(c));
    for (int j = 0; j < 2; ++j) {
      ep.support_presented.push_back(c);
      ep.support_true.push_back(c);
      ep.support_refs.push_back({static_cast<std::size_t>(c), j});
      ep.query_true.push_back(c);
      ep.query_refs.push_back({static_cast<std::size_t>(c), 2 + j});
    }
  }
  return ep;
}

HeadParams gradcheck_params(std::uint64_t seed) {
  HeadParams params = HeadParams::init(gradcheck_model_config(), seed);
  // Non-zero biases so that every bias gradient is exercised.
  RngStream rng(seed, "gradcheck.bias");
  for (Parameter* p : params.all()) {
    if (p->value.rows() == 1) p->value = normal_matrix(1, p->value.cols(), rng, 0.1);
  }
  // A nudge towards one keeps the feature scales away from zero.
  params.feature_b2.value.array() += 1.0;
  return params;
}

ModelGradCheckSummary run_model_gradcheck(std::uint64_t seed, int instances,
                                          const GradCheckOptions& options) {
  ModelGradCheckSummary summary;
  auto record = [&](const std::string& name, const GradCheckReport& report) {
    ModelGradCheckEntry& e = summary.checks[name];
    ++e.instances;
    if (!report.passed) ++e.failures;
    if (e.instances == 1 || report.worst_error > e.worst.worst_error) e.worst = report;
  };

  for (int i = 0; i < instances; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    const Episode ep = gradcheck_episode(s);
    HeadParams params = gradcheck_params(s);
    RngStream probe_rng(s, "gradcheck.probe");
    GradCheckOptions opts = options;
    opts.seed = s;

    // Each head is reduced to a scalar through a fixed random projection.
    auto head_check = [&](const std::string& name, const std::vector<Parameter*>& ps,
                          const Matrix& input, auto head) {
      Matrix weights;
      {
        Graph g;
        RngStream unused(0, "unused");
        const Var out = head(g, g.constant_ref(input), unused);
        weights = normal_matrix(out.rows(), out.cols(), probe_rng, 1.0);
      }
      const LossBuilder loss = [&](Graph& g) {
        RngStream unused(0, "unused");
        return sum(hadamard(head(g, g.constant_ref(input), unused), g.constant_ref(weights)));
      };
      record(name, finite_diff_check(loss, ps, opts));
    };

    head_check("prior", {&params.prior[0], &params.prior[1]}, ep.class_embeddings,
               [&](Graph& g, Var x, RngStream& r) {
                 return prior_head(g, params, x, Mode::train, r);
               });
    head_check("visual",
               {&params.visual_w1, &params.visual_b1, &params.visual_w2, &params.visual_b2},
               ep.support, [&](Graph& g, Var x, RngStream& r) {
                 return visual_head(g, params, x, Mode::train, r);
               });
    head_check("semantic",
               {&params.semantic_w1, &params.semantic_b1, &params.semantic_w2,
                &params.semantic_b2},
               ep.class_embeddings, [&](Graph& g, Var x, RngStream& r) {
                 return semantic_head(g, params, x, Mode::train, r);
               });
    head_check("feature",
               {&params.feature_w1, &params.feature_b1, &params.feature_w2, &params.feature_b2},
               ep.class_embeddings,
               [&](Graph& g, Var x, RngStream&) { return feature_attention_head(g, params, x); });

    const std::vector<Parameter*> all = params.all();
    const LossBuilder loss = [&](Graph& g) {
      RngStream unused(0, "unused");
      return episode_loss(g, ep, params, Variant::combined, Mode::train, unused);
    };
    record("loss", finite_diff_check(loss, all, opts));
  }
  return summary;
}

}  // namespace semfsl
