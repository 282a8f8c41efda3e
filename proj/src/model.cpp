#include "semfsl/model.hpp"

#include <cmath>

#include "semfsl/errors.hpp"

namespace semfsl {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::pn:
      return "pn";
    case Variant::am3:
      return "am3";
    case Variant::sample_att:
      return "sample_att";
    case Variant::feat_att:
      return "feat_att";
    case Variant::combined:
      return "combined";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::pn, Variant::am3, Variant::sample_att, Variant::feat_att,
                    Variant::combined}) {
    if (variant_name(v) == text) return v;
  }
  throw ConfigError("unknown variant '" + std::string(text) +
                    "' (expected pn|am3|sample_att|feat_att|combined)");
}

bool uses_sample_attention(Variant v) {
  return v == Variant::sample_att || v == Variant::combined;
}
bool uses_feature_attention(Variant v) { return v == Variant::feat_att || v == Variant::combined; }
bool uses_semantics(Variant v) { return v != Variant::pn; }

void ModelConfig::validate() const {
  if (feature_dim < 1 || embedding_dim < 0 || attention_dim < 1 || feature_attention_hidden < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (prior_layers != 1 && prior_layers != 2) throw ConfigError("prior_layers must be 1 or 2");
  if (prior_layers == 2 && prior_hidden < 1) throw ConfigError("prior_hidden must be positive");
  for (double p : {prior_dropout, visual_dropout, semantic_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (!(dist_scale > 0.0) || !std::isfinite(dist_scale)) {
    throw ConfigError("dist_scale must be positive, got " + std::to_string(dist_scale));
  }
}

namespace {

Parameter glorot(const std::string& name, Index fan_in, Index fan_out, std::uint64_t seed) {
  RngStream rng = RngStream(seed, "init").fork(name);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Index r = 0; r < fan_in; ++r) {
    for (Index c = 0; c < fan_out; ++c) w(r, c) = limit * (2.0 * rng.uniform() - 1.0);
  }
  return Parameter(name, std::move(w));
}

Parameter zero_bias(const std::string& name, Index width) {
  return Parameter(name, Matrix::Zero(1, width));
}

}  // namespace

HeadParams HeadParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  HeadParams p;
  p.config = config;
  const Index dv = config.feature_dim;
  const Index de = config.embedding_dim;
  const Index h = config.attention_dim;
  const Index fh = config.feature_attention_hidden;

  if (config.prior_layers == 1) {
    p.prior.push_back(glorot("prior.w0", de, dv, seed));
    p.prior.push_back(zero_bias("prior.b0", dv));
  } else {
    p.prior.push_back(glorot("prior.w0", de, config.prior_hidden, seed));
    p.prior.push_back(zero_bias("prior.b0", config.prior_hidden));
    p.prior.push_back(glorot("prior.w1", config.prior_hidden, dv, seed));
    p.prior.push_back(zero_bias("prior.b1", dv));
  }
  p.visual_w1 = glorot("visual.w1", dv, h, seed);
  p.visual_b1 = zero_bias("visual.b1", h);
  p.visual_w2 = glorot("visual.w2", h, h, seed);
  p.visual_b2 = zero_bias("visual.b2", h);
  p.semantic_w1 = glorot("semantic.w1", de, h, seed);
  p.semantic_b1 = zero_bias("semantic.b1", h);
  p.semantic_w2 = glorot("semantic.w2", h, h, seed);
  p.semantic_b2 = zero_bias("semantic.b2", h);
  p.feature_w1 = glorot("feature.w1", de, fh, seed);
  p.feature_b1 = zero_bias("feature.b1", fh);
  p.feature_w2 = glorot("feature.w2", fh, dv, seed);
  p.feature_b2 = zero_bias("feature.b2", dv);
  return p;
}

std::vector<Parameter*> HeadParams::all() {
  std::vector<Parameter*> out;
  for (auto& p : prior) out.push_back(&p);
  for (Parameter* p : {&visual_w1, &visual_b1, &visual_w2, &visual_b2, &semantic_w1, &semantic_b1,
                       &semantic_w2, &semantic_b2, &feature_w1, &feature_b1, &feature_w2,
                       &feature_b2}) {
    out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> HeadParams::all() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<HeadParams*>(this)->all()) out.push_back(p);
  return out;
}

std::vector<Parameter*> HeadParams::used_by(Variant variant) {
  std::vector<Parameter*> out;
  if (variant == Variant::pn) return out;
  if (config.alpha < 1.0) {
    for (auto& p : prior) out.push_back(&p);
  }
  if (uses_sample_attention(variant)) {
    for (Parameter* p : {&visual_w1, &visual_b1, &visual_w2, &visual_b2, &semantic_w1,
                         &semantic_b1, &semantic_w2, &semantic_b2}) {
      out.push_back(p);
    }
  }
  if (uses_feature_attention(variant)) {
    for (Parameter* p : {&feature_w1, &feature_b1, &feature_w2, &feature_b2}) out.push_back(p);
  }
  return out;
}

Parameter* HeadParams::find(std::string_view name) {
  for (Parameter* p : all()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

namespace {

Var bind(Graph& g, Parameter& p) { return g.parameter(p); }
Var bind(Graph& g, const Parameter& p) { return g.constant_ref(p.value); }

template <HeadParamsRef P, class Param>
Var two_layer(Graph& g, Param& w1, Param& b1, Param& w2, Param& b2, Var x, double p_drop,
              Mode mode, RngStream& rng) {
  Var h = affine(x, bind(g, w1), bind(g, b1));
  h = dropout(h, p_drop, mode, rng);
  h = relu(h);
  return affine(h, bind(g, w2), bind(g, b2));
}

}  // namespace

template <HeadParamsRef P>
Var prior_head(Graph& g, P& params, Var psi, Mode mode, RngStream& rng) {
  const ModelConfig& cfg = params.config;
  Var x = dropout(psi, cfg.prior_dropout, mode, rng);
  x = affine(x, bind(g, params.prior[0]), bind(g, params.prior[1]));
  if (cfg.prior_layers == 2) {
    x = relu(x);
    x = dropout(x, cfg.prior_dropout, mode, rng);
    x = affine(x, bind(g, params.prior[2]), bind(g, params.prior[3]));
  }
  return x;
}

template <HeadParamsRef P>
Var visual_head(Graph& g, P& params, Var features, Mode mode, RngStream& rng) {
  return two_layer<P>(g, params.visual_w1, params.visual_b1, params.visual_w2, params.visual_b2,
                      features, params.config.visual_dropout, mode, rng);
}

template <HeadParamsRef P>
Var semantic_head(Graph& g, P& params, Var psi, Mode mode, RngStream& rng) {
  return two_layer<P>(g, params.semantic_w1, params.semantic_b1, params.semantic_w2,
                      params.semantic_b2, psi, params.config.semantic_dropout, mode, rng);
}

template <HeadParamsRef P>
Var feature_attention_head(Graph& g, P& params, Var psi) {
  Var h = softmax(affine(psi, bind(g, params.feature_w1), bind(g, params.feature_b1)));
  return affine(h, bind(g, params.feature_w2), bind(g, params.feature_b2));
}

Var attention_from_embeddings(Var u, Var v, Index shots) {
  if (u.rows() != v.rows() * shots) {
    throw DimensionError("attention: " + shape_string(u.value()) + " support embeddings for " +
                         shape_string(v.value()) + " class embeddings with " +
                         std::to_string(shots) + " shots");
  }
  Var scores = rowwise_dot(u, repeat_rows(v, shots));
  return softmax(reshape(scores, v.rows(), shots));
}

template <HeadParamsRef P>
EpisodeForward forward_episode(Graph& g, const Episode& episode, P& params, Variant variant,
                               Mode mode, RngStream& rng) {
  const ModelConfig& cfg = params.config;
  if (episode.support.cols() != cfg.feature_dim) {
    throw DimensionError("episode features " + shape_string(episode.support) +
                         " do not match model feature_dim " + std::to_string(cfg.feature_dim));
  }
  if (uses_semantics(variant) && episode.class_embeddings.cols() != cfg.embedding_dim) {
    throw DimensionError("episode embeddings " + shape_string(episode.class_embeddings) +
                         " do not match model embedding_dim " +
                         std::to_string(cfg.embedding_dim));
  }
  const Index shots = episode.shots();
  Var support = g.constant_ref(episode.support);
  Var query = g.constant_ref(episode.query);
  Var psi = g.constant_ref(episode.class_embeddings);

  EpisodeForward out;
  Var visual;
  if (uses_sample_attention(variant)) {
    Var u = visual_head(g, params, support, mode, rng);
    Var v = semantic_head(g, params, psi, mode, rng);
    out.attention = attention_from_embeddings(u, v, shots);
    visual = group_weighted_sum(out.attention, support);
  } else {
    visual = group_mean(support, shots);
  }

  Var scales;
  if (uses_feature_attention(variant)) {
    out.feature_scales = feature_attention_head(g, params, psi);
    scales = out.feature_scales;
  }

  Var prototypes = visual;
  if (variant != Variant::pn && cfg.alpha < 1.0) {
    Var prior = prior_head(g, params, psi, mode, rng);
    if (scales.valid() && cfg.scale_prior_by_attention) {
      prototypes = hadamard(scales, mix(visual, prior, cfg.alpha));
    } else if (scales.valid()) {
      prototypes = mix(hadamard(scales, visual), prior, cfg.alpha);
    } else {
      prototypes = mix(visual, prior, cfg.alpha);
    }
  } else if (scales.valid()) {
    prototypes = hadamard(scales, visual);
  }
  out.prototypes = prototypes;
  out.logits = divide(pairwise_sq_distance(query, prototypes, scales), -cfg.dist_scale);
  return out;
}

template <HeadParamsRef P>
Var episode_loss(Graph& g, const Episode& episode, P& params, Variant variant, Mode mode,
                 RngStream& rng) {
  EpisodeForward f = forward_episode(g, episode, params, variant, mode, rng);
  return cross_entropy(f.logits, std::span<const int>(episode.query_true));
}

#define SEMFSL_INSTANTIATE(P)                                                              \
  template Var prior_head<P>(Graph&, P&, Var, Mode, RngStream&);                           \
  template Var visual_head<P>(Graph&, P&, Var, Mode, RngStream&);                          \
  template Var semantic_head<P>(Graph&, P&, Var, Mode, RngStream&);                        \
  template Var feature_attention_head<P>(Graph&, P&, Var);                                 \
  template EpisodeForward forward_episode<P>(Graph&, const Episode&, P&, Variant, Mode,    \
                                             RngStream&);                                  \
  template Var episode_loss<P>(Graph&, const Episode&, P&, Variant, Mode, RngStream&);

SEMFSL_INSTANTIATE(HeadParams)
SEMFSL_INSTANTIATE(const HeadParams)
#undef SEMFSL_INSTANTIATE

ScoreMatrix episode_logits(const Episode& episode, const HeadParams& params, Variant variant,
                           Mode mode, std::uint64_t dropout_seed) {
  Graph g;
  RngStream rng(dropout_seed, "episode_logits.dropout");
  EpisodeForward f = forward_episode(g, episode, params, variant, mode, rng);
  ScoreMatrix out;
  out.logits = f.logits.value();
  out.predicted.resize(static_cast<std::size_t>(out.logits.rows()));
  for (Index r = 0; r < out.logits.rows(); ++r) {
    out.predicted[static_cast<std::size_t>(r)] = static_cast<int>(argmax_lowest(out.logits.row(r)));
  }
  if (f.attention.valid()) out.attention = f.attention.value();
  if (f.feature_scales.valid()) out.feature_scales = f.feature_scales.value();
  return out;
}

RowVector pn_prototype(const Matrix& support) {
  if (support.rows() < 1) throw UsageError("pn_prototype: empty support");
  Graph g;
  return group_mean(g.constant_ref(support), support.rows()).value();
}

double pn_score(const RowVector& query, const RowVector& prototype, double dist_scale) {
  if (query.size() != prototype.size()) {
    throw DimensionError("pn_score: " + shape_string(query) + " vs " + shape_string(prototype));
  }
  if (!(dist_scale > 0.0)) throw ConfigError("dist_scale must be positive");
  return -squared_distance(query, prototype) / dist_scale;
}

RowVector prior_prototype(const RowVector& theta_base, const RowVector& psi,
                          const HeadParams& params) {
  Graph g;
  RngStream unused(0, "prior_prototype");
  const Matrix base = theta_base;
  const Matrix psi_m = psi;
  Var prior = prior_head(g, params, g.constant_ref(psi_m), Mode::eval, unused);
  return mix(g.constant_ref(base), prior, params.config.alpha).value();
}

RowVector sample_attention(const Matrix& support, const RowVector& psi, const HeadParams& params) {
  if (support.rows() < 1) throw UsageError("sample_attention: empty support");
  Graph g;
  RngStream unused(0, "sample_attention");
  const Matrix psi_m = psi;
  Var u = visual_head(g, params, g.constant_ref(support), Mode::eval, unused);
  Var v = semantic_head(g, params, g.constant_ref(psi_m), Mode::eval, unused);
  return attention_from_embeddings(u, v, support.rows()).value();
}

RowVector sampleatt_prototype(const Matrix& support, const RowVector& weights) {
  if (weights.size() != support.rows()) {
    throw DimensionError("sampleatt_prototype: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(support.rows()) + " support rows");
  }
  Graph g;
  const Matrix w = weights;
  return group_weighted_sum(g.constant_ref(w), g.constant_ref(support)).value();
}

RowVector feature_attention(const RowVector& psi, const HeadParams& params) {
  Graph g;
  const Matrix psi_m = psi;
  return feature_attention_head(g, params, g.constant_ref(psi_m)).value();
}

double featatt_score(const RowVector& query, const RowVector& prototype, const RowVector& scales,
                     double dist_scale) {
  if (query.size() != prototype.size() || scales.size() != query.size()) {
    throw DimensionError("featatt_score: " + shape_string(query) + " vs " +
                         shape_string(prototype));
  }
  if (!(dist_scale > 0.0)) throw ConfigError("dist_scale must be positive");
  return -squared_distance(scales.cwiseProduct(query), scales.cwiseProduct(prototype)) /
         dist_scale;
}

RowVector combined_prototype(const Matrix& support, const RowVector& psi,
                             const HeadParams& params) {
  Episode ep;
  ep.shape = EpisodeShape{1, static_cast<int>(support.rows()), 0};
  ep.support = support;
  ep.class_embeddings = psi;
  ep.query.resize(0, support.cols());
  Graph g;
  RngStream unused(0, "combined_prototype");
  return forward_episode(g, ep, params, Variant::combined, Mode::eval, unused).prototypes.value();
}

}  // namespace semfsl
