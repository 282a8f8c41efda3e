#pragma once

#include <concepts>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "semfsl/autodiff.hpp"
#include "semfsl/episode.hpp"
#include "semfsl/ops.hpp"

namespace semfsl {

enum class Variant { pn, am3, sample_att, feat_att, combined };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);
bool uses_sample_attention(Variant v);
bool uses_feature_attention(Variant v);
bool uses_semantics(Variant v);

struct ModelConfig {
  Index feature_dim = 640;
  Index embedding_dim = 300;
  // Output width of the visual and semantic attention embeddings, and the
  // hidden width of both of their layers.
  Index attention_dim = 32;
  // Bottleneck width of the feature-attention head.
  Index feature_attention_hidden = 32;
  // 1: dropout -> affine. 2: dropout -> affine -> relu -> dropout -> affine.
  int prior_layers = 1;
  Index prior_hidden = 300;

  double prior_dropout = 0.4;
  double visual_dropout = 0.2;
  double semantic_dropout = 0.6;

  // Weight of the visual prototype against the semantic prior.
  double alpha = 0.5;
  // Squared distances are divided by this before scoring.
  double dist_scale = 32.0;
  // Apply the feature scales to the semantic-prior branch too.
  bool scale_prior_by_attention = false;

  void validate() const;
};

// Trainable heads of the meta-learner. A value type: copying snapshots
// every parameter.
struct HeadParams {
  ModelConfig config;

  std::vector<Parameter> prior;  // weight/bias pairs, prior_layers of them
  Parameter visual_w1, visual_b1, visual_w2, visual_b2;
  Parameter semantic_w1, semantic_b1, semantic_w2, semantic_b2;
  Parameter feature_w1, feature_b1, feature_w2, feature_b2;

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero; each
  // parameter draws from its own stream keyed by (seed, name).
  static HeadParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  // Parameters that receive gradient under `variant` (the prior head only
  // when alpha < 1).
  std::vector<Parameter*> used_by(Variant variant);
  Parameter* find(std::string_view name);
};

template <class P>
concept HeadParamsRef = std::same_as<std::remove_const_t<P>, HeadParams>;

// Graph-level heads. With non-const params the parameters become
// differentiable leaves; with const params they enter as constants.
template <HeadParamsRef P>
Var prior_head(Graph& g, P& params, Var psi, Mode mode, RngStream& rng);
template <HeadParamsRef P>
Var visual_head(Graph& g, P& params, Var features, Mode mode, RngStream& rng);
template <HeadParamsRef P>
Var semantic_head(Graph& g, P& params, Var psi, Mode mode, RngStream& rng);
// Per-dimension feature scales a(psi), one row per class.
template <HeadParamsRef P>
Var feature_attention_head(Graph& g, P& params, Var psi);

// Attention weights (n x k) from pre-embedded support rows u ((n*k) x h,
// class-major) and class rows v (n x h): softmax over j of u_{c,j} . v_c.
Var attention_from_embeddings(Var u, Var v, Index shots);

// Everything one episode forward pass produces.
struct EpisodeForward {
  Var logits;          // queries x ways; -distance / dist_scale
  Var prototypes;      // ways x d_v
  Var attention;       // ways x shots; invalid without sample attention
  Var feature_scales;  // ways x d_v; invalid without feature attention
};

template <HeadParamsRef P>
EpisodeForward forward_episode(Graph& g, const Episode& episode, P& params, Variant variant,
                               Mode mode, RngStream& rng);

struct ScoreMatrix {
  Matrix logits;
  std::vector<int> predicted;  // argmax per query, ties to the lowest index
  Matrix attention;            // empty without sample attention
  Matrix feature_scales;       // empty without feature attention
};

// Frozen-parameter scoring; safe to call concurrently with shared params.
ScoreMatrix episode_logits(const Episode& episode, const HeadParams& params, Variant variant,
                           Mode mode = Mode::eval, std::uint64_t dropout_seed = 0);

// Mean cross-entropy of the query rows against their true classes.
template <HeadParamsRef P>
Var episode_loss(Graph& g, const Episode& episode, P& params, Variant variant, Mode mode,
                 RngStream& rng);

// Value-level building blocks (eval mode, no graph needed by callers).
RowVector pn_prototype(const Matrix& support);
double pn_score(const RowVector& query, const RowVector& prototype, double dist_scale);
RowVector prior_prototype(const RowVector& theta_base, const RowVector& psi,
                          const HeadParams& params);
RowVector sample_attention(const Matrix& support, const RowVector& psi, const HeadParams& params);
RowVector sampleatt_prototype(const Matrix& support, const RowVector& weights);
RowVector feature_attention(const RowVector& psi, const HeadParams& params);
double featatt_score(const RowVector& query, const RowVector& prototype, const RowVector& scales,
                     double dist_scale);
RowVector combined_prototype(const Matrix& support, const RowVector& psi,
                             const HeadParams& params);

}  // namespace semfsl
