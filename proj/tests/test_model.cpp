#include <algorithm>
#include <chrono>
#include <sstream>

#include "doctest.h"
#include "semfsl/checkpoint.hpp"
#include "semfsl/errors.hpp"
#include "semfsl/model.hpp"
#include "semfsl/model_gradcheck.hpp"
#include "semfsl/synth.hpp"
#include "test_support.hpp"

using namespace semfsl;
using semfsl::testing::random_matrix;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = *it++;
  }
  return m;
}

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// d_v = 2, d_e = 2, attention width 2, feature-attention width 3; every
// weight is set by hand below.
HeadParams tiny_params(double alpha) {
  ModelConfig cfg;
  cfg.feature_dim = 2;
  cfg.embedding_dim = 2;
  cfg.attention_dim = 2;
  cfg.feature_attention_hidden = 3;
  cfg.alpha = alpha;
  cfg.dist_scale = 1.0;
  HeadParams p = HeadParams::init(cfg, 0);
  p.prior[0].value = mat(2, 2, {0.5, -1.0, 0.25, 2.0});
  p.prior[1].value = mat(1, 2, {0.1, -0.2});
  p.visual_w1.value = mat(2, 2, {1.0, -0.5, 0.3, 0.8});
  p.visual_b1.value = mat(1, 2, {0.05, -0.1});
  p.visual_w2.value = mat(2, 2, {0.7, 0.2, -0.4, 1.1});
  p.visual_b2.value = mat(1, 2, {0.0, 0.3});
  p.semantic_w1.value = mat(2, 2, {0.9, 0.1, -0.2, 0.6});
  p.semantic_b1.value = mat(1, 2, {0.2, 0.0});
  p.semantic_w2.value = mat(2, 2, {1.2, -0.3, 0.4, 0.5});
  p.semantic_b2.value = mat(1, 2, {-0.1, 0.1});
  p.feature_w1.value = mat(2, 3, {0.3, -0.7, 1.0, 0.2, 0.4, -0.6});
  p.feature_b1.value = mat(1, 3, {0.1, 0.0, -0.1});
  p.feature_w2.value = mat(3, 2, {0.5, 1.5, -0.2, 0.8, 1.0, 0.1});
  p.feature_b2.value = mat(1, 2, {0.6, 0.4});
  return p;
}

// Scalar-loop oracles for the hand-composed tests.
RowVector oracle_affine(const RowVector& x, const Matrix& w, const Matrix& b) {
  RowVector out(w.cols());
  for (Index j = 0; j < w.cols(); ++j) {
    double s = b(0, j);
    for (Index i = 0; i < w.rows(); ++i) s += x(i) * w(i, j);
    out(j) = s;
  }
  return out;
}

RowVector oracle_relu(RowVector x) {
  for (Index i = 0; i < x.size(); ++i) x(i) = x(i) > 0.0 ? x(i) : 0.0;
  return x;
}

RowVector oracle_softmax(const RowVector& x) {
  double m = x(0);
  for (Index i = 1; i < x.size(); ++i) m = std::max(m, x(i));
  double z = 0.0;
  RowVector e(x.size());
  for (Index i = 0; i < x.size(); ++i) z += e(i) = std::exp(x(i) - m);
  for (Index i = 0; i < x.size(); ++i) e(i) /= z;
  return e;
}

Episode random_episode(int ways, int shots, int queries, Index dv, Index de, RngStream& rng) {
  Episode ep;
  ep.shape = {ways, shots, queries};
  ep.support = random_matrix(ways * shots, dv, rng);
  ep.query = random_matrix(ways * queries, dv, rng);
  ep.class_embeddings = random_matrix(ways, de, rng);
  for (int c = 0; c < ways; ++c) {
    ep.class_names.push_back("c" + std::to_string(c));
    ep.bank_classes.push_back(static_cast<std::size_t>(c));
    for (int j = 0; j < shots; ++j) {
      ep.support_presented.push_back(c);
      ep.support_true.push_back(c);
      ep.support_refs.push_back({static_cast<std::size_t>(c), j});
    }
    for (int i = 0; i < queries; ++i) ep.query_true.push_back(c);
  }
  return ep;
}

ModelConfig small_config(Index dv, Index de) {
  ModelConfig cfg;
  cfg.feature_dim = dv;
  cfg.embedding_dim = de;
  cfg.dist_scale = 8.0;
  return cfg;
}

// Heads whose outputs do not depend on their input: zero final weights and
// uniform visual scores, unit feature scales.
void make_constant_heads(HeadParams& p) {
  p.visual_w2.value.setZero();
  p.visual_b2.value.setConstant(0.25);
  p.feature_w2.value.setZero();
  p.feature_b2.value.setOnes();
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("pn_prototype and pn_score") {
  CHECK(pn_prototype(mat(2, 2, {1, 0, 0, 1})) == row({0.5, 0.5}));
  CHECK(pn_prototype(mat(1, 2, {3, 4})) == row({3, 4}));
  CHECK_THROWS_AS(pn_prototype(Matrix(0, 2)), UsageError);

  RngStream rng(1, "pn");
  const Matrix rows = random_matrix(5, 640, rng);
  const RowVector proto = pn_prototype(rows);
  for (Index k = 0; k < 640; ++k) {
    double s = 0.0;
    for (Index i = 0; i < 5; ++i) s += rows(i, k);
    CHECK(std::abs(proto(k) - s / 5.0) <= 1e-12);
  }
  // Exact for power-of-two factors, where scaling commutes with rounding.
  for (double c : {2.0, 0.25, -1.0, 1024.0}) CHECK(pn_prototype(c * rows) == c * proto);
  CHECK(max_abs(pn_prototype(3.0 * rows) - 3.0 * proto) <= 1e-14);

  CHECK(pn_score(row({1, 2}), row({1, 2}), 32.0) == 0.0);
  CHECK(pn_score(row({8, 0}), row({0, 0}), 32.0) == -2.0);
  const Matrix a = random_matrix(1, 640, rng), b = random_matrix(1, 640, rng);
  CHECK(std::abs(pn_score(a, b, 16.0) + semfsl::testing::naive_sq_distance(a, b) / 16.0) <= 1e-10);
  CHECK_THROWS_AS(pn_score(row({1}), row({1, 2}), 1.0), DimensionError);
}

TEST_CASE("prior_prototype mixing") {
  HeadParams p = tiny_params(1.0);
  const RowVector psi = row({0.3, -0.8});
  const RowVector base = row({2.0, -1.0});
  CHECK(prior_prototype(base, psi, p) == base);

  p.config.alpha = 0.0;
  const RowVector tau = oracle_affine(psi, p.prior[0].value, p.prior[1].value);
  CHECK(max_abs(prior_prototype(base, psi, p) - tau) <= 1e-15);
  CHECK(prior_prototype(base, psi, p) == prior_prototype(-base, psi, p));

  // tau(psi) = (0, 2) via a zero weight and bias (0, 2).
  p.config.alpha = 0.5;
  p.prior[0].value.setZero();
  p.prior[1].value = mat(1, 2, {0, 2});
  CHECK(prior_prototype(row({2, 0}), psi, p) == row({1, 1}));
}

TEST_CASE("sample attention") {
  SUBCASE("hook with pre-embedded rows") {
    Graph g;
    const Var w = attention_from_embeddings(g.constant(mat(2, 2, {1, 0, 0, 1})),
                                            g.constant(mat(1, 2, {1, 0})), 2);
    CHECK(std::abs(w.value()(0, 0) - 0.7310585786300049) <= 1e-15);
    CHECK(std::abs(w.value()(0, 1) - 0.2689414213699951) <= 1e-15);
    CHECK_THROWS_AS(attention_from_embeddings(g.constant(Matrix::Zero(3, 2)),
                                              g.constant(Matrix::Zero(1, 2)), 2),
                    DimensionError);
  }
  SUBCASE("single shot and identical rows") {
    const HeadParams p = tiny_params(0.5);
    const RowVector psi = row({0.4, 0.1});
    CHECK(sample_attention(mat(1, 2, {3, -2}), psi, p) == row({1.0}));
    const RowVector u = sample_attention(mat(3, 2, {1, 2, 1, 2, 1, 2}), psi, p);
    for (Index i = 0; i < 3; ++i) CHECK(u(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("weights are a distribution and permutation-equivariant") {
    const HeadParams p = HeadParams::init(small_config(16, 6), 3);
    RngStream rng(2, "perm");
    for (int t = 0; t < 50; ++t) {
      const Matrix support = random_matrix(5, 16, rng);
      const RowVector psi = random_matrix(1, 6, rng);
      const RowVector w = sample_attention(support, psi, p);
      CHECK((w.array() > 0.0).all());
      CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
      const std::vector<Index> perm{3, 0, 4, 1, 2};
      Matrix permuted(5, 16);
      for (Index i = 0; i < 5; ++i) permuted.row(i) = support.row(perm[static_cast<std::size_t>(i)]);
      const RowVector wp = sample_attention(permuted, psi, p);
      for (Index i = 0; i < 5; ++i) CHECK(std::abs(wp(i) - w(perm[static_cast<std::size_t>(i)])) <= 1e-15);
    }
  }
  SUBCASE("attention-weighted prototype") {
    const Matrix rows = mat(2, 2, {1, 0, 0, 1});
    const RowVector w = row({0.7310585786300049, 0.2689414213699951});
    CHECK(sampleatt_prototype(rows, w) == w);
    CHECK(sampleatt_prototype(mat(3, 2, {5, 6, 7, 8, 9, 1}), row({1, 0, 0})) == row({5, 6}));
    RngStream rng(4, "uniform");
    const Matrix x = random_matrix(4, 32, rng);
    CHECK(max_abs(sampleatt_prototype(x, RowVector::Constant(4, 0.25)) - pn_prototype(x)) <= 1e-15);
    CHECK_THROWS_AS(sampleatt_prototype(x, row({0.5, 0.5})), DimensionError);
  }
}

TEST_CASE("feature attention") {
  HeadParams p = tiny_params(0.5);
  const RowVector psi = row({0.7, -1.3});
  const RowVector h = oracle_softmax(oracle_affine(psi, p.feature_w1.value, p.feature_b1.value));
  const RowVector expected = oracle_affine(h, p.feature_w2.value, p.feature_b2.value);
  CHECK(max_abs(feature_attention(psi, p) - expected) <= 1e-12);

  // Two inputs with identical first-layer outputs: psi and psi + n with n
  // in the null space of w1 (here w1 has a zero second row).
  p.feature_w1.value.row(1).setZero();
  CHECK(feature_attention(row({0.7, 5.0}), p) == feature_attention(row({0.7, -9.0}), p));

  p.feature_w2.value.setZero();
  p.feature_b2.value = mat(1, 2, {0.25, -3.0});
  CHECK(feature_attention(psi, p) == row({0.25, -3.0}));
}

TEST_CASE("featatt_score") {
  CHECK(featatt_score(row({1, 1}), row({0, 1}), row({2, 1}), 1.0) == -4.0);
  RngStream rng(8, "featatt");
  for (int t = 0; t < 100; ++t) {
    const RowVector q = random_matrix(1, 64, rng), c = random_matrix(1, 64, rng);
    CHECK(std::abs(featatt_score(q, c, RowVector::Ones(64), 16.0) - pn_score(q, c, 16.0)) <= 1e-12);
    CHECK(featatt_score(q, c, RowVector::Zero(64), 16.0) == 0.0);
  }
  CHECK_THROWS_AS(featatt_score(row({1, 1}), row({0, 1}), row({2}), 1.0), DimensionError);
}

TEST_CASE("combined prototype") {
  const Matrix support = mat(3, 2, {1.0, 0.5, -0.3, 2.0, 0.8, -1.2});
  const RowVector psi = row({0.6, -0.4});

  SUBCASE("step-by-step oracle at alpha 0.5") {
    const HeadParams p = tiny_params(0.5);
    const RowVector v = oracle_affine(
        oracle_relu(oracle_affine(psi, p.semantic_w1.value, p.semantic_b1.value)),
        p.semantic_w2.value, p.semantic_b2.value);
    RowVector scores(3);
    for (Index i = 0; i < 3; ++i) {
      const RowVector u = oracle_affine(
          oracle_relu(oracle_affine(support.row(i), p.visual_w1.value, p.visual_b1.value)),
          p.visual_w2.value, p.visual_b2.value);
      scores(i) = u(0) * v(0) + u(1) * v(1);
    }
    const RowVector w = oracle_softmax(scores);
    RowVector theta_sa = RowVector::Zero(2);
    for (Index i = 0; i < 3; ++i) theta_sa += w(i) * support.row(i);
    const RowVector a = oracle_affine(
        oracle_softmax(oracle_affine(psi, p.feature_w1.value, p.feature_b1.value)),
        p.feature_w2.value, p.feature_b2.value);
    const RowVector tau = oracle_affine(psi, p.prior[0].value, p.prior[1].value);
    RowVector expected(2);
    for (Index k = 0; k < 2; ++k) expected(k) = 0.5 * a(k) * theta_sa(k) + 0.5 * tau(k);

    CHECK(max_abs(sample_attention(support, psi, p) - w) <= 1e-12);
    CHECK(max_abs(combined_prototype(support, psi, p) - expected) <= 1e-12);
  }
  SUBCASE("alpha 0 gives the semantic prior") {
    const HeadParams p = tiny_params(0.0);
    Graph g;
    RngStream unused(0, "unused");
    const Matrix psi_m = psi;
    const Matrix tau = prior_head(g, p, g.constant(psi_m), Mode::eval, unused).value();
    CHECK(combined_prototype(support, psi, p) == RowVector(tau));
    CHECK(max_abs(tau - oracle_affine(psi, p.prior[0].value, p.prior[1].value)) <= 1e-15);
  }
  SUBCASE("alpha 1, one shot, unit scales gives the support row") {
    HeadParams p = tiny_params(1.0);
    p.feature_w2.value.setZero();
    p.feature_b2.value.setOnes();
    CHECK(combined_prototype(support.topRows(1), psi, p) == RowVector(support.row(0)));
  }
  SUBCASE("prior scaling switch") {
    HeadParams p = tiny_params(0.5);
    p.config.scale_prior_by_attention = true;
    const RowVector a = feature_attention(psi, p);
    const RowVector theta_sa = sampleatt_prototype(support, sample_attention(support, psi, p));
    const RowVector tau = prior_prototype(RowVector::Zero(2), psi, p) * 2.0;
    const RowVector expected = a.cwiseProduct(0.5 * theta_sa + 0.5 * tau);
    CHECK(max_abs(combined_prototype(support, psi, p) - expected) <= 1e-12);
  }
}

TEST_CASE("episode logits") {
  const ModelConfig cfg = small_config(12, 5);
  RngStream rng(11, "logits");

  SUBCASE("pn picks the class whose prototype equals the query") {
    Episode ep = random_episode(4, 2, 1, 12, 5, rng);
    ep.query.row(2) = pn_prototype(ep.support.middleRows(4, 2));
    const HeadParams p = HeadParams::init(cfg, 1);
    const ScoreMatrix s = episode_logits(ep, p, Variant::pn);
    CHECK(s.predicted[2] == 2);
    CHECK(s.logits(2, 2) == 0.0);
    CHECK((s.logits.array() <= 0.0).all());
    CHECK(s.attention.size() == 0);
    CHECK(s.feature_scales.size() == 0);
  }
  SUBCASE("ties go to the lowest class index") {
    Episode ep = random_episode(3, 1, 1, 12, 5, rng);
    ep.support.row(2) = ep.support.row(1);
    ep.query.row(0) = ep.support.row(1);
    const ScoreMatrix s = episode_logits(ep, HeadParams::init(cfg, 1), Variant::pn);
    CHECK(s.predicted[0] == 1);
  }
  SUBCASE("one shot makes sample attention identical to am3") {
    const HeadParams p = HeadParams::init(cfg, 5);
    for (int t = 0; t < 50; ++t) {
      const Episode ep = random_episode(5, 1, 3, 12, 5, rng);
      const ScoreMatrix sa = episode_logits(ep, p, Variant::sample_att);
      const ScoreMatrix am = episode_logits(ep, p, Variant::am3);
      CHECK(sa.logits == am.logits);
      CHECK((sa.attention.array() == 1.0).all());
    }
  }
  SUBCASE("alpha 1 with constant heads reduces combined to pn") {
    ModelConfig c1 = cfg;
    c1.alpha = 1.0;
    HeadParams p = HeadParams::init(c1, 6);
    make_constant_heads(p);
    for (int t = 0; t < 50; ++t) {
      const Episode ep = random_episode(5, 3, 4, 12, 5, rng);
      const ScoreMatrix comb = episode_logits(ep, p, Variant::combined);
      const ScoreMatrix pn = episode_logits(ep, p, Variant::pn);
      CHECK(max_abs(comb.logits - pn.logits) <= 1e-9);
    }
  }
  SUBCASE("feature-attention queries are scaled per class") {
    HeadParams p = HeadParams::init(cfg, 7);
    const Episode ep = random_episode(3, 2, 2, 12, 5, rng);
    const ScoreMatrix s = episode_logits(ep, p, Variant::feat_att);
    RngStream unused(0, "x");
    for (Index q = 0; q < ep.query.rows(); ++q) {
      for (int c = 0; c < 3; ++c) {
        const RowVector a = s.feature_scales.row(c);
        const RowVector theta = prior_prototype(
            a.cwiseProduct(pn_prototype(ep.support.middleRows(2 * c, 2))),
            ep.class_embeddings.row(c), p);
        const double expected =
            -squared_distance(RowVector(a.cwiseProduct(ep.query.row(q))), theta) / cfg.dist_scale;
        CHECK(std::abs(s.logits(q, c) - expected) <= 1e-12);
      }
    }
  }
  SUBCASE("rescaling the distance divisor keeps predictions") {
    for (Variant v : {Variant::pn, Variant::am3, Variant::sample_att, Variant::feat_att,
                      Variant::combined}) {
      HeadParams p = HeadParams::init(cfg, 9);
      for (int t = 0; t < 100; ++t) {
        const Episode ep = random_episode(5, 2, 3, 12, 5, rng);
        const ScoreMatrix base = episode_logits(ep, p, v);
        for (double factor : {0.001, 0.37, 3.0, 1e4}) {
          HeadParams scaled = p;
          scaled.config.dist_scale = cfg.dist_scale * factor;
          CHECK(episode_logits(ep, scaled, v).predicted == base.predicted);
        }
      }
    }
  }
  SUBCASE("dimension mismatches") {
    const Episode ep = random_episode(3, 1, 1, 7, 5, rng);
    CHECK_THROWS_AS(episode_logits(ep, HeadParams::init(cfg, 1), Variant::pn), DimensionError);
    const Episode ep2 = random_episode(3, 1, 1, 12, 4, rng);
    CHECK_THROWS_AS(episode_logits(ep2, HeadParams::init(cfg, 1), Variant::am3), DimensionError);
    CHECK_NOTHROW(episode_logits(ep2, HeadParams::init(cfg, 1), Variant::pn));
  }
}

TEST_CASE("train-mode dropout is seeded") {
  const HeadParams p = HeadParams::init(small_config(12, 5), 2);
  RngStream rng(3, "dropout");
  const Episode ep = random_episode(5, 3, 2, 12, 5, rng);
  const ScoreMatrix a = episode_logits(ep, p, Variant::combined, Mode::train, 1);
  const ScoreMatrix b = episode_logits(ep, p, Variant::combined, Mode::train, 1);
  const ScoreMatrix c = episode_logits(ep, p, Variant::combined, Mode::train, 2);
  const ScoreMatrix e = episode_logits(ep, p, Variant::combined, Mode::eval, 1);
  CHECK(a.logits == b.logits);
  CHECK(a.logits != c.logits);
  CHECK(a.logits != e.logits);
}

TEST_CASE("parameter bookkeeping") {
  ModelConfig cfg = small_config(12, 5);
  HeadParams p = HeadParams::init(cfg, 4);
  CHECK(p.all().size() == 14);
  CHECK(p.used_by(Variant::pn).empty());
  CHECK(p.used_by(Variant::am3).size() == 2);
  CHECK(p.used_by(Variant::sample_att).size() == 10);
  CHECK(p.used_by(Variant::feat_att).size() == 6);
  CHECK(p.used_by(Variant::combined).size() == 14);
  cfg.alpha = 1.0;
  CHECK(HeadParams::init(cfg, 4).used_by(Variant::sample_att).size() == 8);
  REQUIRE(p.find("visual.w1") != nullptr);
  CHECK(p.find("visual.w1")->value.rows() == 12);
  CHECK(p.find("nope") == nullptr);

  // Glorot bound and zero biases.
  const double limit = std::sqrt(6.0 / (12.0 + 32.0));
  CHECK(p.visual_w1.value.cwiseAbs().maxCoeff() <= limit);
  CHECK(p.visual_b1.value.isZero());
  // Same seed, same init; parameters draw from independent streams.
  CHECK(HeadParams::init(small_config(12, 5), 4).visual_w1.value == p.visual_w1.value);
  CHECK(HeadParams::init(small_config(12, 5), 5).visual_w1.value != p.visual_w1.value);

  cfg.prior_layers = 2;
  cfg.prior_hidden = 7;
  CHECK(HeadParams::init(cfg, 4).prior.size() == 4);
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(HeadParams::init(cfg, 4), ConfigError);
  CHECK(parse_variant("sample_att") == Variant::sample_att);
  CHECK_THROWS_AS(parse_variant("Combined"), ConfigError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelConfig cfg = small_config(9, 4);
  cfg.prior_layers = 2;
  cfg.prior_hidden = 5;
  cfg.alpha = 0.3;
  Checkpoint ck{Variant::combined, 1234567890123ULL, HeadParams::init(cfg, 21)};
  // Values that stress decimal round-tripping.
  ck.params.visual_b1.value(0, 0) = 0.1;
  ck.params.visual_b1.value(0, 1) = -1e-310;
  ck.params.visual_b1.value(0, 2) = 1.0 / 3.0;
  ck.params.visual_b1.value(0, 3) = -0.0;
  ck.params.visual_b1.value(0, 4) = 1.7976931348623157e308;

  std::stringstream buf;
  write_checkpoint(buf, ck);
  const Checkpoint back = read_checkpoint(buf);
  CHECK(back.variant == ck.variant);
  CHECK(back.seed == ck.seed);
  CHECK(back.params.config.alpha == 0.3);
  CHECK(back.params.config.prior_layers == 2);
  const auto a = ck.params.all();
  const auto b = back.params.all();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    REQUIRE(a[i]->value.rows() == b[i]->value.rows());
    REQUIRE(a[i]->value.cols() == b[i]->value.cols());
    CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(),
                      sizeof(double) * static_cast<std::size_t>(a[i]->value.size())) == 0);
  }
  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == buf.str());

  const auto path = semfsl::testing::temp_path("model.ckpt");
  save_checkpoint(ck, path);
  CHECK(load_checkpoint(path).params.visual_b1.value == ck.params.visual_b1.value);

  std::stringstream truncated(buf.str().substr(0, buf.str().size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
  std::stringstream garbage("not a checkpoint\n");
  CHECK_THROWS_AS(read_checkpoint(garbage), FormatError);
}

TEST_CASE("combined loss passes the gradient check") {
  const auto start = std::chrono::steady_clock::now();
  const ModelGradCheckSummary s = run_model_gradcheck(1, 10);
  INFO(s.to_text());
  CHECK(s.passed());
  CHECK(s.checks.size() == 5);
  CHECK(s.checks.at("loss").worst.coords_checked > 1000);
  MESSAGE("10 instances in "
          << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
          << " s");
}
