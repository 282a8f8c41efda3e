#include <fstream>

#include "doctest.h"
#include "semfsl/checkpoint.hpp"
#include "semfsl/errors.hpp"
#include "semfsl/synth.hpp"
#include "semfsl/trainer.hpp"
#include "test_support.hpp"

using namespace semfsl;

namespace {

struct ToyData {
  SynthResult synth;
  Matrix semantics;
};

ToyData toy_data(std::uint64_t seed, double within_std = 1.0, double mean_scale = 1.0,
                 double semantic_noise = 0.1, bool unit_norm = false) {
  SynthSpec spec;
  spec.n_classes = 25;
  spec.samples_per_class = 30;
  spec.feature_dim = 16;
  spec.embedding_dim = 8;
  spec.class_mean_scale = mean_scale;
  spec.within_class_std = within_std;
  spec.semantic_noise_std = semantic_noise;
  spec.seed = seed;
  ToyData d{synth_generate(spec), {}};
  d.semantics = align_embeddings(d.synth.table, d.synth.bank, unit_norm);
  return d;
}

TrainConfig toy_config(Variant variant) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 10;
  cfg.val_episodes = 50;
  cfg.shape = {4, 2, 5};
  cfg.model.feature_dim = 16;
  cfg.model.embedding_dim = 8;
  cfg.model.attention_dim = 8;
  cfg.model.feature_attention_hidden = 8;
  cfg.model.dist_scale = 4.0;
  cfg.seed = 5;
  return cfg;
}

bool params_equal(const HeadParams& a, const HeadParams& b) {
  const auto pa = a.all();
  const auto pb = b.all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.rows() != pb[i]->value.rows() || pa[i]->value.cols() != pb[i]->value.cols()) {
      return false;
    }
    if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                    sizeof(double) * static_cast<std::size_t>(pa[i]->value.size())) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("episode loss values") {
  SUBCASE("identical prototypes give ln(ways)") {
    const ToyData d = toy_data(1);
    Episode ep;
    ep.shape = {5, 1, 2};
    ep.support = Matrix::Ones(5, 16);
    ep.query = Matrix::Random(10, 16);
    ep.class_embeddings = Matrix::Zero(5, 8);
    for (int c = 0; c < 5; ++c) {
      ep.support_presented.push_back(c);
      ep.support_true.push_back(c);
      ep.query_true.push_back(c);
      ep.query_true.push_back(c);
    }
    const HeadParams p = HeadParams::init(toy_config(Variant::pn).model, 1);
    Graph g;
    RngStream rng(0, "loss");
    const double loss = episode_loss(g, ep, p, Variant::pn, Mode::train, rng).scalar();
    CHECK(std::abs(loss - std::log(5.0)) <= 1e-12);
  }
  SUBCASE("hand-fixed logits") {
    Graph g;
    const std::vector<int> labels{0, 1};
    const Matrix logits = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    CHECK(std::abs(cross_entropy(g.constant(logits), labels).scalar() - 0.3132616875182228) <= 1e-15);
  }
  SUBCASE("separated classes reach a small loss after training") {
    const ToyData d = toy_data(2, 0.0);
    TrainConfig cfg = toy_config(Variant::am3);
    cfg.model.dist_scale = 0.5;
    cfg.model.alpha = 0.8;
    cfg.epochs = 5;
    const TrainResult r = train(d.synth.bank, d.semantics, cfg);
    const EpisodeSource src(split_view(d.synth.bank, Split::test), d.semantics, cfg.shape, {}, 9,
                            "check");
    double total = 0.0;
    for (std::uint64_t t = 0; t < 20; ++t) {
      Graph g;
      RngStream rng(t, "x");
      total += episode_loss(g, src.task(t), r.params, Variant::am3, Mode::eval, rng).scalar();
    }
    CHECK(total / 20.0 < 0.01);
  }
}

TEST_CASE("training edge cases") {
  const ToyData d = toy_data(3);
  SUBCASE("zero epochs return the initial params") {
    TrainConfig cfg = toy_config(Variant::combined);
    cfg.epochs = 0;
    const TrainResult r = train(d.synth.bank, d.semantics, cfg);
    CHECK(r.log.epochs.empty());
    CHECK(r.log.best_epoch == -1);
    CHECK(params_equal(r.params, HeadParams::init(cfg.model, cfg.seed)));
  }
  SUBCASE("zero learning rate leaves params untouched") {
    TrainConfig cfg = toy_config(Variant::combined);
    cfg.lr = 0.0;
    const TrainResult r = train(d.synth.bank, d.semantics, cfg);
    CHECK(r.log.epochs.size() == 2);
    CHECK(params_equal(r.params, HeadParams::init(cfg.model, cfg.seed)));
  }
  SUBCASE("a diverging run reports a numeric error") {
    TrainConfig cfg = toy_config(Variant::am3);
    cfg.lr = 1e250;
    cfg.model.prior_dropout = 0.0;
    try {
      train(d.synth.bank, d.semantics, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch") != std::string::npos);
      CHECK(msg.find("prior.w0=") != std::string::npos);
    }
  }
  SUBCASE("missing splits") {
    FeatureBank bank = d.synth.bank;
    for (auto& c : bank.classes) {
      if (c.split == Split::val) c.split = Split::test;
    }
    CHECK_THROWS_AS(train(bank, d.semantics, toy_config(Variant::pn)), ConfigError);
  }
}

TEST_CASE("training is bit-deterministic") {
  const ToyData d = toy_data(4);
  for (Variant v : {Variant::am3, Variant::sample_att, Variant::combined}) {
    TrainConfig cfg = toy_config(v);
    cfg.noise = cfg.val_noise = {true, 1, 0.5};
    const TrainResult a = train(d.synth.bank, d.semantics, cfg);
    const TrainResult b = train(d.synth.bank, d.semantics, cfg);
    CHECK(a.log.to_text() == b.log.to_text());
    CHECK(params_equal(a.params, b.params));
    cfg.threads = 3;
    CHECK(train(d.synth.bank, d.semantics, cfg).log.to_text() == a.log.to_text());
    cfg.seed = 6;
    CHECK(train(d.synth.bank, d.semantics, cfg).log.to_text() != a.log.to_text());
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.lr_halving_period = 40;
  CHECK(lr_at_epoch(cfg, 0) == 0.02);
  CHECK(lr_at_epoch(cfg, 39) == 0.02);
  CHECK(lr_at_epoch(cfg, 40) == 0.01);
  CHECK(lr_at_epoch(cfg, 79) == 0.01);
  CHECK(lr_at_epoch(cfg, 80) == 0.005);
  CHECK(lr_at_epoch(cfg, 199) == 0.02 / 16.0);

  const ToyData d = toy_data(5);
  TrainConfig t = toy_config(Variant::am3);
  t.epochs = 7;
  t.lr_halving_period = 3;
  t.val_episodes = 5;
  const TrainResult r = train(d.synth.bank, d.semantics, t);
  for (const EpochLog& e : r.log.epochs) {
    CHECK(e.lr == t.lr * std::pow(0.5, e.epoch / 3));
  }
}

TEST_CASE("train log bookkeeping") {
  const ToyData d = toy_data(6);
  TrainConfig cfg = toy_config(Variant::combined);
  cfg.epochs = 4;
  const TrainResult r = train(d.synth.bank, d.semantics, cfg);
  double best = -1.0;
  for (const EpochLog& e : r.log.epochs) best = std::max(best, e.val_accuracy);
  CHECK(r.log.best_val_accuracy == best);
  CHECK(r.log.epochs[static_cast<std::size_t>(r.log.best_epoch)].val_accuracy == best);
  const std::string text = r.log.to_text();
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  CHECK(text.rfind("epoch=0 train_loss=", 0) == 0);
}

TEST_CASE("pn loss is flat and am3 loss decreases on fixed episodes") {
  const ToyData d = toy_data(7);
  for (Variant v : {Variant::pn, Variant::am3}) {
    TrainConfig cfg = toy_config(v);
    cfg.model.prior_dropout = 0.0;
    cfg.model.alpha = 0.3;
    cfg.resample_each_epoch = false;
    cfg.lr = 1e-3;
    cfg.epochs = 60;
    cfg.val_episodes = 1;
    const TrainResult r = train(d.synth.bank, d.semantics, cfg);
    std::vector<double> ma;
    for (std::size_t e = 19; e < r.log.epochs.size(); ++e) {
      double s = 0.0;
      for (std::size_t k = e - 19; k <= e; ++k) s += r.log.epochs[k].train_loss;
      ma.push_back(s / 20.0);
    }
    for (std::size_t i = 1; i < ma.size(); ++i) {
      INFO(variant_name(v), " window ", i);
      CHECK(ma[i] <= ma[i - 1]);
    }
    if (v == Variant::am3) CHECK(ma.back() < ma.front());
  }
}

TEST_CASE("validation") {
  SUBCASE("same params and seed give the same result") {
    const ToyData d = toy_data(8);
    const TrainConfig cfg = toy_config(Variant::combined);
    const HeadParams p = HeadParams::init(cfg.model, 1);
    const EvalResult a = validate(d.synth.bank, d.semantics, p, cfg);
    const EvalResult b = validate(d.synth.bank, d.semantics, p, cfg);
    CHECK(a.mean_accuracy == b.mean_accuracy);
    CHECK(a.ci_half_width == b.ci_half_width);
  }
  SUBCASE("untrained params on uninformative features sit at chance") {
    // Identical class distributions and large pools, so that the sampled
    // bank itself carries no class structure to exploit.
    SynthSpec spec;
    spec.n_classes = 10;
    spec.samples_per_class = 3000;
    spec.feature_dim = 16;
    spec.embedding_dim = 8;
    spec.class_mean_scale = 0.0;
    spec.train_fraction = 0.5;
    spec.val_fraction = 0.5;
    spec.seed = 9;
    ToyData d{synth_generate(spec), {}};
    d.semantics = align_embeddings(d.synth.table, d.synth.bank);
    TrainConfig cfg = toy_config(Variant::combined);
    cfg.shape = {5, 1, 15};
    cfg.val_episodes = 2000;
    const EvalResult r = validate(d.synth.bank, d.semantics, HeadParams::init(cfg.model, 2), cfg);
    CHECK(std::abs(r.mean_accuracy - 20.0) <= 3.0 * r.ci_half_width);
  }
  SUBCASE("converged run on easy data") {
    const ToyData d = toy_data(10, 0.3);
    TrainConfig cfg = toy_config(Variant::combined);
    cfg.epochs = 5;
    cfg.val_episodes = 200;
    const auto path = semfsl::testing::temp_path("best.ckpt");
    cfg.checkpoint_path = path;
    const TrainResult r = train(d.synth.bank, d.semantics, cfg);
    CHECK(r.log.best_val_accuracy > 95.0);
    CHECK(r.log.best_checkpoint == path.string());
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.variant == Variant::combined);
    CHECK(params_equal(ck.params, r.params));
    CHECK(validate(d.synth.bank, d.semantics, ck.params, cfg).mean_accuracy ==
          r.log.best_val_accuracy);
  }
}

TEST_CASE("alpha selection") {
  SUBCASE("singleton grid") {
    const ToyData d = toy_data(11);
    TrainConfig cfg = toy_config(Variant::am3);
    cfg.epochs = 1;
    CHECK(select_alpha(d.synth.bank, d.semantics, cfg, {0.5}).alpha == 0.5);
    CHECK_THROWS_AS(select_alpha(d.synth.bank, d.semantics, cfg, {}), ConfigError);
    CHECK_THROWS_AS(select_alpha(d.synth.bank, d.semantics, cfg, {1.5}), ConfigError);
  }
  SUBCASE("useless semantics pick the visual prototype") {
    // Overwhelming noise, normalized: the embeddings are random directions.
    const ToyData d = toy_data(12, 1.0, 1.0, 1e6, true);
    TrainConfig cfg = toy_config(Variant::am3);
    cfg.epochs = 3;
    cfg.val_episodes = 200;
    const AlphaSelection s = select_alpha(d.synth.bank, d.semantics, cfg, {1.0, 0.0});
    CHECK(s.alpha == 1.0);
    REQUIRE(s.val_accuracy.size() == 2);
    CHECK(s.val_accuracy[0].first == 0.0);
  }
  SUBCASE("exact semantics win in noisy one-shot tasks for most seeds") {
    int zero_wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthSpec spec;
      spec.n_classes = 40;
      spec.samples_per_class = 30;
      spec.feature_dim = 8;
      spec.embedding_dim = 8;
      spec.within_class_std = 3.0;
      spec.semantic_noise_std = 0.0;
      spec.seed = 100 + seed;
      const SynthResult s = synth_generate(spec);
      const Matrix sem = align_embeddings(s.table, s.bank);
      TrainConfig cfg = toy_config(Variant::am3);
      cfg.model.feature_dim = 8;
      cfg.model.dist_scale = 8.0;
      cfg.model.prior_dropout = 0.0;
      cfg.shape = {5, 1, 10};
      cfg.epochs = 10;
      cfg.episodes_per_epoch = 50;
      cfg.val_episodes = 200;
      cfg.seed = seed;
      zero_wins += select_alpha(s.bank, sem, cfg, {0.0, 1.0}).alpha == 0.0 ? 1 : 0;
    }
    CHECK(zero_wins >= 3);
  }
  CHECK(default_alpha_grid().size() == 11);
  CHECK(default_alpha_grid()[3] == 0.3);
}

TEST_CASE("settings and config files") {
  TrainConfig cfg;
  apply_train_setting(cfg, "ways", "10");
  apply_train_setting(cfg, "noise", "true");
  apply_train_setting(cfg, "noise-prob", "0.25");
  apply_train_setting(cfg, "variant", "feat_att");
  CHECK(cfg.shape.ways == 10);
  CHECK(cfg.noise.enabled);
  CHECK(cfg.val_noise.noise_prob == 0.25);
  CHECK(cfg.variant == Variant::feat_att);
  CHECK_THROWS_AS(apply_train_setting(cfg, "wayz", "3"), ConfigError);
  CHECK_THROWS_AS(apply_train_setting(cfg, "ways", "3x"), ConfigError);
  CHECK_THROWS_AS(apply_train_setting(cfg, "noise", "maybe"), ConfigError);

  const auto path = semfsl::testing::temp_path("train.cfg");
  std::ofstream(path) << "# overrides\nways=15\nlr=0.1\nshots=5\n";
  apply_train_config_file(cfg, path);
  CHECK(cfg.shape.ways == 15);
  CHECK(cfg.shape.shots == 5);
  CHECK(cfg.lr == 0.1);
  CHECK_THROWS_AS(apply_train_config_file(cfg, semfsl::testing::temp_path("nope.cfg")), IoError);

  TrainConfig bad;
  bad.lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
