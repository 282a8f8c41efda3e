// Command-line front end: bank synthesis, training, evaluation, attention
// reports and the gradient-check suite.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "semfsl/checkpoint.hpp"
#include "semfsl/embeddings.hpp"
#include "semfsl/errors.hpp"
#include "semfsl/evaluate.hpp"
#include "semfsl/model_gradcheck.hpp"
#include "semfsl/report.hpp"
#include "semfsl/synth.hpp"
#include "semfsl/trainer.hpp"

namespace fs = std::filesystem;
using namespace semfsl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;

constexpr const char* kCiNote =
    "ci95 = 1.96 * population standard deviation of per-task accuracy / sqrt(n_tasks)";

// Bank and embedding inputs shared by train and the eval commands.
struct DataOptions {
  std::string bank;
  std::string embeddings;
  bool unit_norm = false;
};

struct LoadedData {
  FeatureBank bank;
  std::optional<EmbeddingTable> table;
  Matrix semantics;
};

void add_data_options(CLI::App& cmd, DataOptions& d) {
  cmd.add_option("--bank", d.bank, "feature bank (.fbnk)")->required();
  cmd.add_option("--embeddings", d.embeddings, "word-vector text file");
  cmd.add_flag("--unit-norm-embeddings", d.unit_norm, "L2-normalize class embeddings");
}

LoadedData load_data(const DataOptions& d) {
  LoadedData out;
  out.bank = load_bank(d.bank);
  if (!d.embeddings.empty()) {
    out.table = load_word_vectors(d.embeddings);
    out.semantics = align_embeddings(*out.table, out.bank, d.unit_norm);
  }
  return out;
}

void require_semantics(const LoadedData& data, Variant variant) {
  if (uses_semantics(variant) && !data.table) {
    throw ConfigError("variant '" + std::string(variant_name(variant)) +
                      "' needs --embeddings");
  }
}

Index embedding_dim(const LoadedData& data) { return data.table ? data.table->dim : 0; }

void emit(const Report& report, const std::string& path) {
  report.write(std::cout);
  if (!path.empty()) report.save(path);
}

// ---------------------------------------------------------------- bank synth

struct SynthOptions {
  SynthSpec spec;
  std::string out;
  std::string embeddings_out;
  std::string report;
};

void setup_synth(CLI::App& bank, SynthOptions& o) {
  CLI::App* cmd = bank.add_subcommand("synth", "generate a synthetic feature bank");
  SynthSpec& s = o.spec;
  cmd->add_option("--out", o.out, "output bank path")->required();
  cmd->add_option("--embeddings-out", o.embeddings_out, "write class embeddings here");
  cmd->add_option("--seed", s.seed)->capture_default_str();
  cmd->add_option("--classes", s.n_classes)->capture_default_str();
  cmd->add_option("--samples", s.samples_per_class)->capture_default_str();
  cmd->add_option("--feature-dim", s.feature_dim)->capture_default_str();
  cmd->add_option("--embedding-dim", s.embedding_dim)->capture_default_str();
  cmd->add_option("--mean-scale", s.class_mean_scale)->capture_default_str();
  cmd->add_option("--latent-dim", s.latent_dim, "rank of the class-mean subspace (0: full)")
      ->capture_default_str();
  cmd->add_option("--within-std", s.within_class_std)->capture_default_str();
  cmd->add_option("--semantic-noise", s.semantic_noise_std)->capture_default_str();
  cmd->add_option("--outlier-frac", s.outlier_fraction)->capture_default_str();
  cmd->add_option("--outlier-std", s.outlier_std)->capture_default_str();
  cmd->add_option("--train-frac", s.train_fraction)->capture_default_str();
  cmd->add_option("--val-frac", s.val_fraction)->capture_default_str();
  cmd->add_option("--report", o.report, "key=value report path");
  cmd->callback([&o] {
    const SynthResult r = synth_generate(o.spec);
    save_bank(r.bank, o.out);
    if (!o.embeddings_out.empty()) save_word_vectors(r.table, o.embeddings_out);
    Report rep;
    rep.set("bank.classes", static_cast<std::uint64_t>(r.bank.classes.size()));
    rep.set("bank.samples", static_cast<std::uint64_t>(r.bank.total_samples()));
    rep.set("bank.feature_dim", std::uint64_t{r.bank.feature_dim});
    for (Split sp : {Split::train, Split::val, Split::test}) {
      rep.set("bank.split." + std::string(split_name(sp)),
              static_cast<std::uint64_t>(split_view(r.bank, sp).size()));
    }
    emit(rep, o.report);
  });
}

// --------------------------------------------------------------------- train

struct TrainOptions {
  DataOptions data;
  TrainConfig cfg;
  std::string variant = "combined";
  bool noise = false;
  std::string out;
  std::string config;
  std::string log;
  std::string report;
};

void setup_train(CLI::App& app, TrainOptions& o) {
  CLI::App* cmd = app.add_subcommand("train", "episodic training");
  TrainConfig& c = o.cfg;
  add_data_options(*cmd, o.data);
  cmd->add_option("--variant", o.variant, "pn|am3|sample_att|feat_att|combined")
      ->capture_default_str();
  cmd->add_option("--ways", c.shape.ways)->capture_default_str();
  cmd->add_option("--shots", c.shape.shots)->capture_default_str();
  cmd->add_option("--queries", c.shape.queries)->capture_default_str();
  cmd->add_option("--alpha", c.model.alpha)->capture_default_str();
  cmd->add_option("--dist-scale", c.model.dist_scale)->capture_default_str();
  cmd->add_option("--epochs", c.epochs)->capture_default_str();
  cmd->add_option("--episodes-per-epoch", c.episodes_per_epoch)->capture_default_str();
  cmd->add_option("--val-episodes", c.val_episodes)->capture_default_str();
  cmd->add_option("--lr", c.lr)->capture_default_str();
  cmd->add_option("--momentum", c.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay)->capture_default_str();
  cmd->add_option("--lr-halving-period", c.lr_halving_period)->capture_default_str();
  cmd->add_option("--seed", c.seed)->capture_default_str();
  cmd->add_flag("--noise", o.noise, "corrupt support slots with cross-class samples");
  cmd->add_option("--min-clean", c.noise.min_clean)->capture_default_str();
  cmd->add_option("--noise-prob", c.noise.noise_prob)->capture_default_str();
  cmd->add_option("--threads", c.threads)->capture_default_str();
  cmd->add_option("--out", o.out, "best checkpoint path");
  cmd->add_option("--config", o.config, "key=value settings; overrides flags");
  cmd->add_option("--log", o.log, "write the per-epoch log here");
  cmd->add_option("--report", o.report, "key=value report path");
  cmd->callback([&o] {
    TrainConfig cfg = o.cfg;
    cfg.variant = parse_variant(o.variant);
    cfg.noise.enabled = o.noise;
    cfg.val_noise = cfg.noise;
    if (!o.config.empty()) apply_train_config_file(cfg, o.config);
    cfg.checkpoint_path = o.out;

    const LoadedData data = load_data(o.data);
    require_semantics(data, cfg.variant);
    cfg.model.feature_dim = data.bank.feature_dim;
    cfg.model.embedding_dim = embedding_dim(data);

    const TrainResult r = train(data.bank, data.semantics, cfg);
    const std::string text = r.log.to_text();
    std::cerr << text;
    if (!o.log.empty()) {
      std::ofstream log(o.log);
      if (!(log << text)) throw IoError("cannot write log " + o.log);
    }
    Report rep;
    rep.set_text("train.variant", std::string(variant_name(cfg.variant)));
    rep.set("train.epochs", static_cast<std::uint64_t>(r.log.epochs.size()));
    rep.set("train.best_epoch", r.log.best_epoch);
    rep.set("train.best_val_acc", r.log.best_val_accuracy);
    for (const EpochLog& e : r.log.epochs) {
      const std::string prefix = "train.epoch." + std::to_string(e.epoch);
      rep.set(prefix + ".loss", e.train_loss);
      rep.set(prefix + ".val_acc", e.val_accuracy);
      rep.set(prefix + ".lr", e.lr);
    }
    emit(rep, o.report);
  });
}

// ------------------------------------------------- eval / noisy-eval / attention

struct EvalOptions {
  DataOptions data;
  std::string checkpoint;
  std::string variant;
  std::optional<double> alpha;
  std::optional<double> dist_scale;
  EvalConfig cfg;
  std::string split = "test";
  std::uint64_t init_seed = 0;
  bool noise = false;
  double bin_width = 0.05;
  std::string report;
};

void add_eval_options(CLI::App& cmd, EvalOptions& o) {
  add_data_options(cmd, o.data);
  cmd.add_option("--checkpoint", o.checkpoint, "trained heads (default: untrained)");
  cmd.add_option("--variant", o.variant, "defaults to the checkpoint's variant, else pn");
  cmd.add_option("--alpha", o.alpha);
  cmd.add_option("--dist-scale", o.dist_scale);
  cmd.add_option("--init-seed", o.init_seed, "initialization seed without a checkpoint");
  cmd.add_option("--ways", o.cfg.shape.ways)->capture_default_str();
  cmd.add_option("--shots", o.cfg.shape.shots)->capture_default_str();
  cmd.add_option("--queries", o.cfg.shape.queries)->capture_default_str();
  cmd.add_option("--tasks", o.cfg.n_tasks)->capture_default_str();
  cmd.add_option("--seed", o.cfg.seed, "episode seed")->capture_default_str();
  cmd.add_option("--split", o.split, "train|val|test")->capture_default_str();
  cmd.add_option("--min-clean", o.cfg.noise.min_clean)->capture_default_str();
  cmd.add_option("--noise-prob", o.cfg.noise.noise_prob)->capture_default_str();
  cmd.add_option("--threads", o.cfg.threads)->capture_default_str();
  cmd.add_option("--report", o.report, "key=value report path");
}

struct EvalSetup {
  LoadedData data;
  HeadParams params;
  EvalConfig cfg;
};

EvalSetup prepare_eval(const EvalOptions& o) {
  EvalSetup s{load_data(o.data), {}, o.cfg};
  Variant variant = Variant::pn;
  if (!o.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(o.checkpoint);
    variant = ck.variant;
    s.params = std::move(ck.params);
  } else {
    ModelConfig mc;
    mc.feature_dim = s.data.bank.feature_dim;
    mc.embedding_dim = embedding_dim(s.data);
    s.params = HeadParams::init(mc, o.init_seed);
  }
  if (!o.variant.empty()) variant = parse_variant(o.variant);
  if (o.alpha) s.params.config.alpha = *o.alpha;
  if (o.dist_scale) s.params.config.dist_scale = *o.dist_scale;
  s.params.config.validate();
  require_semantics(s.data, variant);
  s.cfg.variant = variant;
  s.cfg.noise.enabled = o.noise;
  return s;
}

void report_eval_header(Report& rep, const EvalConfig& cfg) {
  rep.comment(kCiNote);
  rep.set_text("eval.variant", std::string(variant_name(cfg.variant)));
  rep.set("eval.ways", cfg.shape.ways);
  rep.set("eval.shots", cfg.shape.shots);
  rep.set("eval.queries", cfg.shape.queries);
  rep.set("eval.noise", cfg.noise.enabled ? 1 : 0);
}

void run_eval(const EvalOptions& o) {
  const EvalSetup s = prepare_eval(o);
  const BankView view = split_view(s.data.bank, parse_split(o.split));
  const EvalResult r = evaluate(view, s.data.semantics, s.params, s.cfg);
  Report rep;
  report_eval_header(rep, s.cfg);
  rep.set("eval.n_tasks", static_cast<std::uint64_t>(r.n_tasks));
  rep.set("eval.mean_acc", r.mean_accuracy);
  rep.set("eval.ci95", r.ci_half_width);
  emit(rep, o.report);
}

void setup_eval(CLI::App& app, EvalOptions& o, bool noisy) {
  CLI::App* cmd = noisy ? app.add_subcommand("noisy-eval", "accuracy on noisy-support tasks")
                        : app.add_subcommand("eval", "accuracy with a 95% confidence interval");
  if (noisy) {
    o.noise = true;
    o.cfg.shape.shots = 5;
  }
  add_eval_options(*cmd, o);
  cmd->callback([&o] { run_eval(o); });
}

void setup_attention(CLI::App& app, EvalOptions& o) {
  CLI::App* cmd =
      app.add_subcommand("attention-report", "sample-attention weights on clean vs noisy slots");
  o.noise = true;
  o.cfg.shape.shots = 5;
  o.cfg.n_tasks = 100;
  o.variant = "sample_att";
  add_eval_options(*cmd, o);
  cmd->add_option("--bin-width", o.bin_width)->capture_default_str();
  cmd->callback([&o] {
    const EvalSetup s = prepare_eval(o);
    const BankView view = split_view(s.data.bank, parse_split(o.split));
    const AttentionReport r = attention_report(view, s.data.semantics, s.params, s.cfg, o.bin_width);
    Report rep;
    report_eval_header(rep, s.cfg);
    rep.set("attn.n_tasks", s.cfg.n_tasks);
    rep.set("attn.n_clean", static_cast<std::uint64_t>(r.n_clean));
    rep.set("attn.n_noisy", static_cast<std::uint64_t>(r.n_noisy));
    if (r.mean_clean) rep.set("attn.mean_clean", *r.mean_clean);
    if (r.mean_noisy) rep.set("attn.mean_noisy", *r.mean_noisy);
    for (std::size_t b = 0; b < r.histogram.bins(); ++b) {
      const std::string low = format_double(r.histogram.bin_low(b));
      rep.set("attn.hist.clean." + low, static_cast<std::uint64_t>(r.histogram.clean[b]));
      rep.set("attn.hist.noisy." + low, static_cast<std::uint64_t>(r.histogram.noisy[b]));
    }
    emit(rep, o.report);
  });
}

// ----------------------------------------------------------------- gradcheck

struct GradOptions {
  std::uint64_t seed = 0;
  int instances = 100;
  std::string report;
};

void setup_gradcheck(CLI::App& app, GradOptions& o, int& status) {
  CLI::App* cmd = app.add_subcommand(
      "gradcheck", "central-difference check of every head and the combined loss");
  cmd->add_option("--seed", o.seed)->capture_default_str();
  cmd->add_option("--instances", o.instances)->capture_default_str();
  cmd->add_option("--report", o.report, "key=value report path");
  cmd->callback([&o, &status] {
    if (o.instances < 1) throw ConfigError("--instances must be positive");
    const ModelGradCheckSummary s = run_model_gradcheck(o.seed, o.instances);
    std::cerr << s.to_text();
    Report rep;
    rep.set("gradcheck.instances", o.instances);
    rep.set("gradcheck.passed", s.passed() ? 1 : 0);
    for (const auto& [name, e] : s.checks) {
      rep.set("gradcheck." + name + ".failures", static_cast<std::uint64_t>(e.failures));
      rep.set("gradcheck." + name + ".worst_error", e.worst.worst_error);
    }
    emit(rep, o.report);
    if (!s.passed()) status = kExitConfig;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantics-driven few-shot classification over precomputed features"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CLI::App* bank = app.add_subcommand("bank", "feature bank utilities");
  bank->require_subcommand(1);
  SynthOptions synth;
  setup_synth(*bank, synth);
  TrainOptions train_opts;
  setup_train(app, train_opts);
  EvalOptions eval_opts, noisy_opts, attn_opts;
  setup_eval(app, eval_opts, false);
  setup_eval(app, noisy_opts, true);
  setup_attention(app, attn_opts);
  GradOptions grad;
  int status = kExitOk;
  setup_gradcheck(app, grad, status);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return status;
}
