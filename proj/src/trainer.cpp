#include "semfsl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "semfsl/checkpoint.hpp"
#include "semfsl/errors.hpp"
#include "semfsl/optim.hpp"
#include "semfsl/report.hpp"

namespace semfsl {

void TrainConfig::validate() const {
  if (epochs < 0 || episodes_per_epoch < 1 || val_episodes < 1 || lr_halving_period < 1) {
    throw ConfigError("epochs >= 0 and episode counts / halving period >= 1 are required");
  }
  if (!(lr >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("lr, momentum and weight_decay must be >= 0");
  }
  if (noise.enabled) validate_noise(noise, shape.shots);
  if (val_noise.enabled) validate_noise(val_noise, shape.shots);
  model.validate();
}

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad value '" + std::string(text) + "' for '" + std::string(key) + "'");
  }
  return v;
}

bool parse_flag(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw ConfigError("bad boolean '" + std::string(text) + "' for '" + std::string(key) + "'");
}

}  // namespace

void apply_train_setting(TrainConfig& cfg, std::string_view key, std::string_view value) {
  auto as_int = [&] { return parse_value<int>(key, value); };
  auto as_double = [&] { return parse_value<double>(key, value); };
  if (key == "variant") {
    cfg.variant = parse_variant(value);
  } else if (key == "ways") {
    cfg.shape.ways = as_int();
  } else if (key == "shots") {
    cfg.shape.shots = as_int();
  } else if (key == "queries") {
    cfg.shape.queries = as_int();
  } else if (key == "alpha") {
    cfg.model.alpha = as_double();
  } else if (key == "dist-scale") {
    cfg.model.dist_scale = as_double();
  } else if (key == "epochs") {
    cfg.epochs = as_int();
  } else if (key == "episodes-per-epoch") {
    cfg.episodes_per_epoch = as_int();
  } else if (key == "val-episodes") {
    cfg.val_episodes = as_int();
  } else if (key == "lr") {
    cfg.lr = as_double();
  } else if (key == "momentum") {
    cfg.momentum = as_double();
  } else if (key == "weight-decay") {
    cfg.weight_decay = as_double();
  } else if (key == "lr-halving-period") {
    cfg.lr_halving_period = as_int();
  } else if (key == "seed") {
    cfg.seed = parse_value<std::uint64_t>(key, value);
  } else if (key == "val-seed") {
    cfg.val_seed = parse_value<std::uint64_t>(key, value);
  } else if (key == "noise") {
    cfg.noise.enabled = cfg.val_noise.enabled = parse_flag(key, value);
  } else if (key == "min-clean") {
    cfg.noise.min_clean = cfg.val_noise.min_clean = as_int();
  } else if (key == "noise-prob") {
    cfg.noise.noise_prob = cfg.val_noise.noise_prob = as_double();
  } else if (key == "attention-dim") {
    cfg.model.attention_dim = parse_value<Index>(key, value);
  } else if (key == "feature-attention-hidden") {
    cfg.model.feature_attention_hidden = parse_value<Index>(key, value);
  } else if (key == "prior-layers") {
    cfg.model.prior_layers = as_int();
  } else if (key == "prior-hidden") {
    cfg.model.prior_hidden = parse_value<Index>(key, value);
  } else if (key == "prior-dropout") {
    cfg.model.prior_dropout = as_double();
  } else if (key == "visual-dropout") {
    cfg.model.visual_dropout = as_double();
  } else if (key == "semantic-dropout") {
    cfg.model.semantic_dropout = as_double();
  } else if (key == "scale-prior-by-attention") {
    cfg.model.scale_prior_by_attention = parse_flag(key, value);
  } else if (key == "threads") {
    cfg.threads = as_int();
  } else if (key == "resample-each-epoch") {
    cfg.resample_each_epoch = parse_flag(key, value);
  } else {
    throw ConfigError("unknown training setting '" + std::string(key) + "'");
  }
}

void apply_train_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const auto settings = parse_report(in);
  for (const auto& [k, v] : settings) apply_train_setting(cfg, k, v);
}

std::string TrainLog::to_text() const {
  std::ostringstream out;
  for (const EpochLog& e : epochs) {
    out << "epoch=" << e.epoch << " train_loss=" << format_double(e.train_loss)
        << " val_acc=" << format_double(e.val_accuracy) << " val_ci95=" << format_double(e.val_ci)
        << " lr=" << format_double(e.lr) << '\n';
  }
  out << "best_epoch=" << best_epoch << " best_val_acc=" << format_double(best_val_accuracy)
      << " best_checkpoint=" << (best_checkpoint.empty() ? "-" : best_checkpoint) << '\n';
  return out.str();
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return std::ldexp(cfg.lr, -(epoch / cfg.lr_halving_period));
}

EvalResult validate(const FeatureBank& bank, const Matrix& class_semantics,
                    const HeadParams& params, const TrainConfig& cfg) {
  const BankView val = split_view(bank, Split::val);
  EvalConfig ec;
  ec.variant = cfg.variant;
  ec.shape = cfg.shape;
  ec.n_tasks = cfg.val_episodes;
  ec.noise = cfg.val_noise;
  ec.seed = cfg.val_seed;
  ec.threads = cfg.threads;
  return evaluate(val, class_semantics, params, ec);
}

namespace {

std::string norms_summary(const HeadParams& params) {
  std::ostringstream out;
  for (const Parameter* p : params.all()) out << ' ' << p->name << '=' << p->value.norm();
  return out.str();
}

}  // namespace

TrainResult train(const FeatureBank& bank, const Matrix& class_semantics, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result{HeadParams::init(cfg.model, cfg.seed), {}};
  if (cfg.epochs == 0) return result;

  const BankView train_view = split_view(bank, Split::train);
  if (train_view.empty()) throw ConfigError("feature bank has no train classes");
  if (split_view(bank, Split::val).empty()) throw ConfigError("feature bank has no val classes");

  HeadParams params = result.params;
  const std::vector<Parameter*> trainable = params.used_by(cfg.variant);
  const EpisodeSource source(train_view, class_semantics, cfg.shape, cfg.noise, cfg.seed, "train");
  const RngStream dropout_root(cfg.seed, "train.dropout");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    for (int i = 0; i < cfg.episodes_per_epoch; ++i) {
      const auto step =
          static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(cfg.episodes_per_epoch) +
          static_cast<std::uint64_t>(i);
      const Episode ep = source.task(cfg.resample_each_epoch ? step : static_cast<std::uint64_t>(i));
      RngStream dropout_rng = dropout_root.fork(step);

      zero_grads(trainable);
      Graph g;
      Var loss = episode_loss(g, ep, params, cfg.variant, Mode::train, dropout_rng);
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", episode " + std::to_string(i) + "; parameter norms:" +
                           norms_summary(params));
      }
      g.backward(loss);
      sgd_step(trainable, lr, cfg.momentum, cfg.weight_decay);
      loss_sum += value;
    }

    const EvalResult val = validate(bank, class_semantics, params, cfg);
    result.log.epochs.push_back(
        {epoch, loss_sum / cfg.episodes_per_epoch, val.mean_accuracy, val.ci_half_width, lr});
    if (result.log.best_epoch < 0 || val.mean_accuracy > result.log.best_val_accuracy) {
      result.log.best_epoch = epoch;
      result.log.best_val_accuracy = val.mean_accuracy;
      result.params = params;
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(Checkpoint{cfg.variant, cfg.seed, params}, cfg.checkpoint_path);
        result.log.best_checkpoint = cfg.checkpoint_path.string();
      } else {
        result.log.best_checkpoint = "epoch:" + std::to_string(epoch);
      }
    }
  }
  return result;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

AlphaSelection select_alpha(const FeatureBank& bank, const Matrix& class_semantics,
                            const TrainConfig& cfg, std::vector<double> grid) {
  if (grid.empty()) throw ConfigError("alpha grid is empty");
  for (double a : grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha grid values must lie in [0, 1]");
  }
  std::sort(grid.begin(), grid.end());
  AlphaSelection out;
  double best = -1.0;
  for (double a : grid) {
    TrainConfig c = cfg;
    c.model.alpha = a;
    c.checkpoint_path.clear();
    const TrainResult r = train(bank, class_semantics, c);
    const double acc = r.log.best_epoch >= 0
                           ? r.log.best_val_accuracy
                           : validate(bank, class_semantics, r.params, c).mean_accuracy;
    out.val_accuracy.emplace_back(a, acc);
    if (acc > best) {
      best = acc;
      out.alpha = a;
    }
  }
  return out;
}

}  // namespace semfsl
