#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "semfsl/evaluate.hpp"
#include "semfsl/feature_bank.hpp"
#include "semfsl/model.hpp"

namespace semfsl {

// Validation episodes use this seed unless overridden, so model selection
// is comparable across runs and alpha grid points.
inline constexpr std::uint64_t kValidationSeed = 0x5EEDF00DULL;

struct TrainConfig {
  int epochs = 200;
  int episodes_per_epoch = 100;
  int val_episodes = 600;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int lr_halving_period = 40;  // epochs

  EpisodeShape shape{5, 1, 15};
  Variant variant = Variant::combined;
  NoiseConfig noise;
  // Noise applied to validation episodes; same as `noise` unless changed.
  NoiseConfig val_noise;
  ModelConfig model;

  std::uint64_t seed = 0;
  std::uint64_t val_seed = kValidationSeed;
  // false: every epoch replays the same episode indices.
  bool resample_each_epoch = true;
  int threads = 1;
  // When non-empty, the best checkpoint is written here on improvement.
  std::filesystem::path checkpoint_path;

  void validate() const;
};

// Applies one `key=value` setting (keys match the CLI flag names without
// dashes, e.g. "ways", "noise-prob"). Throws ConfigError on unknown keys or
// bad values.
void apply_train_setting(TrainConfig& cfg, std::string_view key, std::string_view value);
// Applies every setting in a key=value file ('#' comments allowed).
void apply_train_config_file(TrainConfig& cfg, const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_ci = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  std::string best_checkpoint;

  // One line per epoch plus a summary line.
  std::string to_text() const;
};

struct TrainResult {
  HeadParams params;  // best-validation params (initial params if no epochs)
  TrainLog log;
};

// lr * 2^-floor(epoch / period).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// Episodic training: one SGD step per sampled training episode, lr halved
// every lr_halving_period epochs, validation after each epoch, best
// params retained. Throws NumericError on a non-finite loss.
TrainResult train(const FeatureBank& bank, const Matrix& class_semantics, const TrainConfig& cfg);

// Eval-mode accuracy on the val split with cfg.val_seed.
EvalResult validate(const FeatureBank& bank, const Matrix& class_semantics,
                    const HeadParams& params, const TrainConfig& cfg);

struct AlphaSelection {
  double alpha = 0.0;
  std::vector<std::pair<double, double>> val_accuracy;  // (alpha, accuracy)
};

// Trains one model per grid value with the shared seed and returns the alpha
// of the best validation accuracy, ties to the smaller alpha.
AlphaSelection select_alpha(const FeatureBank& bank, const Matrix& class_semantics,
                            const TrainConfig& cfg, std::vector<double> grid);

std::vector<double> default_alpha_grid();

}  // namespace semfsl
