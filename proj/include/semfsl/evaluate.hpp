#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "semfsl/episode.hpp"
#include "semfsl/model.hpp"

namespace semfsl {

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

// Mean and 1.96 * sigma / sqrt(n), sigma the population standard deviation.
// Throws UsageError on an empty list.
ConfidenceInterval confidence_interval(std::span<const double> values);

struct EvalConfig {
  Variant variant = Variant::pn;
  EpisodeShape shape;
  int n_tasks = 10000;
  NoiseConfig noise;
  std::uint64_t seed = 0;
  // Worker threads; results do not depend on this.
  int threads = 1;
  bool keep_per_task = false;
};

struct EvalResult {
  double mean_accuracy = 0.0;  // percent
  double ci_half_width = 0.0;  // percent
  std::size_t n_tasks = 0;
  std::vector<double> per_task_accuracies;  // percent; empty unless kept
};

// Accuracy over n_tasks seeded episodes with frozen params in eval mode.
// `class_semantics` has one row per bank class (or zero columns for pn).
EvalResult evaluate(const BankView& view, const Matrix& class_semantics, const HeadParams& params,
                    const EvalConfig& config);

struct AttentionRecord {
  std::size_t task = 0;
  int cls = 0;
  int slot = 0;
  double weight = 0.0;
  bool noisy = false;
};

struct AttentionHistogram {
  double bin_width = 0.05;
  std::vector<std::size_t> clean;
  std::vector<std::size_t> noisy;

  std::size_t bins() const { return clean.size(); }
  double bin_low(std::size_t i) const;
};

struct AttentionReport {
  std::vector<AttentionRecord> records;
  AttentionHistogram histogram;
  std::size_t n_clean = 0;
  std::size_t n_noisy = 0;
  std::optional<double> mean_clean;
  std::optional<double> mean_noisy;
};

// Sample-attention weight of every support slot over n_tasks episodes,
// flagged noisy when its true class differs from the presented one. Bins
// cover [0, 1] with the given width; weight 1.0 falls in the last bin.
// Throws UsageError for variants without sample attention or shots < 2.
AttentionReport attention_report(const BankView& view, const Matrix& class_semantics,
                                 const HeadParams& params, const EvalConfig& config,
                                 double bin_width = 0.05);

// Runs fn(i) for i in [0, n) over `threads` workers, each taking a
// contiguous block. fn must only write state owned by index i.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace semfsl
