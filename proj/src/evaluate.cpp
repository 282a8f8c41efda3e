#include "semfsl/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "semfsl/errors.hpp"

namespace semfsl {

ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.empty()) throw UsageError("confidence_interval of an empty list");
  // Welford accumulation.
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  const double sigma = std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
  return {mean, 1.96 * sigma / std::sqrt(static_cast<double>(n))};
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const std::size_t block = (n + workers - 1) / workers;
    for (std::size_t start = 0; start < n; start += block) {
      pool.emplace_back([&, start] {
        try {
          for (std::size_t i = start; i < std::min(n, start + block); ++i) fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

EvalResult evaluate(const BankView& view, const Matrix& class_semantics, const HeadParams& params,
                    const EvalConfig& config) {
  if (config.n_tasks < 1) throw ConfigError("n_tasks must be positive");
  const EpisodeSource source(view, class_semantics, config.shape, config.noise, config.seed,
                             "eval");
  std::vector<double> acc(static_cast<std::size_t>(config.n_tasks));
  parallel_for(acc.size(), config.threads, [&](std::size_t t) {
    const Episode ep = source.task(t);
    const ScoreMatrix scores = episode_logits(ep, params, config.variant, Mode::eval);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < scores.predicted.size(); ++q) {
      correct += scores.predicted[q] == ep.query_true[q] ? 1 : 0;
    }
    acc[t] = scores.predicted.empty()
                 ? 0.0
                 : 100.0 * static_cast<double>(correct) / static_cast<double>(scores.predicted.size());
  });

  const ConfidenceInterval ci = confidence_interval(acc);
  EvalResult result;
  result.mean_accuracy = ci.mean;
  result.ci_half_width = ci.half_width;
  result.n_tasks = acc.size();
  if (config.keep_per_task) result.per_task_accuracies = std::move(acc);
  return result;
}

double AttentionHistogram::bin_low(std::size_t i) const {
  // Rounded so that e.g. 3 * 0.05 prints as 0.15.
  return std::round(static_cast<double>(i) * bin_width * 1e9) / 1e9;
}

AttentionReport attention_report(const BankView& view, const Matrix& class_semantics,
                                 const HeadParams& params, const EvalConfig& config,
                                 double bin_width) {
  if (!uses_sample_attention(config.variant)) {
    throw UsageError("attention report needs a sample-attention variant, got " +
                     std::string(variant_name(config.variant)));
  }
  if (config.shape.shots < 2) throw UsageError("attention report needs shots >= 2");
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw ConfigError("bin width must lie in (0, 1]");
  if (config.n_tasks < 1) throw ConfigError("n_tasks must be positive");

  const EpisodeSource source(view, class_semantics, config.shape, config.noise, config.seed,
                             "eval");
  const auto n_tasks = static_cast<std::size_t>(config.n_tasks);
  std::vector<std::vector<AttentionRecord>> per_task(n_tasks);
  parallel_for(n_tasks, config.threads, [&](std::size_t t) {
    const Episode ep = source.task(t);
    const ScoreMatrix scores = episode_logits(ep, params, config.variant, Mode::eval);
    for (int c = 0; c < ep.ways(); ++c) {
      for (int j = 0; j < ep.shots(); ++j) {
        per_task[t].push_back(
            {t, c, j, scores.attention(c, j), ep.is_noisy(ep.support_row(c, j))});
      }
    }
  });

  AttentionReport report;
  const auto bins = static_cast<std::size_t>(std::ceil(1.0 / bin_width - 1e-9));
  report.histogram.bin_width = bin_width;
  report.histogram.clean.assign(bins, 0);
  report.histogram.noisy.assign(bins, 0);
  double sum_clean = 0.0;
  double sum_noisy = 0.0;
  for (auto& task_records : per_task) {
    for (const AttentionRecord& r : task_records) {
      const auto bin = std::min(bins - 1, static_cast<std::size_t>(r.weight / bin_width));
      if (r.noisy) {
        ++report.histogram.noisy[bin];
        ++report.n_noisy;
        sum_noisy += r.weight;
      } else {
        ++report.histogram.clean[bin];
        ++report.n_clean;
        sum_clean += r.weight;
      }
      report.records.push_back(r);
    }
  }
  if (report.n_clean > 0) report.mean_clean = sum_clean / static_cast<double>(report.n_clean);
  if (report.n_noisy > 0) report.mean_noisy = sum_noisy / static_cast<double>(report.n_noisy);
  return report;
}

}  // namespace semfsl
