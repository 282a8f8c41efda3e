#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "semfsl/autodiff.hpp"

namespace semfsl {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Heads with more coordinates than this are checked on a seeded random
  // subsample of `sample_coords` coordinates instead.
  std::size_t full_check_limit = 4096;
  std::size_t sample_coords = 256;
  std::uint64_t seed = 0;
  // A coordinate whose central difference straddles a kink (the two
  // one-sided slopes disagree by more than tol) passes when the analytic
  // value matches either one-sided slope within tol.
  bool allow_kinks = true;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t coords_checked = 0;
  // Coordinates accepted through the one-sided kink rule.
  std::size_t kinks = 0;
  // Worst relative error |analytic - numeric| / max(1, |analytic|).
  double worst_error = 0.0;
  std::string worst_param;
  Index worst_row = 0;
  Index worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  std::string diagnostic() const;
};

// Builds the loss on a fresh graph; called once for the analytic gradient
// and twice per checked coordinate.
using LossBuilder = std::function<Var(Graph&)>;

// Compares backward() gradients against central differences. Parameter
// values are restored afterwards and grads hold the analytic gradient.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace semfsl
