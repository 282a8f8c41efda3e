#include "semfsl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include "semfsl/optim.hpp"
#include "semfsl/rng.hpp"

namespace semfsl {

std::string GradCheckReport::diagnostic() const {
  std::ostringstream out;
  out.precision(17);
  out << (passed ? "ok" : "FAILED") << ": " << coords_checked << " coordinates";
  if (kinks > 0) out << " (" << kinks << " at kinks)";
  out << ", worst " << worst_error;
  if (!worst_param.empty()) {
    out << " at " << worst_param << "(" << worst_row << "," << worst_col
        << ") analytic=" << worst_analytic << " numeric=" << worst_numeric;
  }
  return out.str();
}

namespace {

double evaluate(const LossBuilder& loss) {
  Graph g;
  return loss(g).scalar();
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  const GradCheckOptions& options) {
  zero_grads(params);
  {
    Graph g;
    Var root = loss(g);
    g.backward(root);
  }

  // (parameter index, flat coordinate) pairs to check.
  std::vector<std::pair<std::size_t, Index>> coords;
  std::size_t total = 0;
  for (const Parameter* p : params) total += static_cast<std::size_t>(p->value.size());
  if (total <= options.full_check_limit) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (Index j = 0; j < params[i]->value.size(); ++j) coords.emplace_back(i, j);
    }
  } else {
    RngStream rng(options.seed, "gradcheck.subsample");
    const auto picks =
        rng.sample_without_replacement(total, std::min(total, options.sample_coords));
    for (std::size_t flat : picks) {
      std::size_t i = 0;
      while (flat >= static_cast<std::size_t>(params[i]->value.size())) {
        flat -= static_cast<std::size_t>(params[i]->value.size());
        ++i;
      }
      coords.emplace_back(i, static_cast<Index>(flat));
    }
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (const auto& [pi, flat] : coords) {
    Parameter& p = *params[pi];
    const Index row = flat / p.value.cols();
    const Index col = flat % p.value.cols();
    const double saved = p.value(row, col);
    p.value(row, col) = saved + options.eps;
    const double up = evaluate(loss);
    p.value(row, col) = saved - options.eps;
    const double down = evaluate(loss);
    p.value(row, col) = saved;

    double numeric = (up - down) / (2.0 * options.eps);
    const double analytic = p.grad(row, col);
    auto rel_error = [&](double n) {
      const double e = std::abs(analytic - n) / std::max(1.0, std::abs(analytic));
      return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
    };
    double err = rel_error(numeric);
    if (err > options.tol && options.allow_kinks) {
      const double centre = evaluate(loss);
      const double right = (up - centre) / options.eps;
      const double left = (centre - down) / options.eps;
      const double spread = std::abs(right - left) / std::max(1.0, std::abs(analytic));
      const double one_sided = std::min(rel_error(right), rel_error(left));
      if (spread > options.tol && one_sided <= options.tol) {
        ++report.kinks;
        err = one_sided;
        numeric = rel_error(right) <= rel_error(left) ? right : left;
      }
    }
    ++report.coords_checked;
    if (err > report.worst_error || report.worst_param.empty()) {
      report.worst_error = err;
      report.worst_param = p.name;
      report.worst_row = row;
      report.worst_col = col;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.worst_error <= options.tol;
  return report;
}

}  // namespace semfsl
