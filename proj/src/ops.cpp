#include "semfsl/ops.hpp"

#include <cmath>
#include <string>

#include "semfsl/errors.hpp"

namespace semfsl {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) +
                       " and " + shape_string(b));
}

void require_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw UsageError("operands recorded on different graphs");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch(op, av, bv);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  Graph& g = a.graph();
  return g.record(av * bv, {a, b}, [a, b](Graph& g, const Matrix& up) {
    if (g.needs_grad(a.id())) g.accumulate(a, up * b.value().transpose());
    if (g.needs_grad(b.id())) g.accumulate(b, a.value().transpose() * up);
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_same_graph(x, weight);
  require_same_graph(x, bias);
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (xv.cols() != wv.rows()) shape_mismatch("affine", xv, wv);
  if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_mismatch("affine bias", wv, bv);
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  Graph& g = x.graph();
  return g.record(std::move(out), {x, weight, bias},
                  [x, weight, bias](Graph& g, const Matrix& up) {
                    if (g.needs_grad(x.id())) g.accumulate(x, up * weight.value().transpose());
                    if (g.needs_grad(weight.id()))
                      g.accumulate(weight, x.value().transpose() * up);
                    if (g.needs_grad(bias.id())) g.accumulate(bias, up.colwise().sum());
                  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Graph& g = a.graph();
  return g.record(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    g.accumulate(b, up);
  });
}

Var scale(Var a, double factor) {
  Graph& g = a.graph();
  return g.record(factor * a.value(), {a},
                  [a, factor](Graph& g, const Matrix& up) { g.accumulate(a, factor * up); });
}

Var divide(Var a, double divisor) {
  Graph& g = a.graph();
  return g.record(a.value() / divisor, {a}, [a, divisor](Graph& g, const Matrix& up) {
    g.accumulate(a, up / divisor);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  Graph& g = a.graph();
  return g.record(a.value().cwiseProduct(b.value()), {a, b},
                  [a, b](Graph& g, const Matrix& up) {
                    if (g.needs_grad(a.id())) g.accumulate(a, up.cwiseProduct(b.value()));
                    if (g.needs_grad(b.id())) g.accumulate(b, up.cwiseProduct(a.value()));
                  });
}

Var mix(Var a, Var b, double factor) {
  require_same_shape("mix", a, b);
  const double rest = 1.0 - factor;
  Graph& g = a.graph();
  return g.record(factor * a.value() + rest * b.value(), {a, b},
                  [a, b, factor, rest](Graph& g, const Matrix& up) {
                    g.accumulate(a, factor * up);
                    g.accumulate(b, rest * up);
                  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Graph& g = a.graph();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& up) {
    g.accumulate(a, Matrix::Constant(a.rows(), a.cols(), up(0, 0)));
  });
}

Var relu(Var x) {
  Graph& g = x.graph();
  return g.record(x.value().cwiseMax(0.0), {x}, [x](Graph& g, const Matrix& up) {
    g.accumulate(x, (x.value().array() > 0.0).select(up, 0.0).matrix());
  });
}

Var dropout(Var x, double p, Mode mode, RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  const Matrix& xv = x.value();
  Matrix mask(xv.rows(), xv.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  // Row-major draw order so the mask is independent of storage order.
  for (Index r = 0; r < xv.rows(); ++r) {
    for (Index c = 0; c < xv.cols(); ++c) {
      mask(r, c) = rng.uniform() < p ? 0.0 : keep_scale;
    }
  }
  Matrix out = xv.cwiseProduct(mask);
  Graph& g = x.graph();
  return g.record(std::move(out), {x}, [x, mask = std::move(mask)](Graph& g, const Matrix& up) {
    g.accumulate(x, up.cwiseProduct(mask));
  });
}

Var softmax(Var x) {
  Matrix out = softmax_rows(x.value());
  Matrix y = out;
  Graph& g = x.graph();
  return g.record(std::move(out), {x}, [x, y = std::move(y)](Graph& g, const Matrix& up) {
    // dx_i = y_i * (up_i - sum_j up_j y_j), row by row.
    const Vector inner = up.cwiseProduct(y).rowwise().sum();
    g.accumulate(x, y.cwiseProduct(up - inner.replicate(1, up.cols())));
  });
}

Var reshape(Var x, Index rows, Index cols) {
  const Matrix& xv = x.value();
  if (rows * cols != xv.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(xv) + " as " +
                         shape_string(rows, cols));
  }
  const Index in_rows = xv.rows();
  const Index in_cols = xv.cols();
  Matrix out(rows, cols);
  for (Index i = 0; i < xv.size(); ++i) out(i / cols, i % cols) = xv(i / in_cols, i % in_cols);
  Graph& g = x.graph();
  return g.record(std::move(out), {x}, [x, in_rows, in_cols](Graph& g, const Matrix& up) {
    Matrix dx(in_rows, in_cols);
    const Index cols = up.cols();
    for (Index i = 0; i < dx.size(); ++i) dx(i / in_cols, i % in_cols) = up(i / cols, i % cols);
    g.accumulate(x, dx);
  });
}

Var repeat_rows(Var x, Index times) {
  if (times < 1) throw UsageError("repeat_rows: times must be positive");
  const Matrix& xv = x.value();
  Matrix out(xv.rows() * times, xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    out.middleRows(r * times, times) = xv.row(r).replicate(times, 1);
  }
  Graph& g = x.graph();
  return g.record(std::move(out), {x}, [x, times](Graph& g, const Matrix& up) {
    Matrix dx(x.rows(), x.cols());
    for (Index r = 0; r < dx.rows(); ++r) dx.row(r) = up.middleRows(r * times, times).colwise().sum();
    g.accumulate(x, dx);
  });
}

Var rowwise_dot(Var a, Var b) {
  require_same_shape("rowwise_dot", a, b);
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  Graph& g = a.graph();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& up) {
    const Vector col = up.col(0);
    if (g.needs_grad(a.id())) g.accumulate(a, b.value().array().colwise() * col.array());
    if (g.needs_grad(b.id())) g.accumulate(b, a.value().array().colwise() * col.array());
  });
}

Var group_mean(Var x, Index group) {
  const Matrix& xv = x.value();
  if (group < 1) throw UsageError("group_mean: empty group");
  if (xv.rows() % group != 0) {
    throw DimensionError("group_mean: " + std::to_string(xv.rows()) +
                         " rows do not split into groups of " + std::to_string(group));
  }
  const Index n = xv.rows() / group;
  Matrix out(n, xv.cols());
  const double count = static_cast<double>(group);
  for (Index c = 0; c < n; ++c) out.row(c) = xv.middleRows(c * group, group).colwise().sum() / count;
  Graph& g = x.graph();
  return g.record(std::move(out), {x}, [x, group, count](Graph& g, const Matrix& up) {
    Matrix dx(x.rows(), x.cols());
    for (Index c = 0; c < up.rows(); ++c) {
      dx.middleRows(c * group, group) = (up.row(c) / count).replicate(group, 1);
    }
    g.accumulate(x, dx);
  });
}

Var group_weighted_sum(Var weights, Var x) {
  require_same_graph(weights, x);
  const Matrix& wv = weights.value();
  const Matrix& xv = x.value();
  const Index n = wv.rows();
  const Index k = wv.cols();
  if (n * k != xv.rows()) shape_mismatch("group_weighted_sum", wv, xv);
  Matrix out = Matrix::Zero(n, xv.cols());
  for (Index c = 0; c < n; ++c) {
    for (Index j = 0; j < k; ++j) out.row(c) += wv(c, j) * xv.row(c * k + j);
  }
  Graph& g = x.graph();
  return g.record(std::move(out), {weights, x}, [weights, x, n, k](Graph& g, const Matrix& up) {
    if (g.needs_grad(weights.id())) {
      Matrix dw(n, k);
      const Matrix& xv = x.value();
      for (Index c = 0; c < n; ++c) {
        for (Index j = 0; j < k; ++j) dw(c, j) = up.row(c).dot(xv.row(c * k + j));
      }
      g.accumulate(weights, dw);
    }
    if (g.needs_grad(x.id())) {
      const Matrix& wv = weights.value();
      Matrix dx(n * k, up.cols());
      for (Index c = 0; c < n; ++c) {
        for (Index j = 0; j < k; ++j) dx.row(c * k + j) = wv(c, j) * up.row(c);
      }
      g.accumulate(x, dx);
    }
  });
}

Var sq_euclidean(Var a, Var b) {
  require_same_shape("sq_euclidean", a, b);
  if (a.rows() != 1) {
    throw DimensionError("sq_euclidean expects 1xD rows, got " + shape_string(a.value()));
  }
  Matrix out(1, 1);
  out(0, 0) = squared_distance(a.value(), b.value());
  Graph& g = a.graph();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& up) {
    const Matrix diff = 2.0 * up(0, 0) * (a.value() - b.value());
    if (g.needs_grad(a.id())) g.accumulate(a, diff);
    if (g.needs_grad(b.id())) g.accumulate(b, -diff);
  });
}

Var pairwise_sq_distance(Var x, Var centers, Var scales) {
  require_same_graph(x, centers);
  const Matrix& xv = x.value();
  const Matrix& cv = centers.value();
  if (xv.cols() != cv.cols()) shape_mismatch("pairwise_sq_distance", xv, cv);
  const bool scaled = scales.valid();
  if (scaled) require_same_shape("pairwise_sq_distance scales", centers, scales);
  const Index m = xv.rows();
  const Index n = cv.rows();

  // diff_c = scale_c .* X - center_c, an m x d block per class.
  auto class_diff = [scaled](const Matrix& xv, const Matrix& cv, const Matrix* sv, Index c) {
    Matrix diff = xv;
    if (scaled) diff.array().rowwise() *= sv->row(c).array();
    diff.rowwise() -= cv.row(c);
    return diff;
  };

  Matrix out(m, n);
  const Matrix* sv = scaled ? &scales.value() : nullptr;
  for (Index c = 0; c < n; ++c) out.col(c) = class_diff(xv, cv, sv, c).rowwise().squaredNorm();

  Graph& g = x.graph();
  Graph::BackwardFn fn = [x, centers, scales, scaled, class_diff](Graph& g, const Matrix& up) {
    const Matrix& xv = x.value();
    const Matrix& cv = centers.value();
    const Matrix* sv = scaled ? &scales.value() : nullptr;
    const bool want_x = g.needs_grad(x.id());
    const bool want_c = g.needs_grad(centers.id());
    const bool want_s = scaled && g.needs_grad(scales.id());
    Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
    Matrix dc = Matrix::Zero(cv.rows(), cv.cols());
    Matrix ds = Matrix::Zero(cv.rows(), cv.cols());
    for (Index c = 0; c < cv.rows(); ++c) {
      const Matrix diff = class_diff(xv, cv, sv, c);
      // Rows weighted by 2 * upstream(q, c).
      const Matrix weighted = diff.array().colwise() * (2.0 * up.col(c)).array();
      if (want_c) dc.row(c) = -weighted.colwise().sum();
      if (want_s) ds.row(c) = weighted.cwiseProduct(xv).colwise().sum();
      if (want_x) {
        if (scaled) {
          dx += (weighted.array().rowwise() * sv->row(c).array()).matrix();
        } else {
          dx += weighted;
        }
      }
    }
    if (want_x) g.accumulate(x, dx);
    if (want_c) g.accumulate(centers, dc);
    if (want_s) g.accumulate(scales, ds);
  };
  if (scaled) return g.record(std::move(out), {x, centers, scales}, std::move(fn));
  return g.record(std::move(out), {x, centers}, std::move(fn));
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(z));
  }
  std::vector<int> owned(labels.begin(), labels.end());
  for (int y : owned) {
    if (y < 0 || y >= z.cols()) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(z.cols()) + ")");
    }
  }
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) total += log_sum_exp(z.row(r)) - z(r, owned[r]);
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(z.rows());
  Graph& g = logits.graph();
  return g.record(std::move(out), {logits},
                  [logits, owned = std::move(owned)](Graph& g, const Matrix& up) {
                    Matrix d = softmax_rows(logits.value());
                    for (Index r = 0; r < d.rows(); ++r) d(r, owned[r]) -= 1.0;
                    g.accumulate(logits, d * (up(0, 0) / static_cast<double>(d.rows())));
                  });
}

Var cross_entropy(Var logits, int label) {
  const int labels[1] = {label};
  return cross_entropy(logits, std::span<const int>(labels));
}

}  // namespace semfsl
