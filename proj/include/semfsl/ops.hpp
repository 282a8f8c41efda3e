#pragma once

#include <span>

#include "semfsl/autodiff.hpp"
#include "semfsl/rng.hpp"

namespace semfsl {

enum class Mode { train, eval };

// Differentiable operations on Graph nodes. Vectors are 1xN rows; batches
// stack one sample per row. Every op throws DimensionError naming both
// shapes when its operands do not conform.

Var matmul(Var a, Var b);
// Row i of the result is x_i * weight + bias; bias is 1xN.
Var affine(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var scale(Var a, double factor);
Var divide(Var a, double divisor);
Var hadamard(Var a, Var b);
// factor * a + (1 - factor) * b.
Var mix(Var a, Var b, double factor);
Var sum(Var a);

Var relu(Var x);
// Inverted dropout: in train mode each element is zeroed with probability p
// and survivors are scaled by 1/(1-p); eval mode is the identity. Throws
// ConfigError unless 0 <= p < 1.
Var dropout(Var x, double p, Mode mode, RngStream& rng);
// Max-shifted softmax of each row.
Var softmax(Var x);

// Row-major reinterpretation into rows x cols.
Var reshape(Var x, Index rows, Index cols);
// Each row repeated `times` times consecutively.
Var repeat_rows(Var x, Index times);
// Per-row inner product; result is Mx1.
Var rowwise_dot(Var a, Var b);
// Mean over consecutive blocks of `group` rows: (n*group)xD -> nxD.
Var group_mean(Var x, Index group);
// Row c of the result is sum_j weights(c, j) * x(c*k + j); weights is nxk.
Var group_weighted_sum(Var weights, Var x);

// Squared Euclidean distance between two 1xD rows; result is 1x1.
Var sq_euclidean(Var a, Var b);
// D(q, c) = || scale_c .* x_q - centers_c ||^2. Pass an invalid Var for
// `scales` to use all-ones.
Var pairwise_sq_distance(Var x, Var centers, Var scales = Var());
// Mean over rows of -log softmax(logits row)[label]. Throws IndexError for
// labels outside [0, cols).
Var cross_entropy(Var logits, std::span<const int> labels);
Var cross_entropy(Var logits, int label);

}  // namespace semfsl
